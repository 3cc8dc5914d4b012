"""
Dataset ingestion: CIFAR-10/100 binary batches and a deterministic
synthetic blob dataset for fast experiments.

CIFAR-10 record: 1 label byte + 3072 pixel bytes (1024 red, 1024 green,
1024 blue, row-major 32x32). CIFAR-100 records carry a coarse and a fine
label byte before the pixels. Pixels are scaled to [0, 1] by /255.

The "binary" dataset kind reads files in the CIFAR-10 layout without the
standard file count and size checks (gen-data output, small fixtures).
"""

import glob
import logging
import os
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np
from matplotlib.colors import hsv_to_rgb

import config
from exceptions import ConfigError, DatasetFormatError
from run_dtos import DataConfig

logger = logging.getLogger(__name__)

IMAGE_SHAPE = (3, 32, 32)
PIXEL_BYTES = 3 * 32 * 32
RECORDS_PER_FILE = 10000
CIFAR10_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR10_TEST_FILE = "test_batch.bin"


@dataclass
class Dataset:
    """Images (n, 3, H, W) in [0, 1] with integer labels"""
    images: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DatasetFormatError(
                f"{len(self.images)} images but {len(self.labels)} labels in dataset '{self.name}'"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DatasetFormatError(f"labels of '{self.name}' fall outside [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, limit: Optional[int]) -> 'Dataset':
        """First `limit` records (all when limit is None)."""
        if limit is None or limit >= len(self):
            return self
        return Dataset(self.images[:limit], self.labels[:limit], self.class_count, self.name)


def _read_records(path: str, label_bytes: int, label_index: int,
                  records: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Pixels and labels of one record file; `records` pins the exact record count."""
    record = label_bytes + PIXEL_BYTES
    size = os.path.getsize(path)
    if records is not None and size != records * record:
        raise DatasetFormatError(
            f"{path}: {size} bytes, expected {records * record} bytes ({records} records of {record} bytes)"
        )
    if size == 0 or size % record:
        raise DatasetFormatError(
            f"{path}: {size} bytes is not a whole number of {record}-byte records "
            f"(expected {RECORDS_PER_FILE * record} bytes for a standard batch file)"
        )
    raw = np.fromfile(path, dtype=np.uint8).reshape(-1, record)
    labels = raw[:, label_index].astype(np.int64)
    pixels = raw[:, label_bytes:].reshape((-1,) + IMAGE_SHAPE)
    return pixels, labels


def _resolve_dir(data_dir: str, subdir: str) -> str:
    nested = os.path.join(data_dir, subdir)
    return nested if os.path.isdir(nested) else data_dir


def load_cifar10(data_dir: str, split: str = "train", limit: Optional[int] = None,
                 strict: bool = True) -> Dataset:
    """
    Read the CIFAR-10 binary batches.

    Args:
        data_dir: directory holding data_batch_*.bin / test_batch.bin
            (or its parent containing cifar-10-batches-bin/)
        split: "train" or "test"
        limit: keep only the first `limit` records
        strict: require the standard files (data_batch_1..5.bin for train,
            test_batch.bin for test) at exactly 10,000 records each; when off,
            any data_batch_*.bin files with a whole number of records are read

    Raises:
        DatasetFormatError: missing files or wrong file length
    """
    if split not in ("train", "test"):
        raise ConfigError(f"split must be 'train' or 'test', got '{split}'")
    root = _resolve_dir(data_dir, "cifar-10-batches-bin")
    if strict:
        names = CIFAR10_TRAIN_FILES if split == "train" else [CIFAR10_TEST_FILE]
        paths = [os.path.join(root, name) for name in names]
        missing = [name for name, p in zip(names, paths) if not os.path.exists(p)]
        if missing:
            raise DatasetFormatError(f"CIFAR-10 {split} files missing from {root}: {', '.join(missing)}")
        records = RECORDS_PER_FILE
    else:
        if split == "train":
            paths = sorted(glob.glob(os.path.join(root, "data_batch_*.bin")))
        else:
            paths = [os.path.join(root, CIFAR10_TEST_FILE)]
        paths = [p for p in paths if os.path.exists(p)]
        if not paths:
            raise DatasetFormatError(f"no CIFAR-10 {split} files found in {root}")
        records = None
    pixels, labels = zip(*(_read_records(p, 1, 0, records) for p in paths))
    dataset = Dataset(
        images=np.concatenate(pixels).astype(np.float32) / 255.0,
        labels=np.concatenate(labels),
        class_count=10,
        name=f"cifar10-{split}",
    ).subset(limit)
    logger.info(f"✅ Loaded {len(dataset)} CIFAR-10 {split} images from {root}")
    return dataset


def load_cifar100(data_dir: str, split: str = "train", limit: Optional[int] = None,
                  coarse: bool = False) -> Dataset:
    """Read CIFAR-100 train.bin / test.bin (fine labels unless coarse is set)."""
    if split not in ("train", "test"):
        raise ConfigError(f"split must be 'train' or 'test', got '{split}'")
    root = _resolve_dir(data_dir, "cifar-100-binary")
    path = os.path.join(root, f"{split}.bin")
    if not os.path.exists(path):
        raise DatasetFormatError(f"CIFAR-100 file not found: {path}")
    pixels, labels = _read_records(path, 2, 0 if coarse else 1)
    dataset = Dataset(
        images=pixels.astype(np.float32) / 255.0,
        labels=labels,
        class_count=20 if coarse else 100,
        name=f"cifar100-{split}",
    ).subset(limit)
    logger.info(f"✅ Loaded {len(dataset)} CIFAR-100 {split} images from {root}")
    return dataset


def save_cifar_batch(path: str, dataset: Dataset, coarse_labels: Optional[np.ndarray] = None) -> str:
    """
    Write a dataset in the binary record format (CIFAR-100 layout when
    coarse_labels is given). Pixels are quantized with round(x * 255).
    """
    if dataset.images.shape[1:] != IMAGE_SHAPE:
        raise DatasetFormatError(f"binary format stores {IMAGE_SHAPE} images, got {dataset.images.shape[1:]}")
    pixels = np.clip(np.rint(dataset.images * 255.0), 0, 255).astype(np.uint8).reshape(len(dataset), -1)
    label_cols = [dataset.labels.astype(np.uint8)[:, None]]
    if coarse_labels is not None:
        label_cols.insert(0, np.asarray(coarse_labels, dtype=np.uint8)[:, None])
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    np.concatenate(label_cols + [pixels], axis=1).tofile(path)
    return path


def gen_synthetic(classes: int, per_class: int, seed: int, size: int = 32) -> Dataset:
    """
    Render Gaussian colour blobs: one base hue and blob centre per class,
    per-image jitter of sigma, centre and hue, on a uniform noise floor.
    """
    if classes < 2:
        raise ConfigError(f"synthetic dataset needs at least 2 classes, got {classes}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    mid = (size - 1) / 2.0
    radius = size / 4.0
    images = np.empty((classes * per_class, 3, size, size), dtype=np.float32)
    labels = np.repeat(np.arange(classes), per_class)
    for c in range(classes):
        angle = 2 * np.pi * c / classes
        base = (mid + radius * np.sin(angle), mid + radius * np.cos(angle))
        for n in range(per_class):
            sigma = config.SYNTH_SIGMA * (1 + rng.uniform(-config.SYNTH_SIGMA_JITTER, config.SYNTH_SIGMA_JITTER))
            cy, cx = np.asarray(base) + rng.uniform(-config.SYNTH_CENTER_JITTER, config.SYNTH_CENTER_JITTER, 2)
            hue = np.mod(c / classes + rng.uniform(-config.SYNTH_HUE_JITTER, config.SYNTH_HUE_JITTER), 1.0)
            colour = hsv_to_rgb(np.array([hue, 1.0, 1.0]))
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
            noise = rng.uniform(0.0, config.SYNTH_NOISE, (3, size, size))
            images[c * per_class + n] = np.clip(noise + blob[None] * colour[:, None, None], 0.0, 1.0)
    return Dataset(images, labels, classes, name=f"synthetic-{classes}x{per_class}-s{seed}")


def epoch_batches(n_items: int, n_origins: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Seeded permutation of one epoch cut into full batches; the ragged tail is dropped."""
    if n_origins > n_items:
        raise ConfigError(f"batch of {n_origins} origins exceeds dataset size {n_items}")
    order = rng.permutation(n_items)
    full = n_items // n_origins
    return [order[b * n_origins:(b + 1) * n_origins] for b in range(full)]


def batch_origins(dataset: Dataset, n_origins: int, rng: np.random.Generator) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield (indices, images) for every full batch of one epoch."""
    for indices in epoch_batches(len(dataset), n_origins, rng):
        yield indices, dataset.images[indices]


def load_dataset(cfg: DataConfig, seed: int) -> Tuple[Dataset, Dataset]:
    """Train and test splits for a run."""
    if cfg.dataset == "synthetic":
        test_per_class = cfg.test_per_class or max(1, cfg.per_class // 4)
        train = gen_synthetic(cfg.classes, cfg.per_class, seed)
        test = gen_synthetic(cfg.classes, test_per_class, seed + 1_000_003)
    elif cfg.dataset in ("cifar10", "binary"):
        strict = cfg.dataset == "cifar10"
        train = load_cifar10(cfg.data_dir or config.DATA_DIR, "train", cfg.train_limit, strict)
        test = load_cifar10(cfg.data_dir or config.DATA_DIR, "test", cfg.test_limit, strict)
    else:
        train = load_cifar100(cfg.data_dir or config.DATA_DIR, "train", cfg.train_limit)
        test = load_cifar100(cfg.data_dir or config.DATA_DIR, "test", cfg.test_limit)
    return train.subset(cfg.train_limit), test.subset(cfg.test_limit)
