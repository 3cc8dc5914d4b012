"""
Tests for dataset ingestion (data.py)
"""

import os

import numpy as np
import pytest

from data import (
    PIXEL_BYTES,
    Dataset,
    batch_origins,
    epoch_batches,
    gen_synthetic,
    load_cifar10,
    load_cifar100,
    load_dataset,
    save_cifar_batch,
)
from exceptions import ConfigError, DatasetFormatError
from run_dtos import DataConfig


def write_records(path, labels, label_bytes=1):
    """Hand-built record file: pixel byte p of record r is (r + p) % 256."""
    rows = []
    for r, label in enumerate(labels):
        head = np.asarray(label, dtype=np.uint8).reshape(label_bytes)
        pixels = ((r + np.arange(PIXEL_BYTES)) % 256).astype(np.uint8)
        rows.append(np.concatenate([head, pixels]))
    np.stack(rows).tofile(path)
    return path


def test_cifar10_fixture_values(tmp_path):
    write_records(tmp_path / "data_batch_1.bin", [7, 2, 9])
    write_records(tmp_path / "test_batch.bin", [1])
    train = load_cifar10(str(tmp_path), "train", strict=False)
    assert len(train) == 3
    assert train.class_count == 10
    np.testing.assert_array_equal(train.labels, [7, 2, 9])
    assert train.images.shape == (3, 3, 32, 32)
    # channel-major, row-major: green plane starts at byte 1024
    assert train.images[0, 0, 0, 1] == pytest.approx(1 / 255)
    assert train.images[0, 1, 0, 0] == pytest.approx((1024 % 256) / 255)
    assert train.images[1, 2, 31, 31] == pytest.approx(((1 + 3071) % 256) / 255)
    assert len(load_cifar10(str(tmp_path), "test", strict=False)) == 1


def test_cifar10_wrong_length_names_file_and_size(tmp_path):
    path = tmp_path / "data_batch_1.bin"
    path.write_bytes(b"\x00" * 3072)
    with pytest.raises(DatasetFormatError) as excinfo:
        load_cifar10(str(tmp_path), "train", strict=False)
    assert "data_batch_1.bin" in str(excinfo.value)
    assert "30730000" in str(excinfo.value)


def test_cifar10_missing_files(tmp_path):
    with pytest.raises(DatasetFormatError):
        load_cifar10(str(tmp_path), "test")
    with pytest.raises(ConfigError):
        load_cifar10(str(tmp_path), "validation")


def test_cifar10_needs_all_five_train_batches(tmp_path):
    write_records(tmp_path / "data_batch_1.bin", list(range(10)))
    with pytest.raises(DatasetFormatError) as excinfo:
        load_cifar10(str(tmp_path), "train")
    message = str(excinfo.value)
    assert "data_batch_2.bin" in message and "data_batch_5.bin" in message
    assert "data_batch_1.bin" not in message.split("missing")[-1]


def test_cifar10_short_batch_file_names_expected_bytes(tmp_path):
    for i in range(1, 6):
        write_records(tmp_path / f"data_batch_{i}.bin", [i] * 10)
    with pytest.raises(DatasetFormatError) as excinfo:
        load_cifar10(str(tmp_path), "train")
    assert "data_batch_1.bin" in str(excinfo.value)
    assert "30730000" in str(excinfo.value)
    write_records(tmp_path / "test_batch.bin", [0, 1])
    with pytest.raises(DatasetFormatError) as excinfo:
        load_cifar10(str(tmp_path), "test")
    assert "30730000" in str(excinfo.value)
    assert len(load_cifar10(str(tmp_path), "train", strict=False)) == 50


def test_load_dataset_cifar10_is_strict(tmp_path):
    write_records(tmp_path / "data_batch_1.bin", [0, 1, 2, 3])
    write_records(tmp_path / "test_batch.bin", [4, 5])
    with pytest.raises(DatasetFormatError):
        load_dataset(DataConfig(dataset="cifar10", data_dir=str(tmp_path)), seed=0)


def test_cifar10_round_trip_reproduces_bytes(tmp_path):
    source = write_records(tmp_path / "data_batch_1.bin", [3, 0, 5, 5])
    dataset = load_cifar10(str(tmp_path), "train", strict=False)
    copy = save_cifar_batch(str(tmp_path / "copy" / "data_batch_1.bin"), dataset)
    with open(source, "rb") as a, open(copy, "rb") as b:
        assert a.read() == b.read()


def test_cifar10_nested_directory_and_limit(tmp_path):
    nested = tmp_path / "cifar-10-batches-bin"
    nested.mkdir()
    write_records(nested / "data_batch_1.bin", [1, 2])
    write_records(nested / "data_batch_2.bin", [3, 4])
    dataset = load_cifar10(str(tmp_path), "train", limit=3, strict=False)
    np.testing.assert_array_equal(dataset.labels, [1, 2, 3])


def test_cifar100_fine_and_coarse_labels(tmp_path):
    write_records(tmp_path / "train.bin", [[4, 88], [19, 3]], label_bytes=2)
    fine = load_cifar100(str(tmp_path), "train")
    coarse = load_cifar100(str(tmp_path), "train", coarse=True)
    np.testing.assert_array_equal(fine.labels, [88, 3])
    np.testing.assert_array_equal(coarse.labels, [4, 19])
    assert (fine.class_count, coarse.class_count) == (100, 20)
    copy = save_cifar_batch(str(tmp_path / "copy.bin"), fine, coarse_labels=coarse.labels)
    assert open(copy, "rb").read() == open(tmp_path / "train.bin", "rb").read()


def test_dataset_rejects_inconsistent_records():
    with pytest.raises(DatasetFormatError):
        Dataset(np.zeros((2, 3, 32, 32)), np.array([0]), 2)
    with pytest.raises(DatasetFormatError):
        Dataset(np.zeros((2, 3, 32, 32)), np.array([0, 2]), 2)


def test_synthetic_is_deterministic():
    first = gen_synthetic(4, 64, seed=0)
    second = gen_synthetic(4, 64, seed=0)
    assert len(first) == 256
    assert first.images.tobytes() == second.images.tobytes()
    np.testing.assert_array_equal(first.labels, np.repeat(np.arange(4), 64))
    assert first.images.min() >= 0.0 and first.images.max() <= 1.0
    assert not np.array_equal(first.images, gen_synthetic(4, 64, seed=1).images)


def test_synthetic_needs_two_classes():
    with pytest.raises(ConfigError):
        gen_synthetic(1, 10, seed=0)


def test_synthetic_classes_are_separable():
    for seed in range(10):
        dataset = gen_synthetic(2, 16, seed=seed)
        flat = dataset.images.reshape(len(dataset), -1).astype(np.float64)
        dist = np.linalg.norm(flat[:, None] - flat[None], axis=2)
        same = dataset.labels[:, None] == dataset.labels[None]
        off_diag = ~np.eye(len(dataset), dtype=bool)
        assert dist[~same].mean() > dist[same & off_diag].mean(), f"seed {seed}"


def test_epoch_batches_drop_tail():
    batches = epoch_batches(50000, 512, np.random.default_rng(0))
    assert len(batches) == 97
    seen = np.concatenate(batches)
    assert len(np.unique(seen)) == len(seen) == 97 * 512
    again = epoch_batches(50000, 512, np.random.default_rng(0))
    np.testing.assert_array_equal(batches[0], again[0])
    with pytest.raises(ConfigError):
        epoch_batches(10, 11, np.random.default_rng(0))


def test_batch_origins_yields_matching_images():
    dataset = gen_synthetic(2, 5, seed=0)
    batches = list(batch_origins(dataset, 4, np.random.default_rng(1)))
    assert len(batches) == 2
    for indices, images in batches:
        np.testing.assert_array_equal(images, dataset.images[indices])


def test_load_dataset_synthetic_splits():
    train, test = load_dataset(DataConfig(dataset="synthetic", classes=3, per_class=8), seed=2)
    assert len(train) == 24
    assert len(test) == 6
    assert not np.array_equal(train.images[:6], test.images)


def test_load_dataset_reads_cifar_dir(tmp_path):
    write_records(tmp_path / "data_batch_1.bin", [0, 1, 2, 3])
    write_records(tmp_path / "test_batch.bin", [4, 5])
    cfg = DataConfig(dataset="binary", data_dir=str(tmp_path), train_limit=2)
    train, test = load_dataset(cfg, seed=0)
    assert (len(train), len(test)) == (2, 2)
    assert os.path.exists(tmp_path / "test_batch.bin")
