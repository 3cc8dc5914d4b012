"""
Positive-view generation: random resized crop, horizontal flip, colour
jitter and grayscale, each view with independently drawn parameters.

Images are float arrays of shape (3, H, W) with values in [0, 1].
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import map_coordinates

import config
from exceptions import ConfigError

logger = logging.getLogger(__name__)

JITTER_OPS = ("brightness", "contrast", "saturation", "hue")


@dataclass(frozen=True)
class AugParams:
    """Parameters of one view; jitter holds the (b, c, s, h) offsets when applied"""
    crop_area_frac: float
    crop_aspect: float
    crop_origin: Tuple[int, int]
    crop_size: Tuple[int, int]
    flip: bool = False
    jitter: Optional[Tuple[float, float, float, float]] = None
    jitter_order: Tuple[int, int, int, int] = (0, 1, 2, 3)
    grayscale: bool = False

    @classmethod
    def identity(cls, height: int, width: int) -> 'AugParams':
        return cls(1.0, 1.0, (0, 0), (height, width))


def _crop_size(frac: float, aspect: float, height: int, width: int) -> Tuple[int, int]:
    area = frac * height * width
    return int(round(np.sqrt(area / aspect))), int(round(np.sqrt(area * aspect)))


def sample_params(rng: np.random.Generator, height: int = config.IMAGE_SIZE,
                  width: int = config.IMAGE_SIZE) -> AugParams:
    """
    Draw one view's parameters.

    The area fraction is drawn once; the aspect ratio is redrawn until the
    rectangle fits (at most CROP_ATTEMPTS times), after which the last
    rectangle is clamped to the image and centred; crop_area_frac and
    crop_aspect then describe the clamped rectangle.
    """
    lo, hi = config.CROP_AREA_RANGE
    frac = float(rng.uniform(lo, hi))
    log_lo, log_hi = np.log(config.CROP_ASPECT_RANGE[0]), np.log(config.CROP_ASPECT_RANGE[1])
    origin = None
    for _ in range(config.CROP_ATTEMPTS):
        aspect = float(np.exp(rng.uniform(log_lo, log_hi)))
        h, w = _crop_size(frac, aspect, height, width)
        if 0 < h <= height and 0 < w <= width:
            origin = (int(rng.integers(0, height - h + 1)), int(rng.integers(0, width - w + 1)))
            break
    if origin is None:
        h, w = min(max(h, 1), height), min(max(w, 1), width)
        origin = ((height - h) // 2, (width - w) // 2)
        # record the rectangle actually cropped, not the rejected draw
        frac, aspect = h * w / (height * width), w / h
        logger.debug(f"crop fallback to centred {h}x{w} (frac={frac:.3f})")

    flip = bool(rng.random() < config.FLIP_PROB)
    jitter = None
    order = (0, 1, 2, 3)
    if rng.random() < config.JITTER_PROB:
        strengths = np.asarray(config.JITTER_STRENGTHS)
        jitter = tuple(float(u) for u in rng.uniform(-strengths, strengths))
        order = tuple(int(i) for i in rng.permutation(4))
    grayscale = bool(rng.random() < config.GRAYSCALE_PROB)
    return AugParams(
        crop_area_frac=frac,
        crop_aspect=aspect,
        crop_origin=origin,
        crop_size=(h, w),
        flip=flip,
        jitter=jitter,
        jitter_order=order,
        grayscale=grayscale,
    )


def luma(image: np.ndarray) -> np.ndarray:
    """Per-pixel luma of a (3, H, W) image."""
    weights = np.asarray(config.LUMA_WEIGHTS, dtype=image.dtype)
    return np.tensordot(weights, image, axes=1)


def _resize_bilinear(crop: np.ndarray, height: int, width: int) -> np.ndarray:
    ch, cw = crop.shape[1:]
    rows = np.linspace(0, ch - 1, height)
    cols = np.linspace(0, cw - 1, width)
    grid = np.stack(np.meshgrid(rows, cols, indexing="ij"))
    return np.stack([map_coordinates(c, grid, order=1, mode="nearest") for c in crop])


def _jitter(image: np.ndarray, op: int, u: float) -> np.ndarray:
    if op == 0:
        out = image * (1.0 + u)
    elif op == 1:
        m = luma(image).mean()
        out = m + (1.0 + u) * (image - m)
    elif op == 2:
        gray = luma(image)[None]
        out = gray + (1.0 + u) * (image - gray)
    else:
        hsv = rgb_to_hsv(np.clip(image, 0, 1).transpose(1, 2, 0))
        hsv[..., 0] = np.mod(hsv[..., 0] + u, 1.0)
        out = hsv_to_rgb(hsv).transpose(2, 0, 1)
    return np.clip(out, 0.0, 1.0)


def apply(image: np.ndarray, p: AugParams) -> np.ndarray:
    """Render one view; output has the input's resolution and values in [0, 1]."""
    _, height, width = image.shape
    r, c = p.crop_origin
    h, w = p.crop_size
    out = image[:, r:r + h, c:c + w]
    if (h, w) != (height, width):
        out = _resize_bilinear(out, height, width)
    if p.flip:
        out = out[:, :, ::-1]
    if p.jitter is not None:
        for op in p.jitter_order:
            out = _jitter(out, op, p.jitter[op])
    if p.grayscale:
        out = np.repeat(luma(out)[None], 3, axis=0)
    return np.clip(out, 0.0, 1.0).astype(image.dtype, copy=False)


def make_views(image: np.ndarray, d: int, rng: np.random.Generator) -> List[np.ndarray]:
    """d independently augmented views of one image."""
    if d < 2:
        raise ConfigError(f"need at least 2 views per image, got d={d}")
    _, height, width = image.shape
    return [apply(image, sample_params(rng, height, width)) for _ in range(d)]


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Generator for one sample, independent of thread scheduling."""
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, index]))


def augment_batch(images: np.ndarray, indices: Sequence[int], d: int, seed: int,
                  epoch: int, workers: int = 1) -> np.ndarray:
    """
    Views of a batch of origins, origin-major: row i*d + j is view j of origin i.

    Args:
        images: (N, 3, H, W) origin images
        indices: dataset index of each origin (seeds the per-sample generator)
        d: views per origin
        seed, epoch: run seed and epoch, mixed into every per-sample seed
        workers: thread count; output does not depend on it
    """
    def _views(i: int) -> List[np.ndarray]:
        return make_views(images[i], d, sample_rng(seed, epoch, int(indices[i])))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_origin = list(pool.map(_views, range(len(images))))
    else:
        per_origin = [_views(i) for i in range(len(images))]
    return np.stack([view for views in per_origin for view in views])
