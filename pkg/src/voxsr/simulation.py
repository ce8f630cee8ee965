"""LR simulation: cubic resampling and LR-HR training patch extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .volume_io import Volume

KEYS_A = -0.5


def keys_kernel(x: np.ndarray, a: float = KEYS_A) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _mirror(idx: np.ndarray, n: int) -> np.ndarray:
    # half-sample symmetric: ... 1 0 | 0 1 ... n-1 | n-1 n-2 ...
    m = np.mod(idx, 2 * n)
    return np.where(m >= n, 2 * n - 1 - m, m)


def cubic_weights(in_size: int, out_size: int) -> np.ndarray:
    """Dense (out_size, in_size) resampling matrix for one axis."""
    o = np.arange(out_size, dtype=np.float64)
    x = (o + 0.5) * (in_size / out_size) - 0.5
    base = np.floor(x)
    t = x - base
    w = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.arange(out_size)
    for off in (-1, 0, 1, 2):
        cols = _mirror(base.astype(np.int64) + off, in_size)
        np.add.at(w, (rows, cols), keys_kernel(t - off))
    return w


def cubic_resize(data: np.ndarray, out_shape) -> np.ndarray:
    """Separable Keys cubic resampling of a 3D array to ``out_shape``."""
    out = np.asarray(data, dtype=np.float64)
    for axis, n_out in enumerate(out_shape):
        w = cubic_weights(out.shape[axis], int(n_out))
        out = np.moveaxis(np.tensordot(w, out, axes=([1], [axis])), 0, axis)
    return out


def _resized_volume(v: Volume, out_shape) -> Volume:
    voxel = tuple(s * i / o for s, i, o in zip(v.voxel_size_mm, v.shape, out_shape))
    return Volume(cubic_resize(v.data, out_shape), voxel)


def cubic_downsample(v: Volume, k: float) -> Volume:
    if k < 1:
        raise ValueError(f"downsampling factor must be >= 1, got {k}")
    # tolerance guards q / (q / p) landing a hair under p
    out_shape = tuple(int(math.floor(d / k + 1e-9)) for d in v.shape)
    if min(out_shape) < 1:
        raise ShapeError(f"downsampling {v.shape} by {k} leaves an empty axis")
    return _resized_volume(v, out_shape)


def cubic_upsample(v: Volume, k: float) -> Volume:
    """Cubic-interpolation baseline producing the floor(k * dim) grid."""
    out_shape = tuple(int(math.floor(k * d + 1e-9)) for d in v.shape)
    return _resized_volume(v, out_shape)


@dataclass
class ScaleSampler:
    k_min: float = 2.0
    k_max: float = 4.0
    rng_seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.k_min < 1 or self.k_max < self.k_min:
            raise ValueError(f"need 1 <= k_min <= k_max, got ({self.k_min}, {self.k_max})")
        self.rng = np.random.default_rng(self.rng_seed)

    def sample(self) -> float:
        if self.k_min == self.k_max:
            return float(self.k_min)
        return float(self.rng.uniform(self.k_min, self.k_max))


def sample_scale(s: ScaleSampler) -> float:
    return s.sample()


@dataclass(eq=False)
class PatchPair:
    lr: Volume
    hr: Volume
    effective_scale: float
    sampled_scale: float | None = None


def hr_side(lr_size: int, k: float) -> int:
    """Round-half-up of lr_size * k."""
    return int(math.floor(lr_size * k + 0.5))


def extract_training_pairs(v: Volume, n_patches: int, lr_size: int, sampler: ScaleSampler,
                           crop_size: int = 40) -> list[PatchPair]:
    """Random crop -> sample k -> center crop to round(lr_size*k)^3 -> cubic downsample.

    Crop corners and scales both come from ``sampler.rng``, so a fresh
    sampler with the same seed reproduces the list exactly.
    """
    if min(v.shape) < crop_size:
        raise ShapeError(f"volume {v.shape} smaller than crop size {crop_size}")
    if hr_side(lr_size, sampler.k_max) > crop_size:
        raise ShapeError(f"lr_size {lr_size} x k_max {sampler.k_max} exceeds crop size {crop_size}")

    rng = sampler.rng
    pairs = []
    for _ in range(n_patches):
        corner = [int(rng.integers(0, d - crop_size + 1)) for d in v.shape]
        k = sampler.sample()
        q = hr_side(lr_size, k)
        start = [c + (crop_size - q) // 2 for c in corner]
        block = v.data[start[0]:start[0] + q, start[1]:start[1] + q, start[2]:start[2] + q]
        hr = Volume(block, v.voxel_size_mm)
        lr = _resized_volume(hr, (lr_size,) * 3)
        pairs.append(PatchPair(lr=lr, hr=hr, effective_scale=q / lr_size, sampled_scale=k))
    return pairs
