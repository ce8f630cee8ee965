"""Seeded synthetic volumes for smoke runs and desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .volume_io import Volume, normalize_intensity


def smooth_blobs(shape=(64, 64, 64), n_blobs: int = 200, sigma=(1.0, 3.0),
                 amplitude=(0.3, 1.0), seed: int = 0) -> Volume:
    """Sum of isotropic Gaussian blobs, min-max normalised to [0, 1]."""
    rng = np.random.default_rng(seed)
    grids = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij")
    out = np.zeros(shape, dtype=np.float64)
    margin = np.array([min(4, n // 4) for n in shape], dtype=np.float64)
    for _ in range(n_blobs):
        center = rng.uniform(margin, np.array(shape) - margin)
        s = rng.uniform(*sigma)
        a = rng.uniform(*amplitude)
        r2 = sum((g - c) ** 2 for g, c in zip(grids, center))
        out += a * np.exp(-r2 / (2 * s * s))
    return normalize_intensity(Volume(out))
