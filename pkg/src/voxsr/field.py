"""Coordinate conventions, HR grid construction and trilinear feature lookup.

Coordinates live in [-1, 1]^3 with voxel-center alignment: index ``i`` on an
axis of size ``D`` sits at ``2 * (i + 0.5) / D - 1``. Coordinate component
``a`` addresses array axis ``a`` (depth, height, width).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import DomainError, ShapeError
from .volume_io import Volume

DOMAIN_TOL = 1e-9
# fractional grid offsets closer than this to an integer are treated as lattice hits
SNAP_TOL = 1e-9


@dataclass(eq=False)
class CoordinateBatch:
    coords: torch.Tensor  # (N, 3) float64
    targets: torch.Tensor | None = None  # (N,)

    def __post_init__(self):
        self.coords = torch.as_tensor(self.coords, dtype=torch.float64).reshape(-1, 3)
        if self.targets is not None:
            self.targets = torch.as_tensor(self.targets).reshape(-1)
            if len(self.targets) != len(self.coords):
                raise ShapeError(f"{len(self.coords)} coords but {len(self.targets)} targets")

    def __len__(self) -> int:
        return len(self.coords)

    def __getitem__(self, sl: slice) -> "CoordinateBatch":
        targets = None if self.targets is None else self.targets[sl]
        return CoordinateBatch(self.coords[sl], targets)


@dataclass(eq=False)
class FeatureGrid:
    features: torch.Tensor  # (d, h, w, C)

    def __post_init__(self):
        self.features = torch.as_tensor(self.features)
        if self.features.dim() != 4:
            raise ShapeError(f"feature grid must be (d, h, w, C), got {tuple(self.features.shape)}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.features.shape[:3])

    @property
    def channels(self) -> int:
        return int(self.features.shape[3])


def hr_shape(lr_shape, k: float) -> tuple[int, int, int]:
    """floor(k * dim) per axis; the epsilon absorbs products like 2.3 * 10 = 22.999..."""
    if k < 1:
        raise ValueError(f"scale must be >= 1, got {k}")
    return tuple(int(math.floor(k * d + 1e-9)) for d in lr_shape)


def axis_centers(n: int) -> np.ndarray:
    return 2.0 * (np.arange(n, dtype=np.float64) + 0.5) / n - 1.0


def lattice_coords(shape) -> torch.Tensor:
    axes = [axis_centers(n) for n in shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return torch.from_numpy(np.stack([m.ravel() for m in mesh], axis=1))


def make_hr_grid(lr_shape, k: float) -> CoordinateBatch:
    return CoordinateBatch(lattice_coords(hr_shape(lr_shape, k)))


def _check_domain(coords: torch.Tensor) -> None:
    if len(coords) and (coords.abs() > 1 + DOMAIN_TOL).any():
        bad = coords[(coords.abs() > 1 + DOMAIN_TOL).any(dim=1)][0].tolist()
        raise DomainError(f"coordinate {bad} lies outside [-1, 1]^3")


def trilinear_interpolate(grid: FeatureGrid | torch.Tensor, batch: CoordinateBatch | torch.Tensor) -> torch.Tensor:
    """Blend the 8 lattice neighbours of each query by opposite sub-cuboid volumes.

    Neighbour indices are clamped to the lattice, so queries between the
    outermost voxel centers and the domain boundary replicate the edge.
    Differentiable with respect to the features. Returns (N, C).
    """
    feats = grid.features if isinstance(grid, FeatureGrid) else torch.as_tensor(grid)
    coords = batch.coords if isinstance(batch, CoordinateBatch) else torch.as_tensor(batch, dtype=torch.float64)
    coords = coords.to(torch.float64).reshape(-1, 3)
    _check_domain(coords)

    d, h, w, c = feats.shape
    dims = torch.tensor([d, h, w], dtype=torch.float64)
    g = (coords + 1) / 2 * dims - 0.5
    nearest = torch.round(g)
    g = torch.where((g - nearest).abs() < SNAP_TOL, nearest, g)
    lo = torch.floor(g)
    t = g - lo
    lo = lo.long()
    upper = (dims.long() - 1)
    i0 = torch.minimum(torch.clamp(lo, min=0), upper)
    i1 = torch.minimum(torch.clamp(lo + 1, min=0), upper)

    flat = feats.reshape(d * h * w, c)
    out = None
    for cd in (0, 1):
        for ch in (0, 1):
            for cw in (0, 1):
                idx_d = i1[:, 0] if cd else i0[:, 0]
                idx_h = i1[:, 1] if ch else i0[:, 1]
                idx_w = i1[:, 2] if cw else i0[:, 2]
                wt = ((t[:, 0] if cd else 1 - t[:, 0])
                      * (t[:, 1] if ch else 1 - t[:, 1])
                      * (t[:, 2] if cw else 1 - t[:, 2]))
                vec = flat.index_select(0, (idx_d * h + idx_h) * w + idx_w)
                term = wt.to(feats.dtype).unsqueeze(1) * vec
                out = term if out is None else out + term
    return out


def sample_coordinates(hr: Volume, K: int, rng: np.random.Generator) -> CoordinateBatch:
    """K distinct voxel centers of ``hr`` drawn without replacement, with their intensities."""
    n = hr.data.size
    if K > n:
        raise ShapeError(f"cannot sample {K} distinct voxels from a volume of {n}")
    if K < 1:
        raise ShapeError("K must be at least 1")
    idx = rng.choice(n, size=K, replace=False)
    ijk = np.unravel_index(idx, hr.shape)
    coords = np.stack([2.0 * (ijk[a] + 0.5) / hr.shape[a] - 1.0 for a in range(3)], axis=1)
    targets = hr.data.ravel()[idx]
    return CoordinateBatch(torch.from_numpy(coords), torch.from_numpy(targets.copy()))
