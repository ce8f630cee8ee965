"""Arbitrary-scale reconstruction of a whole volume from a trained model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import NumericalError, ShapeError
from .field import FeatureGrid, hr_shape, trilinear_interpolate
from .networks import SRModel, encoder_forward, receptive_radius
from .volume_io import Volume

# Rows per decoder call. Every call is padded to this size so a query's
# output bits never depend on how the grid was chunked (small-batch GEMM
# paths in the CPU backend round differently).
DECODE_TILE = 256


@dataclass
class SRRequest:
    scale: float
    chunk_size: int = 65536
    clamp_output: bool = False
    # encode in overlapping tiles once the LR volume exceeds this many voxels
    max_encode_voxels: int | None = None

    def __post_init__(self):
        if not self.scale >= 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")


def encode_tiled(model: SRModel, lr: Volume, core: int) -> FeatureGrid:
    """Encode ``lr`` tile by tile, padding each tile with receptive-field context.

    Features in each tile core see exactly the inputs they would see in a
    whole-volume pass.
    """
    halo = receptive_radius(model.config.encoder)
    d, h, w = lr.shape
    x = torch.from_numpy(lr.data).to(model.dtype)
    out = None
    for z in range(0, d, core):
        for y in range(0, h, core):
            for xx in range(0, w, core):
                lo = (max(z - halo, 0), max(y - halo, 0), max(xx - halo, 0))
                hi = (min(z + core + halo, d), min(y + core + halo, h), min(xx + core + halo, w))
                tile = x[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
                feats = model.encode(tile.unsqueeze(0))[0]
                if out is None:
                    out = feats.new_empty((d, h, w, feats.shape[-1]))
                ze, ye, xe = min(z + core, d), min(y + core, h), min(xx + core, w)
                out[z:ze, y:ye, xx:xe] = feats[z - lo[0]:ze - lo[0], y - lo[1]:ye - lo[1], xx - lo[2]:xe - lo[2]]
    return FeatureGrid(out)


def _chunk_coords(shape, start: int, stop: int) -> torch.Tensor:
    idx = np.arange(start, stop)
    ijk = np.unravel_index(idx, shape)
    return torch.from_numpy(np.stack([2.0 * (ijk[a] + 0.5) / shape[a] - 1.0 for a in range(3)], axis=1))


def _decode_tiles(model: SRModel, grid: FeatureGrid, coords: torch.Tensor) -> torch.Tensor:
    out = []
    for s in range(0, len(coords), DECODE_TILE):
        c = coords[s:s + DECODE_TILE]
        n = len(c)
        if n < DECODE_TILE:
            c = torch.cat([c, c.new_zeros(DECODE_TILE - n, 3)])
        feats = trilinear_interpolate(grid, c)
        out.append(model.decode(c, feats)[:n])
    return torch.cat(out)


def super_resolve(model: SRModel, lr: Volume, req: SRRequest) -> Volume:
    out_shape = hr_shape(lr.shape, req.scale)
    if min(out_shape) < 1:
        raise ShapeError(f"scale {req.scale} gives empty output for {lr.shape}")
    model.eval()
    with torch.no_grad():
        n_lr = int(np.prod(lr.shape))
        if req.max_encode_voxels is not None and n_lr > req.max_encode_voxels:
            halo = receptive_radius(model.config.encoder)
            core = max(1, int(math.floor(req.max_encode_voxels ** (1 / 3))) - 2 * halo)
            grid = encode_tiled(model, lr, core)
        else:
            grid = encoder_forward(model, lr)

        total = int(np.prod(out_shape))
        values = np.empty(total, dtype=np.float32)
        for start in range(0, total, req.chunk_size):
            stop = min(start + req.chunk_size, total)
            pred = _decode_tiles(model, grid, _chunk_coords(out_shape, start, stop))
            if not torch.isfinite(pred).all():
                raise NumericalError("decoder produced non-finite intensities")
            values[start:stop] = pred.to(torch.float32).numpy()

    data = values.reshape(out_shape)
    if req.clamp_output:
        data = np.clip(data, 0.0, 1.0)
    voxel = tuple(s * i / o for s, i, o in zip(lr.voxel_size_mm, lr.shape, out_shape))
    return Volume(data, voxel)
