"""Reference-based quality metrics and slice-by-slice aggregation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import ShapeError
from .volume_io import Volume

AXIS_NAMES = ("axis0", "axis1", "axis2")
INF_MARK = "inf"


def _arrays(sr, gt) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(sr.data if isinstance(sr, Volume) else sr, dtype=np.float64)
    b = np.asarray(gt.data if isinstance(gt, Volume) else gt, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _peak(gt: np.ndarray) -> float:
    peak = float(gt.max())
    if peak <= 0:
        raise ValueError("reference maximum intensity must be positive")
    return peak


def psnr_paper(sr, gt) -> float:
    """20 log10(L / sqrt(mean |sr - gt|)) with L the reference maximum."""
    a, b = _arrays(sr, gt)
    peak = _peak(b)
    mae = float(np.mean(np.abs(a - b)))
    if mae == 0:
        return math.inf
    return 20.0 * math.log10(peak / math.sqrt(mae))


def psnr_standard(sr, gt) -> float:
    """10 log10(L^2 / MSE) with L the reference maximum."""
    a, b = _arrays(sr, gt)
    peak = _peak(b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _ssim_from_stats(mu_a, mu_b, var_a, var_b, cov, data_range):
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))


def ssim_global(sr, gt, data_range: float = 1.0) -> float:
    """Single-window SSIM from whole-array means, variances and covariance."""
    a, b = _arrays(sr, gt)
    mu_a, mu_b = a.mean(), b.mean()
    da, db = a - mu_a, b - mu_b
    return float(_ssim_from_stats(mu_a, mu_b, np.mean(da * da), np.mean(db * db), np.mean(da * db), data_range))


def ssim_windowed(sr, gt, window: int = 7, data_range: float = 1.0) -> float:
    """Mean SSIM over every fully-contained ``window``^n uniform window."""
    a, b = _arrays(sr, gt)
    if min(a.shape) < window:
        raise ShapeError(f"array {a.shape} smaller than the {window}-voxel window")
    mu_a = uniform_filter(a, window)
    mu_b = uniform_filter(b, window)
    var_a = uniform_filter(a * a, window) - mu_a * mu_a
    var_b = uniform_filter(b * b, window) - mu_b * mu_b
    cov = uniform_filter(a * b, window) - mu_a * mu_b
    smap = _ssim_from_stats(mu_a, mu_b, var_a, var_b, cov, data_range)
    r = window // 2
    inner = tuple(slice(r, n - (window - 1 - r)) for n in a.shape)
    return float(smap[inner].mean())


def slicewise_scores(metric: Callable, sr, gt) -> dict[str, list[float]]:
    """Scores of ``metric`` on every 2D slice pair, keyed by the sliced axis."""
    a, b = _arrays(sr, gt)
    if a.ndim != 3:
        raise ShapeError(f"slicewise evaluation needs 3D input, got {a.shape}")
    return {
        name: [float(metric(np.take(a, i, axis=ax), np.take(b, i, axis=ax))) for i in range(a.shape[ax])]
        for ax, name in enumerate(AXIS_NAMES)
    }


def slicewise_aggregate(metric: Callable, sr, gt) -> float:
    """Mean of ``metric`` over all slices of all three orthogonal directions."""
    scores = slicewise_scores(metric, sr, gt)
    flat = [s for per_axis in scores.values() for s in per_axis]
    return float(np.mean(flat))


# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    psnr_paper: float
    psnr_standard: float
    ssim_global: float
    ssim_slicewise: float
    ssim_slicewise_by_axis: dict[str, float] = field(default_factory=dict)
    ssim_windowed: float | None = None
    # filled by external tools only; never computed here
    lpips: float | None = None
    psi: float | None = None
    lpc_si: float | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _encode_inf(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**_decode_inf(d))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def _encode_inf(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return INF_MARK if obj > 0 else "-" + INF_MARK
    if isinstance(obj, dict):
        return {k: _encode_inf(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_encode_inf(v) for v in obj]
    return obj


def _decode_inf(obj):
    if obj == INF_MARK:
        return math.inf
    if obj == "-" + INF_MARK:
        return -math.inf
    if isinstance(obj, dict):
        return {k: _decode_inf(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode_inf(v) for v in obj]
    return obj


def evaluate(sr, gt, /, windowed: bool = False, **metadata) -> EvalReport:
    scores = slicewise_scores(ssim_global, sr, gt)
    by_axis = {k: float(np.mean(v)) for k, v in scores.items()}
    return EvalReport(
        psnr_paper=psnr_paper(sr, gt),
        psnr_standard=psnr_standard(sr, gt),
        ssim_global=ssim_global(sr, gt),
        ssim_slicewise=float(np.mean([s for v in scores.values() for s in v])),
        ssim_slicewise_by_axis=by_axis,
        ssim_windowed=ssim_windowed(sr, gt) if windowed else None,
        metadata=metadata,
    )
