"""Independent reference implementations used as test oracles.

Deliberately slow and loop-based; they share no code with the package.
"""

import itertools

import numpy as np


def brute_force_trilinear(features, coord):
    """Blend the 8 corners of the enclosing cell by the volume of the opposite sub-cuboid.

    ``features`` is (d, h, w, C); ``coord`` in [-1, 1]^3 must lie inside the
    hull of voxel centers.
    """
    dims = features.shape[:3]
    g = [(coord[a] + 1.0) / 2.0 * dims[a] - 0.5 for a in range(3)]
    lo = []
    for a in range(3):
        cell = int(np.floor(g[a]))
        cell = min(max(cell, 0), max(dims[a] - 2, 0))
        lo.append(cell)

    total_volume = 0.0
    acc = np.zeros(features.shape[3], dtype=np.float64)
    for corner in itertools.product((0, 1), repeat=3):
        idx = [min(lo[a] + corner[a], dims[a] - 1) for a in range(3)]
        # opposite corner of the unit cell
        opp = [lo[a] + (1 - corner[a]) for a in range(3)]
        sub = 1.0
        for a in range(3):
            sub *= abs(g[a] - opp[a])
        total_volume += sub
        acc += sub * features[idx[0], idx[1], idx[2]].astype(np.float64)
    return acc / total_volume


def central_difference(f, x, step):
    """Central finite-difference gradient of scalar ``f`` at flat array ``x`` (modified in place, restored)."""
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + step
        fp = f()
        x[i] = orig - step
        fm = f()
        x[i] = orig
        grad[i] = (fp - fm) / (2 * step)
    return grad
