"""Dense grid kernels: pooling, bicubic resampling and normalization.

Grids are plain float32 numpy arrays, canonically (batch, channel, height,
width). Every kernel here also accepts 2-D single fields and operates on the
two trailing axes.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidStatsError, ShapeError

DTYPE = np.float32


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float
    n_cells: int = 0

    def __post_init__(self):
        if not np.isfinite(self.std) or self.std <= 0:
            raise InvalidStatsError(f"std must be > 0, got {self.std}")

    def to_dict(self):
        return {"mean": float(self.mean), "std": float(self.std), "n_cells": int(self.n_cells)}


def as_grid(t):
    t = np.asarray(t, dtype=DTYPE)
    if t.ndim < 2 or min(t.shape) < 1:
        raise ShapeError(f"grid must have >= 2 non-empty axes, got shape {t.shape}")
    return t


def avg_pool(t, k):
    """Mean over non-overlapping k x k blocks of the trailing two axes."""
    t = np.asarray(t)
    if k < 1:
        raise ShapeError(f"pooling factor must be >= 1, got {k}")
    h, w = t.shape[-2:]
    if h % k:
        raise ShapeError(f"height {h} is not divisible by pooling factor {k}")
    if w % k:
        raise ShapeError(f"width {w} is not divisible by pooling factor {k}")
    blocks = t.reshape(t.shape[:-2] + (h // k, k, w // k, k))
    out = blocks.astype(np.float64).mean(axis=(-3, -1))
    return out.astype(t.dtype if t.dtype.kind == "f" else DTYPE)


def _keys(s, a=-0.5):
    s = np.abs(s)
    return np.where(
        s <= 1,
        (a + 2) * s**3 - (a + 3) * s**2 + 1,
        np.where(s < 2, a * s**3 - 5 * a * s**2 + 8 * a * s - 4 * a, 0.0),
    )


@lru_cache(maxsize=64)
def bicubic_matrix(n, factor):
    """(n*factor, n) interpolation matrix for one axis.

    Cell centres follow the half-pixel convention, so output cell j samples
    the input at (j + 0.5) / factor - 0.5. Taps falling outside the grid are
    filled by linear extension of the two border cells, which keeps affine
    fields exact up to the edge.
    """
    m = n * factor
    src = (np.arange(m) + 0.5) / factor - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    mat = np.zeros((m, n), dtype=np.float64)
    rows = np.arange(m)
    for off in (-1, 0, 1, 2):
        wgt = _keys(frac - off)
        idx = base + off
        low = idx < 0
        high = idx > n - 1
        inside = ~(low | high)
        np.add.at(mat, (rows[inside], idx[inside]), wgt[inside])
        # ghost cell at -j is f0 - j*(f1 - f0)
        j = -idx[low]
        np.add.at(mat, (rows[low], np.zeros_like(j)), wgt[low] * (1 + j))
        np.add.at(mat, (rows[low], np.ones_like(j)), -wgt[low] * j)
        j = idx[high] - (n - 1)
        np.add.at(mat, (rows[high], np.full_like(j, n - 1)), wgt[high] * (1 + j))
        np.add.at(mat, (rows[high], np.full_like(j, n - 2)), -wgt[high] * j)
    mat.setflags(write=False)
    return mat


def bicubic_upsample(t, factor):
    """Separable Keys (a = -0.5) cubic upsampling of the trailing two axes."""
    t = np.asarray(t)
    if int(factor) != factor or factor < 2:
        raise ShapeError(f"upsampling factor must be an integer >= 2, got {factor}")
    factor = int(factor)
    h, w = t.shape[-2:]
    if h < 4:
        raise ShapeError(f"bicubic_upsample needs height >= 4, got {h}")
    if w < 4:
        raise ShapeError(f"bicubic_upsample needs width >= 4, got {w}")
    ah = bicubic_matrix(h, factor)
    aw = bicubic_matrix(w, factor)
    out = ah @ t.astype(np.float64) @ aw.T
    return out.astype(t.dtype if t.dtype.kind == "f" else DTYPE)


def nearest_upsample(t, factor):
    t = np.asarray(t)
    return np.repeat(np.repeat(t, factor, axis=-2), factor, axis=-1)


def _check_stats(s):
    if not np.isfinite(s.std) or s.std <= 0:
        raise InvalidStatsError(f"std must be > 0, got {s.std}")


def normalize(t, s):
    _check_stats(s)
    t = np.asarray(t)
    out = (t.astype(np.float64) - s.mean) / s.std
    return out.astype(t.dtype if t.dtype.kind == "f" else DTYPE)


def denormalize(t, s):
    _check_stats(s)
    t = np.asarray(t)
    out = t.astype(np.float64) * s.std + s.mean
    return out.astype(t.dtype if t.dtype.kind == "f" else DTYPE)
