"""Pooled MSE / R^2 and model-or-baseline evaluation."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ShapeError, UndefinedMetricError
from .grid import bicubic_upsample

EVAL_BATCH = 16


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return pred, target


def mse(pred, target):
    """Mean squared difference over every cell (float64, pairwise summation)."""
    pred, target = _pair(pred, target)
    d = (pred - target).reshape(-1)
    return float(np.sum(d * d) / d.size)


def r2(pred, target):
    """1 - SS_res / SS_tot, pooled over all cells of all samples."""
    pred, target = _pair(pred, target)
    t = target.reshape(-1)
    p = pred.reshape(-1)
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if not ss_tot > 0:
        raise UndefinedMetricError("R^2 is undefined for a target with zero variance")
    ss_res = float(np.sum((t - p) ** 2))
    return 1.0 - ss_res / ss_tot


class Bicubic:
    """Baseline predictor that only upsamples; evaluated like a learned model."""

    name = "bicubic"

    def __init__(self, scale):
        self.scale = scale

    def forward(self, lr):
        return bicubic_upsample(np.asarray(lr, dtype=np.float32), self.scale)


def predict(model, lr, threads=1):
    """Predictions for a stacked LR array.

    Work is split into fixed batches of EVAL_BATCH samples regardless of the
    thread count, so serial and threaded runs produce identical arrays.
    """
    starts = list(range(0, len(lr), EVAL_BATCH))

    def run(i):
        return model.forward(lr[i : i + EVAL_BATCH])

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(i) for i in starts]
    return np.concatenate(parts)


def evaluate_model(model, eval_set, threads=1):
    """(r2, mse) of ``model`` on a normalised PairSet."""
    pred = predict(model, eval_set.lr, threads)
    if pred.shape != eval_set.hr.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {eval_set.hr.shape}")
    return r2(pred, eval_set.hr), mse(pred, eval_set.hr)
