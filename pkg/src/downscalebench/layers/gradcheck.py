"""Central finite-difference verification of layer backward passes."""

import math
from dataclasses import dataclass

import numpy as np

from .functional import record_relu_masks


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped_kinks: int
    worst_tensor: str = ""
    max_coord_error: float = 0.0


def _promote(layer):
    saved = []
    for p in layer.parameters():
        saved.append((p, p.value, p.grad))
        p.value = p.value.astype(np.float64)
        p.grad = np.zeros_like(p.value)
    return saved


def _restore(saved):
    for p, value, grad in saved:
        p.value, p.grad = value, grad


def _coords(size, quota, rng):
    if size <= quota:
        return np.arange(size)
    return np.sort(rng.choice(size, size=quota, replace=False))


def _same_masks(a, b):
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def grad_check_report(layer, x, eps=1e-3, seed=0, max_coords=400, atol=1e-7):
    """Compare analytic gradients with central differences.

    The scalar probed is ``sum(layer(x) * r)`` for a fixed random ``r``. Input
    and parameter coordinates are checked exhaustively when they number at most
    ``max_coords``; otherwise each tensor gets an equal seeded random quota.
    Evaluation runs in float64 on temporarily promoted parameters, leaving the
    layer untouched afterwards.

    The error of one tensor (the input, or one parameter) is
    ``|a - n|_2 / max(|a|_2, |n|_2)`` over its checked coordinates; the
    reported ``max_rel_error`` is the worst tensor. ``max_coord_error`` keeps
    the per-coordinate worst for diagnostics.

    A stencil whose +eps or -eps evaluation flips any ReLU relative to the
    unperturbed pass straddles a kink, where the difference quotient is not a
    derivative estimate; such coordinates are counted and skipped.
    """
    # a stream of its own, so r never coincides with an input drawn from ``seed``
    rng = np.random.default_rng([seed, 0x9C])
    x = np.array(x, dtype=np.float64)
    saved = _promote(layer)
    try:
        base_masks = []
        record_relu_masks(base_masks)
        try:
            y, ctx = layer.forward(x)
        finally:
            record_relu_masks(None)
        r = rng.standard_normal(np.shape(y))
        dx = layer.backward(ctx, r)

        def probe():
            masks = []
            record_relu_masks(masks)
            try:
                out = layer.forward(x)[0]
            finally:
                record_relu_masks(None)
            return float(np.sum(out * r)), _same_masks(masks, base_masks)

        named = [(name or f"param{i}", p) for i, (name, p) in enumerate(layer.named_parameters())]
        targets = [("input", x, np.asarray(dx))] + [(n, p.value, p.grad) for n, p in named]
        total = sum(t.size for _, t, _ in targets)
        quota = total if total <= max_coords else max(1, math.ceil(max_coords / len(targets)))
        worst, worst_name, worst_coord, checked, skipped = 0.0, "", 0.0, 0, 0
        for name, arr, grad in targets:
            flat = arr.reshape(-1)
            gflat = grad.reshape(-1)
            ana_vals, num_vals = [], []
            for i in _coords(flat.size, quota, rng):
                orig = flat[i]
                flat[i] = orig + eps
                up, ok_up = probe()
                flat[i] = orig - eps
                down, ok_down = probe()
                flat[i] = orig
                if not (ok_up and ok_down):
                    skipped += 1
                    continue
                num = (up - down) / (2 * eps)
                ana = float(gflat[i])
                worst_coord = max(worst_coord, abs(ana - num) / max(abs(ana), abs(num), atol))
                ana_vals.append(ana)
                num_vals.append(num)
                checked += 1
            if not ana_vals:
                continue
            a, n = np.array(ana_vals), np.array(num_vals)
            err = np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), atol)
            if err > worst:
                worst, worst_name = float(err), name
        return GradCheckResult(worst, checked, skipped, worst_name, worst_coord)
    finally:
        _restore(saved)


def grad_check(layer, x, eps=1e-3, seed=0, max_coords=400):
    """Worst relative gradient error of ``layer`` at ``x`` (see grad_check_report)."""
    return grad_check_report(layer, x, eps=eps, seed=seed, max_coords=max_coords).max_rel_error
