"""The standard gradient-check suite: every layer plus each reduced model."""

import time

import numpy as np

from .layers import (
    Conv2d,
    FourierBlock,
    LayerNorm,
    Linear,
    MultiHeadSelfAttention,
    PatchEmbed,
    Pointwise,
    ReLU,
    ResidualBlock,
    SpectralConv2d,
    TransformerBlock,
    grad_check_report,
)
from .models import build, reduced_spec

THRESHOLD = 1e-3
SEEDS = (0, 1, 2, 3, 4)


def _grid(rng, c=3, size=8):
    return rng.standard_normal((2, c, size, size))


def _tokens(rng, n=5, d=8):
    return rng.standard_normal((2, n, d))


def _model_case(family):
    def make(rng):
        spec = reduced_spec(family)
        net = build(spec, seed=int(rng.integers(1 << 30))).net
        return net, rng.standard_normal((2, 1, spec.hr_size, spec.hr_size))

    return make


# name -> rng -> (layer, input)
CASES = {
    "conv2d": lambda rng: (Conv2d(3, 4, rng), _grid(rng)),
    "pointwise": lambda rng: (Pointwise(3, 4, rng), _grid(rng)),
    "linear": lambda rng: (Linear(8, 6, rng), _tokens(rng)),
    "relu": lambda rng: (ReLU(), _grid(rng)),
    "layernorm": lambda rng: (LayerNorm(8), _tokens(rng)),
    "mhsa": lambda rng: (MultiHeadSelfAttention(8, 2, rng), _tokens(rng)),
    "spectral_conv": lambda rng: (SpectralConv2d(3, 4, 3, rng), _grid(rng)),
    "residual_block": lambda rng: (ResidualBlock(4, rng), _grid(rng, 4)),
    "fourier_block": lambda rng: (FourierBlock(4, 3, rng), _grid(rng, 4)),
    "transformer_block": lambda rng: (TransformerBlock(8, 2, 4, rng), _tokens(rng)),
    "patch_embed": lambda rng: (PatchEmbed(2, 4, 8, 4, rng), _grid(rng, 2)),
    "cnn": _model_case("cnn"),
    "fno": _model_case("fno"),
    "cnn-vit": _model_case("cnn-vit"),
}


def run_case(name, seeds=SEEDS, max_coords=400):
    """Worst error over ``seeds`` for one case; returns a summary dict."""
    t0 = time.perf_counter()
    worst, checked, skipped, tensor = 0.0, 0, 0, ""
    for seed in seeds:
        layer, x = CASES[name](np.random.default_rng(seed))
        res = grad_check_report(layer, x, seed=seed, max_coords=max_coords)
        checked += res.checked
        skipped += res.skipped_kinks
        if res.max_rel_error >= worst:
            worst, tensor = res.max_rel_error, res.worst_tensor
    return {
        "layer": name,
        "max_rel_error": worst,
        "worst_tensor": tensor,
        "checked": checked,
        "skipped_kinks": skipped,
        "seconds": time.perf_counter() - t0,
        "passed": worst <= THRESHOLD,
    }


def run_all(names=None, seeds=SEEDS):
    return [run_case(n, seeds) for n in (names or CASES)]


def format_table(results):
    lines = [f"{'layer':<18} {'max rel err':>12} {'checked':>8} {'kinks':>6}  result"]
    for r in results:
        lines.append(
            f"{r['layer']:<18} {r['max_rel_error']:>12.3e} {r['checked']:>8d} {r['skipped_kinks']:>6d}  "
            + ("PASS" if r["passed"] else "FAIL")
        )
    return "\n".join(lines)
