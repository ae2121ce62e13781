import numpy as np

from downscalebench.data import PairSet
from downscalebench.grid import avg_pool
from downscalebench.synth import make_field

# smooth enough that the HR field is (almost) a function of its 2x pooled
# version, so the pairs are memorisable by a few hundred parameters
PROBE_SIZE = 32
PROBE_LR = 5e-3
PROBE_STEPS = 500


def overfit_pairs(n=8, seed=0):
    rng = np.random.default_rng(seed)
    hr = np.stack([make_field("gaussian-bumps", rng, PROBE_SIZE, sigma=(8.0, 16.0)) for _ in range(n)])
    hr = ((hr - hr.mean()) / hr.std())[:, None].astype(np.float32)
    return PairSet(avg_pool(hr, 2).astype(np.float32), hr, ["tas"] * n, ["synthetic"] * n)

# PASS/FAIL lines collected by the acceptance suite
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
