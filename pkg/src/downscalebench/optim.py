"""Adam, the mini-batch training loop and fine-tuning on a target subset."""

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 150
    seed: int = 0
    shuffle: bool = True
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got {self.betas}")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, state, cfg):
    """One bias-corrected Adam update of every parameter from its ``grad``."""
    state.t += 1
    b1, b2 = cfg.betas
    c1 = 1 - b1**state.t
    c2 = 1 - b2**state.t
    for p in params:
        key = p.name or id(p)
        if key not in state.m:
            state.m[key] = np.zeros_like(p.value)
            state.v[key] = np.zeros_like(p.value)
        m, v, g = state.m[key], state.v[key], p.grad
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.value -= (cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.value.dtype)
    return params, state


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    step_loss: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def records(self):
        return [
            {"epoch": i + 1, "train_loss": tl, "val_loss": vl, "seconds": round(s, 4)}
            for i, (tl, vl, s) in enumerate(zip(self.train_loss, self.val_loss, self.seconds))
        ]

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")


def _check_compatible(model, pairs):
    lr, hr = pairs.lr[:1], pairs.hr[:1]
    s = model.spec.scale_factor
    if hr.shape[-2:] != (lr.shape[-2] * s, lr.shape[-1] * s):
        raise ShapeError(f"HR shape {hr.shape[-2:]} is not {s}x LR shape {lr.shape[-2:]}")
    model.upsample(lr)


def batch_loss(model, pairs, batch_size=32):
    """Pooled per-cell MSE of ``model`` over ``pairs``, evaluated in fixed batches."""
    total, cells = 0.0, 0
    for i in range(0, len(pairs), batch_size):
        pred = model.forward(pairs.lr[i : i + batch_size]).astype(np.float64)
        diff = pred - pairs.hr[i : i + batch_size]
        total += float(np.sum(diff * diff))
        cells += diff.size
    return total / cells


def train(model, train_set, val_set, cfg, out_dir=None, checkpoint_every=0, state=None):
    """Fit ``model`` in place; returns the per-epoch TrainHistory.

    With ``out_dir`` set, ``latest.ckpt`` is rewritten after every epoch,
    ``epoch_NNNN.ckpt`` every ``checkpoint_every`` epochs, and the history is
    written to ``history.jsonl``.
    """
    if len(train_set) == 0:
        raise ConfigError("training set is empty")
    _check_compatible(model, train_set)
    if val_set is not None and len(val_set):
        _check_compatible(model, val_set)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    state = state or AdamState()
    rng = np.random.default_rng(cfg.seed)
    n = len(train_set)
    hist = TrainHistory()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            loss = model.forward_backward(train_set.lr[idx], train_set.hr[idx])
            adam_step(model.parameters, state, cfg)
            hist.step_loss.append(loss)
            total += loss * len(idx)
        hist.train_loss.append(total / n)
        hist.val_loss.append(batch_loss(model, val_set, cfg.batch_size) if val_set is not None and len(val_set) else None)
        hist.seconds.append(time.perf_counter() - t0)
        log.info("epoch %d train %.6g val %s", epoch, hist.train_loss[-1], hist.val_loss[-1])
        if out_dir:
            record = {"config": cfg.to_dict(), "epoch": epoch}
            checkpoint.save(model, out_dir / "latest.ckpt", training=record)
            if checkpoint_every and epoch % checkpoint_every == 0:
                checkpoint.save(model, out_dir / f"epoch_{epoch:04d}.ckpt", training=record)
    if out_dir:
        hist.write_jsonl(out_dir / "history.jsonl")
    return hist


def subsample_indices(n, fraction, seed):
    """First floor(fraction * n) indices of a seeded permutation, sorted."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"fine-tune fraction must lie in (0, 1], got {fraction}")
    k = int(np.floor(fraction * n + 1e-9))
    if k < 1:
        raise ConfigError(f"fraction {fraction} of {n} samples selects nothing")
    if k == n:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).permutation(n)[:k])


def fine_tune(model, target_train_set, cfg, fraction=0.30, val_set=None, out_dir=None, checkpoint_every=0):
    """Continue training ``model`` on a seeded ``fraction`` of the target data."""
    idx = subsample_indices(len(target_train_set), fraction, cfg.seed)
    return train(model, target_train_set.subset(idx), val_set, cfg, out_dir=out_dir, checkpoint_every=checkpoint_every)
