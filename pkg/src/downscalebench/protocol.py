"""Transferability protocols: spec validation, the runner and metrics reports.

A protocol trains (or loads) one model per family and scale on the training
manifests, then evaluates it on a held-out manifest, either as-is
(zero-shot) or after fine-tuning on a fraction of the held-out training
split. Leakage between the held-out item and the training scope is checked
from manifest metadata alone, before any data is read or generated.
"""

import hashlib
import json
import logging
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, grd
from .data import (
    DACH,
    DatasetManifest,
    PairSet,
    as_region,
    compute_norm_stats,
    load_manifest,
    load_pairs,
    save_stats,
)
from .errors import ConfigError, ProtocolError
from .metrics import Bicubic, evaluate_model, mse, predict
from .models import SCALES, ArchitectureSpec, build, canonical_family, copy_model
from .optim import TrainingConfig, fine_tune, train
from .synth import synth_dataset

log = logging.getLogger(__name__)

KINDS = ("spatial", "variable", "product", "two-simulation")
MODES = ("zero-shot", "fine-tune")
MODE_LABELS = {"zero-shot": "ZS", "fine-tune": "FT"}
MODEL_NAMES = ("cnn", "fno", "cnn-vit", "bicubic")


def _canonical_model(name):
    if str(name).lower() == "bicubic":
        return "bicubic"
    return canonical_family(name)


@dataclass
class ManifestInfo:
    """What leakage checks need to know about a manifest, without its data."""

    name: str
    variables: list
    region: object
    files: list = field(default_factory=list)


def manifest_info(ref, base_dir=None):
    """Metadata for a manifest reference (path or ``{"synth": {...}}``)."""
    if isinstance(ref, DatasetManifest):
        return ManifestInfo(ref.name, list(ref.variables), ref.region, [str(ref.path(i)) for i in ref.indices()])
    if isinstance(ref, dict):
        if "synth" not in ref:
            raise ConfigError(f"manifest entry {ref!r} is neither a path nor a synth directive")
        kw = ref["synth"]
        kind = kw.get("kind")
        if not kind:
            raise ConfigError("synth directive needs a 'kind'")
        return ManifestInfo(
            kw.get("product") or f"synthetic-{kind}",
            [kw.get("variable", "tas")],
            as_region(kw.get("region", DACH)),
        )
    path = _resolve(ref, base_dir)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    m = load_manifest(path)
    return ManifestInfo(m.name, list(m.variables), m.region, [str(m.path(i).resolve()) for i in m.indices()])


def _resolve(p, base_dir):
    p = Path(p)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    return p


@dataclass
class ProtocolSpec:
    kind: str
    train_manifests: list
    eval_manifest: object
    held_out: object = None
    scales: list = field(default_factory=lambda: [2, 8])
    modes: list = field(default_factory=lambda: ["zero-shot"])
    fine_tune_fraction: float = 0.30
    models: list = field(default_factory=lambda: list(MODEL_NAMES))
    seed: int = 0
    architectures: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    fine_tuning: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)
    train_models: bool = True
    patch: int = 64
    eval_limit: int = None
    train_limit: int = None
    error_grids: bool = False
    name: str = ""
    base_dir: object = None

    def __post_init__(self):
        problems = []
        if self.kind not in KINDS:
            problems.append(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.train_manifests:
            problems.append("train_manifests is empty")
        if self.eval_manifest is None:
            problems.append("eval_manifest is missing")
        bad = [s for s in self.scales if s not in SCALES]
        if bad or not self.scales:
            problems.append(f"scales must be a non-empty subset of {SCALES}, got {self.scales}")
        bad = [m for m in self.modes if m not in MODES]
        if bad or not self.modes:
            problems.append(f"modes must be a non-empty subset of {MODES}, got {self.modes}")
        if not 0 < self.fine_tune_fraction <= 1:
            problems.append(f"fine_tune_fraction must lie in (0, 1], got {self.fine_tune_fraction}")
        try:
            self.models = [_canonical_model(m) for m in self.models]
        except ConfigError as exc:
            problems.append(str(exc))
        if not self.models:
            problems.append("models is empty")
        if self.kind in ("spatial", "variable", "product") and self.held_out is None:
            problems.append(f"a {self.kind} protocol needs held_out")
        if problems:
            raise ConfigError("invalid protocol spec: " + "; ".join(problems))
        self.scales = [int(s) for s in self.scales]

    def to_dict(self):
        return {
            "name": self.name,
            "kind": self.kind,
            "train_manifests": [_ref_json(r) for r in self.train_manifests],
            "eval_manifest": _ref_json(self.eval_manifest),
            "held_out": self.held_out.to_dict() if hasattr(self.held_out, "to_dict") else self.held_out,
            "scales": list(self.scales),
            "modes": list(self.modes),
            "fine_tune_fraction": self.fine_tune_fraction,
            "models": list(self.models),
            "seed": self.seed,
            "architectures": self.architectures,
            "training": self.training,
            "fine_tuning": self.fine_tuning,
            "checkpoints": self.checkpoints,
            "train_models": self.train_models,
            "patch": self.patch,
            "eval_limit": self.eval_limit,
            "train_limit": self.train_limit,
            "error_grids": self.error_grids,
        }

    @classmethod
    def from_dict(cls, d, base_dir=None):
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown protocol spec fields: {sorted(unknown)}")
        for key in ("kind", "train_manifests", "eval_manifest"):
            if key not in d:
                raise ConfigError(f"protocol spec is missing {key!r}")
        return cls(**d, base_dir=base_dir)

    def spec_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def arch_spec(self, family, scale):
        over = dict(self.architectures.get(family, {}))
        over.update(family=family, scale_factor=scale, hr_size=self.patch)
        return ArchitectureSpec.from_dict(over)

    def training_config(self, fine=False):
        cfg = dict(self.training)
        if fine:
            cfg.update(self.fine_tuning)
        cfg.setdefault("seed", self.seed)
        return TrainingConfig.from_dict(cfg)


def _ref_json(ref):
    return str(ref) if isinstance(ref, Path) else ref


def load_protocol(path):
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return ProtocolSpec.from_dict(raw, base_dir=path.parent)


# -- leakage -----------------------------------------------------------------


def check_leakage(p):
    """Raise ProtocolError if the held-out item reaches the training scope.

    Uses manifest metadata only; no samples are read or synthesised.
    """
    train = [manifest_info(r, p.base_dir) for r in p.train_manifests]
    ev = manifest_info(p.eval_manifest, p.base_dir)
    if p.kind == "spatial":
        held = as_region(p.held_out)
        for t in train:
            if t.region.overlaps(held):
                raise ProtocolError(f"held-out region {held} overlaps training region of {t.name!r} ({t.region})")
        if not held.contains(ev.region):
            raise ProtocolError(f"evaluation region {ev.region} is not inside the held-out region {held}")
    elif p.kind == "variable":
        for t in train:
            if p.held_out in t.variables:
                raise ProtocolError(f"held-out variable {p.held_out!r} appears in training manifest {t.name!r}")
        if p.held_out not in ev.variables:
            raise ProtocolError(f"evaluation manifest {ev.name!r} does not contain variable {p.held_out!r}")
    else:
        held = ev.name if p.held_out is None else p.held_out
        for t in train:
            if t.name == held:
                raise ProtocolError(f"held-out product {held!r} is also a training product")
        if ev.name != held:
            raise ProtocolError(f"evaluation manifest is {ev.name!r}, not the held-out product {held!r}")
    eval_files = set(ev.files)
    for t in train:
        shared = eval_files.intersection(t.files)
        if shared:
            raise ProtocolError(f"{len(shared)} evaluation files also listed in training manifest {t.name!r}")
    return train, ev


# -- report ------------------------------------------------------------------


@dataclass
class MetricsReport:
    protocol: str
    kind: str
    rows: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def row(self, model, scale, mode):
        for r in self.rows:
            if (r["model"], r["scale"], r["mode"]) == (model, scale, mode):
                return r
        raise KeyError((model, scale, mode))

    def check(self, models, scales, modes):
        for m in models:
            for s in scales:
                for mode in modes:
                    r = self.row(m, s, mode)
                    if r["mse"] < 0 or r["r2"] > 1:
                        raise ValueError(f"row {m} x{s} {mode} out of range: {r}")

    def to_dict(self):
        return {"protocol": self.protocol, "kind": self.kind, "rows": self.rows, "provenance": self.provenance}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(d["protocol"], d["kind"], list(d["rows"]), dict(d["provenance"]))

    def to_text(self):
        """Aligned table: one line per (mode, model), R^2 and MSE per scale."""
        scales = sorted({r["scale"] for r in self.rows})
        modes = [m for m in MODES if any(r["mode"] == m for r in self.rows)]
        models = list(dict.fromkeys(r["model"] for r in self.rows))
        head = ["mode", "model"]
        for s in scales:
            head += [f"{s}x R2", f"{s}x MSE"]
        lines = []
        for mode in modes:
            for m in models:
                cells = [MODE_LABELS[mode], m]
                for s in scales:
                    try:
                        r = self.row(m, s, mode)
                        cells += [f"{r['r2']:.4f}", f"{r['mse']:.5f}"]
                    except KeyError:
                        cells += ["-", "-"]
                lines.append(cells)
        widths = [max(len(row[i]) for row in [head] + lines) for i in range(len(head))]

        def fmt(cells):
            return "  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))

        title = f"{self.protocol or self.kind} ({self.kind})"
        return "\n".join([title, fmt(head), "  ".join("-" * w for w in widths)] + [fmt(c) for c in lines]) + "\n"

    def save(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(self.to_json())
        (out_dir / "report.txt").write_text(self.to_text())
        return out_dir / "report.json"


# -- error grids -------------------------------------------------------------


def emit_error_grids(model, eval_set, out_dir, threads=1):
    """Write ``pred_NNNNN.grd`` and ``err_NNNNN.grd`` (|pred - target|) per sample.

    Returns the per-sample MSE list, in normalised units.
    """
    if len(eval_set) == 0:
        raise ConfigError("evaluation set is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pred = predict(model, eval_set.lr, threads)
    per_sample = []
    for i in range(len(eval_set)):
        p = pred[i, 0].astype(np.float32)
        err = np.abs(p.astype(np.float64) - eval_set.hr[i, 0]).astype(np.float32)
        meta = {"variable": eval_set.variables[i], "source": eval_set.sources[i], "units": "normalized"}
        grd.write_grd(out_dir / f"pred_{i:05d}.grd", p, dict(meta, field="prediction"))
        grd.write_grd(out_dir / f"err_{i:05d}.grd", err, dict(meta, field="absolute-error"))
        per_sample.append(mse(p, eval_set.hr[i, 0]))
    return per_sample


# -- runner ------------------------------------------------------------------


def _materialise(ref, base_dir, data_dir, tag):
    if isinstance(ref, DatasetManifest):
        return ref
    if isinstance(ref, dict):
        kw = dict(ref["synth"])
        kind = kw.pop("kind")
        n = kw.pop("n", 100)
        size = kw.pop("size", 64)
        seed = kw.pop("seed", 0)
        out = Path(data_dir) / tag
        return synth_dataset(kind, n, size, seed, out, **kw)
    return load_manifest(_resolve(ref, base_dir))


def _hash_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _row(model, scale, mode, metrics, eval_set):
    r2v, msev = metrics
    return {
        "model": model,
        "scale": scale,
        "mode": mode,
        "r2": r2v,
        "mse": msev,
        "n_samples": len(eval_set),
        "n_cells": int(eval_set.hr.size),
    }


def run_protocol(p, out_dir=None, threads=1):
    """Run every (model, scale, mode) cell of ``p`` and return a MetricsReport."""
    check_leakage(p)
    tmp = None
    if out_dir is None:
        tmp = tempfile.TemporaryDirectory(prefix="downscalebench-")
        work = Path(tmp.name)
    else:
        work = Path(out_dir)
        work.mkdir(parents=True, exist_ok=True)
    try:
        return _run(p, work, threads, keep=out_dir is not None)
    finally:
        if tmp is not None:
            tmp.cleanup()


def _run(p, work, threads, keep):
    train_ms = [_materialise(r, p.base_dir, work / "data", f"train{i}") for i, r in enumerate(p.train_manifests)]
    eval_m = _materialise(p.eval_manifest, p.base_dir, work / "data", "eval")

    stats = compute_norm_stats(train_ms, "train")
    missing = [v for v in eval_m.variables if v not in stats]
    if missing:
        # a held-out variable has no training-time stats; take them from the
        # target's own training split, never from its test samples
        extra = compute_norm_stats(eval_m, "train")
        stats.update({v: extra[v] for v in missing if v in extra})
    stats_path = work / "stats.json"
    save_stats(stats, stats_path)

    eval_role = "test" if eval_m.indices("test") else None
    if "fine-tune" in p.modes and eval_role is None:
        raise ConfigError("fine-tune mode needs the evaluation manifest to tag held-out samples as 'test'")

    report = MetricsReport(p.name, p.kind)
    ckpt_ids = {}
    for scale in p.scales:
        train_set = _pairs(train_ms, scale, stats, "train", p.patch, p.train_limit)
        eval_set = load_pairs(eval_m, scale, stats, eval_role, p.patch, p.eval_limit)
        target_train = load_pairs(eval_m, scale, stats, "train", p.patch, p.train_limit) if "fine-tune" in p.modes else None
        for name in p.models:
            if name == "bicubic":
                metrics = evaluate_model(Bicubic(scale), eval_set, threads)
                for mode in p.modes:
                    report.rows.append(_row(name, scale, mode, metrics, eval_set))
                continue
            model = _obtain(p, name, scale, train_set, work, keep)
            ckpt_ids[f"{name}@{scale}/zero-shot"] = checkpoint.checkpoint_id(model)
            for mode in p.modes:
                m = model
                if mode == "fine-tune":
                    m = copy_model(model)
                    ft_dir = work / "runs" / f"{name}_x{scale}_ft" if keep else None
                    fine_tune(m, target_train, p.training_config(fine=True), p.fine_tune_fraction, out_dir=ft_dir)
                    ckpt_ids[f"{name}@{scale}/fine-tune"] = checkpoint.checkpoint_id(m)
                metrics = evaluate_model(m, eval_set, threads)
                report.rows.append(_row(name, scale, mode, metrics, eval_set))
                log.info("%s x%d %s: r2 %.4f mse %.5f", name, scale, mode, *metrics)
                if p.error_grids and keep:
                    emit_error_grids(m, eval_set, work / "grids" / f"{name}_x{scale}_{mode}", threads)

    report.rows.sort(key=lambda r: (MODES.index(r["mode"]), r["scale"], p.models.index(r["model"])))
    report.provenance = {
        "spec_hash": p.spec_hash(),
        "stats_hash": _hash_file(stats_path),
        "checkpoints": ckpt_ids,
        "eval_manifest": eval_m.name,
        "train_manifests": [m.name for m in train_ms],
    }
    report.check(p.models, p.scales, p.modes)
    if keep:
        (work / "protocol.json").write_text(json.dumps(p.to_dict(), indent=1, sort_keys=True) + "\n")
        report.save(work)
    return report


def _pairs(manifests, scale, stats, role, patch, limit):
    return PairSet.concat([load_pairs(m, scale, stats, role, patch, limit) for m in manifests])


def _obtain(p, name, scale, train_set, work, keep):
    key = f"{name}@{scale}"
    if key in p.checkpoints:
        path = _resolve(p.checkpoints[key], p.base_dir)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint for {key} not found: {path}")
        model, _ = checkpoint.load(path)
        if model.spec.family != name or model.spec.scale_factor != scale:
            raise ConfigError(f"checkpoint {path} holds {model.spec.family} x{model.spec.scale_factor}, not {key}")
        return model
    if not p.train_models:
        raise FileNotFoundError(f"no checkpoint given for {key} and training is disabled")
    model = build(p.arch_spec(name, scale), p.seed)
    run_dir = work / "runs" / f"{name}_x{scale}" if keep else None
    train(model, train_set, None, p.training_config(), out_dir=run_dir)
    return model
