"""Command-line entry point: synth, train, protocol, gradcheck.

Exit codes: 0 success, 1 runtime or protocol failure, 2 usage error.
Options may also come from a JSON file given with --config; explicit flags
win over the file, which wins over built-in defaults. Every command writes
its resolved configuration to the output directory.
"""

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from . import checkpoint, gradchecks
from .data import PairSet, as_region, compute_norm_stats, load_manifest, load_pairs, save_stats, split_validation
from .errors import ConfigError, DownscaleError, ProtocolError
from .metrics import Bicubic, evaluate_model
from .models import FAMILIES, SCALES, ArchitectureSpec, build
from .optim import TrainingConfig, train
from .protocol import load_protocol, run_protocol
from .synth import KINDS, synth_dataset

log = logging.getLogger("downscalebench")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    "synth": {"kind": "gaussian-bumps", "n": 100, "size": 64, "seed": 0, "out": "synth_data",
              "test_fraction": 0.0, "variable": "tas", "region": "DACH"},
    "train": {"arch": "cnn", "scale": 2, "manifest": None, "epochs": 150, "seed": 0, "out": "train_out",
              "batch_size": 32, "lr": 1e-3, "width": None, "depth": None, "modes": None, "heads": None,
              "hidden_dim": None, "patch_size": None, "patch": 64, "val_fraction": 0.1, "checkpoint_every": 0,
              "threads": None},
    "protocol": {"spec": None, "out": "protocol_out", "threads": None},
    "gradcheck": {"all": False, "layer": None, "seeds": 5, "out": None},
}

BUNDLED = {"two-simulation": "two_simulation.json"}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    p = Parser(prog="downscalebench", description="Climate-downscaling workbench.")
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", parser_class=Parser)
    sub.required = True

    def common(sp, threads=False):
        sp.add_argument("--config", help="JSON file of option values; flags override it")
        sp.add_argument("--out", help="output directory")
        if threads:
            sp.add_argument("--threads", type=int, help="evaluation worker threads (default: all cores)")

    s = sub.add_parser("synth", help="write a synthetic dataset and its manifest")
    common(s)
    s.add_argument("--kind", choices=KINDS)
    s.add_argument("--n", type=int)
    s.add_argument("--size", type=int, help="field side length, a power of two")
    s.add_argument("--seed", type=int)
    s.add_argument("--test-fraction", type=float)
    s.add_argument("--variable")
    s.add_argument("--region", help="named region (DACH, NORTH_AMERICA, GLOBE)")

    t = sub.add_parser("train", help="train one model on one or more manifests")
    common(t, threads=True)
    t.add_argument("--arch", choices=FAMILIES)
    t.add_argument("--scale", type=int, choices=SCALES)
    t.add_argument("--manifest", nargs="+")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--width", type=int)
    t.add_argument("--depth", type=int)
    t.add_argument("--modes", type=int)
    t.add_argument("--heads", type=int)
    t.add_argument("--hidden-dim", type=int)
    t.add_argument("--patch-size", type=int, help="CNN-ViT token patch side")
    t.add_argument("--patch", type=int, help="HR training patch side")
    t.add_argument("--val-fraction", type=float)
    t.add_argument("--checkpoint-every", type=int)

    r = sub.add_parser("protocol", help="run a transferability protocol spec")
    common(r, threads=True)
    r.add_argument("--spec", help="protocol JSON, or bundled:NAME (" + ", ".join(BUNDLED) + ")")

    g = sub.add_parser("gradcheck", help="finite-difference checks of every backward pass")
    common(g)
    which = g.add_mutually_exclusive_group()
    which.add_argument("--all", action="store_true", default=None)
    which.add_argument("--layer", help="one of: " + ", ".join(gradchecks.CASES))
    g.add_argument("--seeds", type=int)
    return p


def resolve(args):
    """Defaults <- --config file <- explicit flags."""
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise UsageError(f"unknown keys in {path}: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["command"] = cmd
    return cfg


def echo_config(cfg, out):
    if out is None:
        return
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")


def _threads(cfg):
    return max(1, int(cfg.get("threads") or os.cpu_count() or 1))


# -- commands ----------------------------------------------------------------


def cmd_synth(cfg):
    size, n = int(cfg["size"]), int(cfg["n"])
    if size < 4 or size & (size - 1):
        raise UsageError(f"--size must be a power of two >= 4, got {size}")
    if n < 1:
        raise UsageError(f"--n must be >= 1, got {n}")
    if cfg["kind"] not in KINDS:
        raise UsageError(f"--kind must be one of {KINDS}")
    try:
        region = as_region(cfg["region"])
    except (ConfigError, KeyError) as exc:
        raise UsageError(str(exc)) from exc
    echo_config(cfg, cfg["out"])
    m = synth_dataset(
        cfg["kind"], n, size, int(cfg["seed"]), cfg["out"],
        variable=cfg["variable"], region=region, test_fraction=float(cfg["test_fraction"]),
    )
    print(Path(cfg["out"]) / "manifest.json")
    return m


def _arch_spec(cfg):
    kw = {k: cfg[k] for k in ("width", "depth", "modes", "heads", "hidden_dim", "patch_size") if cfg.get(k) is not None}
    try:
        return ArchitectureSpec(cfg["arch"], scale_factor=int(cfg["scale"]), hr_size=int(cfg["patch"]), **kw)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(cfg):
    if cfg["arch"] not in FAMILIES:
        raise UsageError(f"--arch must be one of {FAMILIES}, got {cfg['arch']!r}")
    if int(cfg["scale"]) not in SCALES:
        raise UsageError(f"--scale must be one of {SCALES}")
    manifests = cfg["manifest"]
    if not manifests:
        raise UsageError("train needs at least one --manifest")
    if isinstance(manifests, str):
        manifests = [manifests]
    for m in manifests:
        if not Path(m).is_file():
            raise UsageError(f"manifest not found: {m}")
    spec = _arch_spec(cfg)
    try:
        tcfg = TrainingConfig(
            learning_rate=float(cfg["lr"]), batch_size=int(cfg["batch_size"]), epochs=int(cfg["epochs"]), seed=int(cfg["seed"])
        )
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(cfg["out"])
    echo_config(cfg, out)

    ms = [load_manifest(m) for m in manifests]
    stats = compute_norm_stats(ms, "train")
    save_stats(stats, out / "stats.json")
    scale, patch = int(cfg["scale"]), int(cfg["patch"])
    pairs = PairSet.concat([load_pairs(m, scale, stats, "train", patch) for m in ms])
    declared_val = [m for m in ms if m.indices("val")]
    if declared_val:
        val = PairSet.concat([load_pairs(m, scale, stats, "val", patch) for m in declared_val])
    else:
        pairs, val = split_validation(pairs, float(cfg["val_fraction"]), int(cfg["seed"]))
    model = build(spec, int(cfg["seed"]))
    hist = train(model, pairs, val, tcfg, out_dir=out, checkpoint_every=int(cfg["checkpoint_every"]))
    for rec in hist.records():
        print(json.dumps(rec))
    if val is not None and len(val):
        r2m, msem = evaluate_model(model, val, _threads(cfg))
        r2b, mseb = evaluate_model(Bicubic(scale), val, _threads(cfg))
        print(f"validation  model r2 {r2m:.4f} mse {msem:.5f}  bicubic r2 {r2b:.4f} mse {mseb:.5f}")
    print(f"checkpoint {out / 'latest.ckpt'} id {checkpoint.checkpoint_id(model)}")
    return hist


def _spec_path(ref):
    if ref is None:
        raise UsageError("protocol needs --spec")
    if str(ref).startswith("bundled:"):
        name = str(ref).split(":", 1)[1]
        if name not in BUNDLED:
            raise UsageError(f"no bundled protocol {name!r}; available: {sorted(BUNDLED)}")
        return Path(str(resources.files("downscalebench") / "protocols" / BUNDLED[name]))
    path = Path(ref)
    if not path.is_file():
        raise UsageError(f"protocol spec not found: {path}")
    return path


def cmd_protocol(cfg):
    path = _spec_path(cfg["spec"])
    try:
        spec = load_protocol(path)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(cfg["out"])
    echo_config(dict(cfg, spec=str(path)), out)
    report = run_protocol(spec, out_dir=out, threads=_threads(cfg))
    print(report.to_text(), end="")
    print(f"report {out / 'report.json'}")
    return report


def cmd_gradcheck(cfg):
    if bool(cfg["all"]) == bool(cfg["layer"]):
        raise UsageError("gradcheck needs exactly one of --all or --layer NAME")
    if cfg["layer"] and cfg["layer"] not in gradchecks.CASES:
        raise UsageError(f"unknown layer {cfg['layer']!r}; expected one of {', '.join(gradchecks.CASES)}")
    seeds = int(cfg["seeds"])
    if seeds < 1:
        raise UsageError("--seeds must be >= 1")
    echo_config(cfg, cfg["out"])
    names = None if cfg["all"] else [cfg["layer"]]
    results = gradchecks.run_all(names, seeds=tuple(range(seeds)))
    print(gradchecks.format_table(results))
    if cfg["out"]:
        (Path(cfg["out"]) / "gradcheck.json").write_text(json.dumps(results, indent=1) + "\n")
    return all(r["passed"] for r in results)


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "protocol": cmd_protocol, "gradcheck": cmd_gradcheck}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve(args)
        result = COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (DownscaleError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if args.command == "gradcheck" and not result:
        return EXIT_FAIL
    return EXIT_OK


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
