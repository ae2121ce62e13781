import json

import numpy as np
import pytest

from downscalebench import cli
from downscalebench.layers import functional


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def data(tmp_path):
    out = tmp_path / "d"
    assert run("synth", "--n", 10, "--size", 16, "--out", out, "--test-fraction", 0.2) == 0
    return out / "manifest.json"


def test_synth_writes_manifest_and_config(data, capsys):
    m = json.loads(data.read_text())
    assert len(m["sample_files"]) == 10 and m["split_tags"].count("test") == 2
    assert len(list(data.parent.glob("*.grd"))) == 10
    cfg = json.loads((data.parent / "run_config.json").read_text())
    assert cfg["n"] == 10 and cfg["kind"] == "gaussian-bumps" and cfg["command"] == "synth"


def test_synth_is_byte_reproducible(tmp_path):
    for name in ("a", "b"):
        assert run("synth", "--n", 3, "--size", 16, "--seed", 4, "--out", tmp_path / name) == 0
    for f in sorted((tmp_path / "a").iterdir()):
        if f.name != "run_config.json":
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


@pytest.mark.parametrize(
    "argv",
    [
        ["synth", "--size", "48"],
        ["synth", "--n", "0"],
        ["synth", "--kind", "white-noise"],
        ["synth", "--region", "ATLANTIS"],
        ["train", "--arch", "unet"],
        ["train", "--scale", "4"],
        ["train"],
        ["protocol"],
        ["protocol", "--spec", "no/such/file.json"],
        ["protocol", "--spec", "bundled:nothing"],
        ["gradcheck"],
        ["gradcheck", "--layer", "conv3d"],
        ["frobnicate"],
    ],
)
def test_usage_errors_exit_2(argv, tmp_path, capsys):
    assert cli.main(argv + ["--out", str(tmp_path / "o")] if argv[0] != "frobnicate" else argv) == 2
    assert capsys.readouterr().err


def test_train_smoke_and_determinism(data, tmp_path, capsys):
    argv = ["train", "--manifest", data, "--arch", "cnn", "--width", 4, "--depth", 1, "--epochs", 2,
            "--batch-size", 4, "--patch", 16]
    assert run(*argv, "--out", tmp_path / "a") == 0
    out_a = capsys.readouterr().out
    assert run(*argv, "--out", tmp_path / "b") == 0
    out_b = capsys.readouterr().out
    hist = [json.loads(x) for x in out_a.splitlines() if x.startswith("{")]
    assert [h["epoch"] for h in hist] == [1, 2]
    assert "bicubic" in out_a
    strip = lambda s: [json.loads(x)["train_loss"] for x in s.splitlines() if x.startswith("{")]
    assert strip(out_a) == strip(out_b)
    for name in ("latest.ckpt", "stats.json", "run_config.json", "history.jsonl"):
        assert (tmp_path / "a" / name).exists()
    assert (tmp_path / "a" / "latest.ckpt").read_bytes() == (tmp_path / "b" / "latest.ckpt").read_bytes()


def test_config_file_and_flag_precedence(data, tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"arch": "fno", "width": 4, "depth": 1, "modes": 4, "epochs": 3, "patch": 16}))
    out = tmp_path / "o"
    assert run("train", "--config", conf, "--manifest", data, "--epochs", 1, "--out", out) == 0
    cfg = json.loads((out / "run_config.json").read_text())
    assert cfg["arch"] == "fno" and cfg["epochs"] == 1 and cfg["lr"] == 1e-3
    assert len((out / "history.jsonl").read_text().splitlines()) == 1


def test_config_file_rejects_unknown_keys(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"colour": "blue"}))
    assert run("synth", "--config", conf, "--out", tmp_path / "o") == 2


def _write_spec(tmp_path, eval_kind):
    spec = {
        "kind": "two-simulation",
        "train_manifests": [{"synth": {"kind": "gaussian-bumps", "n": 6, "size": 32}}],
        "eval_manifest": {"synth": {"kind": eval_kind, "n": 6, "size": 32, "seed": 1, "test_fraction": 0.5}},
        "scales": [2],
        "models": ["bicubic"],
        "patch": 32,
    }
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    return path


def test_protocol_runs_a_spec(tmp_path, capsys):
    out = tmp_path / "o"
    assert run("protocol", "--spec", _write_spec(tmp_path, "anisotropic-bumps"), "--out", out) == 0
    assert "bicubic" in capsys.readouterr().out
    report = json.loads((out / "report.json").read_text())
    assert [r["model"] for r in report["rows"]] == ["bicubic"]


def test_protocol_leakage_exits_1(tmp_path, capsys):
    out = tmp_path / "o"
    assert run("protocol", "--spec", _write_spec(tmp_path, "gaussian-bumps"), "--out", out) == 1
    assert "protocol error" in capsys.readouterr().err
    assert not (out / "data").exists()


def test_malformed_spec_is_a_usage_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("protocol", "--spec", bad, "--out", tmp_path / "o") == 2


def test_gradcheck_single_layer(tmp_path, capsys):
    assert run("gradcheck", "--layer", "conv2d", "--seeds", 2, "--out", tmp_path) == 0
    assert "conv2d" in capsys.readouterr().out
    res = json.loads((tmp_path / "gradcheck.json").read_text())
    assert res[0]["passed"] and res[0]["max_rel_error"] <= 1e-3


def test_gradcheck_all(capsys):
    assert run("gradcheck", "--all", "--seeds", 1) == 0
    out = capsys.readouterr().out
    for name in ("conv2d", "mhsa", "spectral_conv", "cnn", "fno", "cnn-vit"):
        assert name in out


def test_gradcheck_catches_a_broken_backward(monkeypatch, capsys):
    orig = functional.conv2d_backward

    def broken(ctx, dy):
        dx, dw, db = orig(ctx, dy)
        return dx, dw * np.float32(1.05), db

    monkeypatch.setattr(functional, "conv2d_backward", broken)
    assert run("gradcheck", "--layer", "conv2d", "--seeds", 1) == 1
    assert "FAIL" in capsys.readouterr().out
