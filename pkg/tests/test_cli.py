import hashlib
import subprocess
import sys

import pytest

from stylerec.cli import main
from stylerec.config import ConfigError, describe_defaults, load_config
from stylerec.dynamic_model import TrainConfigDyn
from stylerec.static_model import StaticConfig, load_static, save_static
from stylerec.synthgen import GenConfig

TINY = """\
[run]
seed = 5
[gen]
customers = 50
articles = 120
tags = 10
fibers = 3
latent = 4
horizon_days = 150
archetypes = 4
shop_rate = 20
[static]
hidden = 16
dim = 6
epochs = 2
batch = 32
[dynamic]
hidden = 6
epochs = 1
n = 4
"""


def _run(*argv):
    return main([*argv, "-q"])


def _hashes(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.ini").write_text(TINY)
    out = root / "out"
    for cmd in ("gen", "train-static", "train-dynamic", "eval", "report"):
        assert _run(cmd, "--config", str(root / "tiny.ini"), "--out", str(out)) == 0, cmd
    return root, out


# ---------------------------------------------------------------- config


def test_defaults_round_trip_through_the_parser():
    cfg = load_config(text=describe_defaults())
    assert cfg.gen == GenConfig(seed=0)
    assert cfg.static == StaticConfig(seed=0)
    assert cfg.dynamic == TrainConfigDyn(seed=0)
    assert cfg.window == GenConfig().test_window


def test_config_errors():
    with pytest.raises(ConfigError, match="seed"):
        load_config(text="[gen]\ncustomers = 3\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(text="[run]\nseed = 1\n[static]\nepoch = 3\n")
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(text="[run]\nseed = 1\n[train]\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(text="[run]\nseed = 1\n[dynamic]\nhidden = many\n")
    with pytest.raises(ConfigError):
        load_config(text="[run]\nseed = 1\n[dynamic]\nloss = hinge\n")
    with pytest.raises(ConfigError, match="window"):
        load_config(text="[run]\nseed = 1\n[eval]\nwindow_start = 10\nwindow_end = 10\n")
    with pytest.raises(ConfigError, match="range"):
        load_config(text="[run]\nseed = -1\n")


def test_seed_override_and_u64_range():
    cfg = load_config(text="[run]\nseed = 1\n", seed=str(2**64 - 1))
    assert cfg.seed == cfg.gen.seed == cfg.static.seed == cfg.dynamic.seed == 2**64 - 1
    cfg = load_config(text="[static]\nhidden = 32, 16\n", seed="3")
    assert cfg.static.hidden == (32, 16)


# ---------------------------------------------------------------- commands


def test_missing_seed_rejected_before_writing(tmp_path, capsys):
    out = tmp_path / "o"
    assert _run("gen", "--out", str(out)) == 2
    assert not out.exists()
    assert "seed" in capsys.readouterr().err


def test_gen_is_deterministic(tmp_path):
    (tmp_path / "c.ini").write_text(TINY)
    for d in ("a", "b"):
        assert _run("gen", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / d)) == 0
    assert len(list((tmp_path / "a").iterdir())) == 4
    assert _hashes(tmp_path / "a") == _hashes(tmp_path / "b")


def test_dynamic_before_static_is_a_dependency_error(tmp_path, capsys):
    (tmp_path / "c.ini").write_text(TINY)
    assert _run("gen", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)) == 0
    assert _run("train-dynamic", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)) == 3
    assert "static checkpoint" in capsys.readouterr().err
    assert _run("eval", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)) == 3
    assert _run("report", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)) == 3


def test_pipeline_outputs(pipeline):
    root, out = pipeline
    names = {p.name for p in out.iterdir()}
    assert names == {"catalog.tsv", "schema.tsv", "sales.tsv", "truth.tsv", "static.ckpt", "dynamic.ckpt",
                     "static_loss.tsv", "dynamic_loss.tsv", "metrics.tsv", "report.md",
                     "roc_baseline.tsv", "roc_static.tsv", "roc_dynamic.tsv", "roc_oracle.tsv"}
    log = (out / "static_loss.tsv").read_text().splitlines()
    assert log[0] == "epoch\ttrain_loss\tval_loss" and len(log) == 1 + 3
    report = (out / "report.md").read_text()
    assert "| dynamic |" in report and "#params" in report


def test_static_checkpoint_round_trips(pipeline, tmp_path):
    _, out = pipeline
    save_static(tmp_path / "again.ckpt", load_static(out / "static.ckpt"), seed=5)
    assert (tmp_path / "again.ckpt").read_bytes() == (out / "static.ckpt").read_bytes()


def test_commands_are_idempotent_and_leave_inputs_alone(pipeline):
    root, out = pipeline
    before = _hashes(out)
    for cmd in ("train-static", "train-dynamic", "eval", "report"):
        assert _run(cmd, "--config", str(root / "tiny.ini"), "--out", str(out)) == 0
    assert _hashes(out) == before


def test_eval_baseline_only(pipeline, tmp_path):
    root, out = pipeline
    for name in ("catalog.tsv", "schema.tsv", "sales.tsv"):
        (tmp_path / name).write_bytes((out / name).read_bytes())
    assert _run("eval", "--config", str(root / "tiny.ini"), "--out", str(tmp_path), "--models", "baseline") == 0
    assert sorted(p.name for p in tmp_path.glob("roc_*")) == ["roc_baseline.tsv"]
    rows = (tmp_path / "metrics.tsv").read_text().splitlines()
    assert len(rows) == 2 and rows[1].split("\t")[5] == "-"


def test_empty_window_is_an_undefined_auc(pipeline, tmp_path, capsys):
    root, out = pipeline
    cfg = TINY + "[eval]\nwindow_start = -900000\nwindow_end = -800000\n"
    (tmp_path / "c.ini").write_text(cfg)
    for name in ("catalog.tsv", "schema.tsv", "sales.tsv", "truth.tsv"):
        (tmp_path / name).write_bytes((out / name).read_bytes())
    assert _run("eval", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path), "--models", "baseline") == 2
    assert "undefined AUC" in capsys.readouterr().err


def test_numerical_abort_exit_code(pipeline, tmp_path):
    root, out = pipeline
    for name in ("catalog.tsv", "schema.tsv", "sales.tsv"):
        (tmp_path / name).write_bytes((out / name).read_bytes())
    (tmp_path / "c.ini").write_text(TINY.replace("[static]\n", "[static]\nlr = 1e300\n"))
    with pytest.warns(RuntimeWarning):
        assert _run("train-static", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path)) == 4
    assert not (tmp_path / "static.ckpt").exists()


def test_console_entry_point_runs(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "stylerec.cli", "print-config"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "[dynamic]" in proc.stdout and "hidden = 256" in proc.stdout
