import csv
import io
import json
import os
import re

import numpy as np
import pytest

from cocl import cli
from cocl import eval as V
from cocl.errors import ConfigError

MINIMAL = """\
[run]
seed = 0
run_id = tiny

[data]
source = synthetic
num_classes = 4
per_class = 12
size = 8
noise = 0.1
shift = 0
background = 0.0
classes_per_task = 2

[model]
encoder_hidden = 16
embed_dim = 8
proj_hidden = 8
proj_dim = 4
input_shift = 0.5
input_scale = 0.25

[train]
lr = 0.003
batch_size = 8
epochs_first = 2
epochs_rest = 2
warmup_epochs = 1
buffer_size = 8

[eval.probe]
epochs = 5
lr = 0.1
decay_epochs = 3

[ablate]
seeds = 0 1
lambdas = 0 1
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(MINIMAL)
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_run_writes_artefacts(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert run("run", "--config", config, "--out", out) == cli.EXIT_OK
    mat = V.matrix_from_csv((out / "accuracy_matrix.csv").read_text())
    assert mat.shape == (2, 2)
    assert np.all((0 <= mat) & (mat <= 1))
    summary = json.loads((out / "summary.json").read_text())
    assert summary["accuracy_matrix"] == mat.tolist()
    assert summary["buffer_occupancy"][-1] == {"0": 2, "1": 2, "2": 2, "3": 2}
    assert summary["config"]["train"]["lr"] == 0.003
    rows = list(csv.reader(io.StringIO((out / "metrics.csv").read_text())))
    assert tuple(rows[0]) == cli.METRICS_HEADER
    assert len(rows) == 1 + 4
    assert sorted(os.listdir(out / "checkpoints")) == [
        "task01.ckpt", "task01.ckpt.json", "task02.ckpt", "task02.ckpt.json"]
    assert "final average accuracy" in capsys.readouterr().out


def test_run_is_deterministic(config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("run", "--config", config, "--out", a) == 0
    assert run("run", "--config", config, "--out", b) == 0

    def strip_timing(text):
        return [r[:-1] for r in csv.reader(io.StringIO(text))]

    assert strip_timing((a / "metrics.csv").read_text()) == strip_timing((b / "metrics.csv").read_text())
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    assert (a / "checkpoints" / "task02.ckpt").read_bytes() == (b / "checkpoints" / "task02.ckpt").read_bytes()


def test_seed_override_changes_run(config, tmp_path):
    run("run", "--config", config, "--out", tmp_path / "a")
    run("run", "--config", config, "--out", tmp_path / "b", "--seed", "5")
    sa = json.loads((tmp_path / "a" / "summary.json").read_text())
    sb = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert sb["config"]["train"]["seed"] == 5 and sa["config"]["train"]["seed"] == 0


def test_missing_config_exit_code(tmp_path, capsys):
    missing = tmp_path / "nope.ini"
    assert run("run", "--config", missing) == cli.EXIT_CONFIG
    assert str(missing) in capsys.readouterr().err


def test_missing_data_file_exit_code(tmp_path, capsys):
    path = tmp_path / "exp.ini"
    path.write_text("[data]\nsource = idx\ntrain_images = gone.idx\ntrain_labels = gone2.idx\n")
    assert run("run", "--config", path, "--out", tmp_path / "o") == cli.EXIT_CONFIG
    assert "gone.idx" in capsys.readouterr().err


def test_malformed_data_exit_code(tmp_path, capsys):
    (tmp_path / "bad.bin").write_bytes(b"\x00" * 100)
    path = tmp_path / "exp.ini"
    path.write_text("[data]\nsource = cifar10\ntrain_files = bad.bin\ntest_files = bad.bin\n")
    assert run("run", "--config", path, "--out", tmp_path / "o") == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "bad.bin" in err and "offset 0" in err


def test_unknown_keys_and_sections(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[train]\nlearning_rate = 0.1\n")
    with pytest.raises(ConfigError, match="learning_rate"):
        cli.load_config(str(path))
    path.write_text("[trian]\nlr = 0.1\n")
    with pytest.raises(ConfigError, match="trian"):
        cli.load_config(str(path))
    path.write_text("[train]\nlr = fast\n")
    with pytest.raises(ConfigError, match="fast"):
        cli.load_config(str(path))
    path.write_text("[train.loss]\ntau = 0\n")
    with pytest.raises(ConfigError):
        cli.load_config(str(path))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(config, tmp_path, capsys):
    text = MINIMAL.replace("lr = 0.003", "lr = 1e12")
    config.write_text(text)
    assert run("run", "--config", config, "--out", tmp_path / "o") == cli.EXIT_DIVERGED
    err = capsys.readouterr().err
    assert re.search(r"diverged at task \d+, epoch \d+", err)


def test_config_values(config):
    cfg = cli.load_config(str(config))
    assert cfg.train.buffer_size == 8 and cfg.seeds == (0, 1)
    assert cfg.model["encoder_hidden"] == (16,)
    assert cfg.probe.decay_epochs == (3,)
    inf = config.read_text().replace("buffer_size = 8", "buffer_size = inf")
    config.write_text(inf)
    assert cli.load_config(str(config)).train.buffer_size is None


def test_ablation_labels(config):
    cfg = cli.load_config(str(config))
    cells = cli.ablation_cells(cfg, "ird-buffer")
    assert [c[0] for c in cells] == ["(a)", "(b)", "(c)", "(d)"]
    a, b, c, d = (c[1] for c in cells)
    assert (a.use_buffer, a.preserve) == (False, "none")
    assert (b.use_buffer, b.preserve) == (False, "ird")
    assert (c.use_buffer, c.preserve) == (True, "none")
    assert (d.use_buffer, d.preserve, d.symmetric) == (True, "ird", False)
    sweep = cli.ablation_cells(cfg, "lambda-sweep")
    assert [s[0] for s in sweep] == ["lam=0 sym", "lam=0 asym", "lam=1 sym", "lam=1 asym"]
    assert all(s[1].buffer_size is None for s in sweep)
    with pytest.raises(ConfigError):
        cli.ablation_cells(cfg, "nope")


def test_empty_grid_and_seeds(config):
    cfg = cli.load_config(str(config))
    with pytest.raises(ConfigError, match="empty grid"):
        cli.run_cells(cfg, [], "unused", "cell")
    from dataclasses import replace

    with pytest.raises(ConfigError, match="seeds"):
        cli.run_cells(replace(cfg, seeds=()), cli.ablation_cells(cfg, "ird-buffer"), "unused", "cell")
    with pytest.raises(ConfigError, match="lambdas"):
        cli.ablation_cells(replace(cfg, lambdas=()), "lambda-sweep")


def test_ablate_verb(config, tmp_path, capsys):
    out = tmp_path / "ab"
    assert run("ablate", "--config", config, "--out", out) == 0
    rows = list(csv.DictReader(io.StringIO((out / "ablation_ird-buffer.csv").read_text())))
    assert [r["cell"] for r in rows] == ["(a)", "(b)", "(c)", "(d)"]
    assert all(r["n"] == "2" for r in rows)
    assert "±" in capsys.readouterr().out


def test_compare_verb(config, tmp_path):
    text = config.read_text() + "\n[compare]\nmodes = ird seed mse_emb mse_proj\n"
    config.write_text(text.replace("seeds = 0 1", "seeds = 0"))
    out = tmp_path / "cmp"
    assert run("compare-preservation", "--config", config, "--out", out) == 0
    rows = list(csv.DictReader(io.StringIO((out / "preservation.csv").read_text())))
    assert [r["mode"] for r in rows] == ["ird", "seed", "mse_emb", "mse_proj"]


def test_eval_matrix_verb(config, tmp_path, capsys):
    out = tmp_path / "o"
    assert run("run", "--config", config, "--out", out) == 0
    capsys.readouterr()
    assert run("eval-matrix", "--config", config, "--out", out, "--source", "all") == 0
    mat = V.matrix_from_csv((out / "accuracy_matrix_all.csv").read_text())
    assert mat.shape == (2, 2)
    assert "off-diagonal mean" in capsys.readouterr().out
    assert run("eval-matrix", "--config", config, "--checkpoints", tmp_path / "none") == cli.EXIT_CONFIG
