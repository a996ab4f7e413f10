from __future__ import annotations

import csv
import json

import pytest

from armada import cli
from armada import config as C
from armada.errors import ConfigError

TINY = """\
task.n_train = 40
task.n_test = 60
task.input_dim = 6
teacher.d_t = 5
train.epochs = 1
train.hidden = 6
train.width = 6
train.manifold = 3
sweep.seeds = 0, 1, 2, 3, 4
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


# ---------------------------------------------------------------------------
# config files


def test_empty_config_is_defaults():
    cfg = C.parse_text("")
    assert cfg.train.epochs == 20 and cfg.train.loss.manifold_variant == "euclid"


def test_parse_values_and_comments():
    cfg = C.parse_text("loss.alpha = 0.25  # half\n\ntrain.frozen_aligner = yes\nsweep.sigma = 0, 3\n")
    assert cfg.train.loss.alpha == 0.25 and cfg.train.frozen_aligner is True and cfg.sweep.sigma == [0.0, 3.0]


@pytest.mark.parametrize("text,match", [
    ("loss.nope = 1", r"<config>:1: unknown key 'loss.nope'"),
    ("\ntrain.epochs = many", r"<config>:2: train.epochs: cannot parse"),
    ("train.epochs = 2\ntrain.epochs = 3", "already set on line 1"),
    ("train.epochs", "expected 'key = value'"),
    ("loss.alpha = 2", "alpha"),
    ("loss.task_kind = regression", "unknown key"),
    ("sweep.seeds = ,", "list must not be empty"),
    ("train.frozen_aligner = maybe", "cannot parse"),
])
def test_parse_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        C.parse_text(text)


def test_loss_kind_follows_task():
    assert C.parse_text("task.task_kind = regression").train.loss.task_kind == "regression"


def test_dump_round_trip():
    cfg = C.parse_text(TINY + "loss.manifold_variant = cosine\nteacher.file = reps.armd\n")
    again = C.parse_text(C.dump(cfg))
    assert again == cfg
    assert set(line.split(" =")[0] for line in C.dump(cfg).splitlines()) == set(C.known_keys())


def test_with_seed_shifts_list():
    cfg = C.with_seed(C.parse_text("sweep.seeds = 0, 1, 2"), 10)
    assert cfg.sweep.seeds == [10, 11, 12] and cfg.train.seed == 10


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        C.load(tmp_path / "absent.cfg")


# ---------------------------------------------------------------------------
# command line


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_help_documents_schemas(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["sweep", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    assert "results.csv" in text and "exit codes" in text and "student_main" in text


def test_sweep_writes_every_run(tiny, tmp_path, capsys):
    out = tmp_path / "sweep"
    assert cli.main(["sweep", "--config", str(tiny), "--out", str(out)]) == 0
    rows = _rows(out / "results.csv")
    assert len(rows) == 2 * 2 * 2 * 3 * 5
    assert list(rows[0]) == cli.RESULT_COLUMNS
    assert {r["kind"] for r in rows} == {"distilled"}
    assert len(_rows(out / "baselines.csv")) == 5
    summary = json.loads((out / "summary.json").read_text())
    assert summary["command"] == "sweep"
    assert C.parse_text((out / "config.txt").read_text()) == C.load(tiny)
    run_dirs = list((out / "runs").iterdir())
    assert len(run_dirs) == 125 and all((d / "report.json").exists() for d in run_dirs)
    assert "sweep:" in capsys.readouterr().out


def test_seed_flag_and_env_out(tiny, tmp_path, monkeypatch):
    monkeypatch.setenv("ARMADA_OUT", str(tmp_path / "env"))
    assert cli.main(["train", "--config", str(tiny), "--seed", "7"]) == 0
    out = tmp_path / "env" / "train"
    seeds = {r["seed"] for r in _rows(out / "results.csv")}
    assert seeds == {"7"}


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("loss.alpha = 7\n")
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["train", "--config", str(tmp_path / "none.cfg"), "--out", str(tmp_path / "o")]) == 1
    assert "config error" in capsys.readouterr().err


def test_missing_teacher_file_is_config_error(tiny, tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text(TINY + f"teacher.file = {tmp_path / 'missing.armd'}\n")
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_runtime_error_exit_code(tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text(TINY)
    broken = tmp_path / "broken.armd"
    broken.write_bytes(b"NOPE" + bytes(20))
    cfg.write_text(TINY + f"teacher.file = {broken}\n")
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_gen_teacher_then_train_from_file(tiny, tmp_path):
    gen = tmp_path / "gen"
    assert cli.main(["gen-teacher", "--config", str(tiny), "--out", str(gen)]) == 0
    cfg = tmp_path / "file.cfg"
    cfg.write_text(TINY + f"teacher.file = {gen / 'teacher_train.armd'}\n"
                   f"teacher.test_file = {gen / 'teacher_test.armd'}\n")
    out = tmp_path / "train"
    assert cli.main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    rows = _rows(out / "results.csv")
    assert len(rows) == 1 and all(r["aligner_main"] != "" for r in rows)


def test_inequality_audit_command_passes(tmp_path):
    assert cli.main(["prop1-audit", "--count", "200", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())["summary"]
    assert summary["violations"] == 0 and summary["count"] == 200


def test_gradcheck_small_run(tmp_path):
    assert cli.main(["gradcheck", "--instances", "1", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "results.csv")
    assert len(rows) == 42 and all(r["passed"] == "True" for r in rows)


def test_gradcheck_impossible_tolerance_exits_3(tmp_path):
    assert cli.main(["gradcheck", "--instances", "1", "--tolerance", "1e-16", "--out", str(tmp_path)]) == 3
