import csv
import json
from pathlib import Path

import pytest

from fedsim import config as cfg_mod
from fedsim.cli import main
from fedsim.errors import ConfigError

SMALL = """
n_sites = 4
per_site_counts = [40, 35, 30, 25]
dimension = 4
data_seed = 1
test_per_class = 10
clients = 2
learning_rate = 0.01
fl_rounds = 6
eval_every = 2
repetitions = 2
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text(SMALL)
    return p


def run(*argv):
    return main([str(a) for a in argv])


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("learning_rate = 0.1\nlearnig_rate = 0.2\n")
    with pytest.raises(ConfigError, match="learnig_rate"):
        cfg_mod.load(p)
    assert run("train", "-c", p, "--out", tmp_path / "o") == 1


def test_wrong_type_names_key(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('fl_rounds = "ten"\n')
    with pytest.raises(ConfigError, match="fl_rounds"):
        cfg_mod.load(p)


def test_missing_config_exit_code(tmp_path, capsys):
    missing = tmp_path / "nope.toml"
    assert run("train", "-c", missing, "--out", tmp_path / "o") == 1
    assert str(missing) in capsys.readouterr().err


def test_invalid_value_exit_code(cfg, tmp_path, capsys):
    assert run("train", "-c", cfg, "--out", tmp_path / "o", "--strategy", "secagg") == 1
    assert "at least 3" in capsys.readouterr().err


def test_protocol_failure_exit_code(tmp_path):
    p = tmp_path / "c.toml"
    # threshold 3 of 3 shares cannot survive any dropout
    p.write_text(SMALL.replace("clients = 2", "clients = 4")
                 + 'strategy = "secagg"\nnum_shares = 3\nreconstruction_threshold = 3\ndropout_prob = 0.5\n')
    assert run("train", "-c", p, "--out", tmp_path / "o") == 2


def test_train_outputs_and_determinism(cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("train", "-c", cfg, "--out", a, "--seed", 1, "--strategy", "aldp", "--epsilon", 200) == 0
    assert run("train", "-c", cfg, "--out", b, "--seed", 1, "--strategy", "aldp", "--epsilon", 200,
               "--workers", 2) == 0
    for name in ("summary.json", "rounds.csv", "privacy_ledger.csv", "test_predictions.csv",
                 "best_model.bin"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    resolved = [(d / "resolved_config.toml").read_text().splitlines() for d in (a, b)]
    assert [x for x, y in zip(*resolved) if x != y] == ["workers = 1"]
    assert (a / "timings.csv").exists()
    summary = json.loads((a / "summary.json").read_text())
    assert summary["base_seed"] == 1 and summary["strategy"] == "aldp"
    assert str(tmp_path) not in (a / "summary.json").read_text()
    rows = list(csv.DictReader((a / "rounds.csv").open()))
    assert len(rows) == 12 and rows[0]["epsilon_t"] == "200"


def test_resolved_config_reproduces_run(cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("train", "-c", cfg, "--out", a, "--strategy", "fedprox", "--mu", 0.1) == 0
    assert run("train", "-c", a / "resolved_config.toml", "--out", b) == 0
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    assert (a / "rounds.csv").read_bytes() == (b / "rounds.csv").read_bytes()


def test_seed_flag_overrides(cfg, tmp_path):
    run("train", "-c", cfg, "--out", tmp_path / "a", "--seed", 1)
    run("train", "-c", cfg, "--out", tmp_path / "b", "--seed", 2)
    assert (tmp_path / "a/rounds.csv").read_bytes() != (tmp_path / "b/rounds.csv").read_bytes()


def test_sweep_epsilon_grid(cfg, tmp_path):
    out = tmp_path / "e"
    assert run("sweep-epsilon", "-c", cfg, "--out", out, "--epsilon", 100, 500, 1000, 2000) == 0
    rows = json.loads((out / "summary.json").read_text())["rows"]
    assert [r["epsilon"] for r in rows] == [100, 500, 1000, 2000]
    assert len(list(csv.DictReader((out / "sweep_epsilon.csv").open()))) == 4


def test_sweep_mu_default_grid(cfg, tmp_path):
    out = tmp_path / "m"
    p = tmp_path / "one.toml"
    p.write_text(SMALL.replace("repetitions = 2", "repetitions = 1"))
    assert run("sweep-mu", "-c", p, "--out", out) == 0
    rows = json.loads((out / "summary.json").read_text())["rows"]
    assert [r["mu"] for r in rows] == list(cfg_mod.MU_SWEEP)


def test_centralized_and_ablate(cfg, tmp_path):
    assert run("centralized", "-c", cfg, "--out", tmp_path / "c") == 0
    assert json.loads((tmp_path / "c/summary.json").read_text())["mode"] == "centralized"
    assert run("ablate", "-c", cfg, "--out", tmp_path / "a") == 0
    rows = list(csv.DictReader((tmp_path / "a/ablation.csv").open()))
    assert [r["model"] for r in rows] == ["client_0", "client_1", "centralized"]


def test_generate_partition_and_train_from_csv(cfg, tmp_path):
    gen = tmp_path / "gen"
    assert run("generate", "-c", cfg, "--out", gen) == 0
    part = tmp_path / "part"
    assert run("partition", "--input", gen / "data.csv", "--clients", 2, "--out", part, "--seed", 3) == 0
    assignment = json.loads((part / "assignment.json").read_text())
    assert sum(sum(c["counts"].values()) for c in assignment.values()) == 130
    for k in (0, 1):
        assert (part / f"client_{k}_train.csv").exists() and (part / f"client_{k}_val.csv").exists()
    p = tmp_path / "csv.toml"
    training = "clients = 2\nlearning_rate = 0.01\nfl_rounds = 4\neval_every = 2\nrepetitions = 1\n"
    p.write_text(f'data_csv = "{gen / "data.csv"}"\ntest_csv = "{gen / "test.csv"}"\n' + training)
    assert run("train", "-c", p, "--out", tmp_path / "t") == 0
    # the CSV route gives the same data as generating in memory
    q = tmp_path / "mem.toml"
    q.write_text(SMALL.replace("fl_rounds = 6", "fl_rounds = 4").replace("repetitions = 2", "repetitions = 1"))
    assert run("train", "-c", q, "--out", tmp_path / "m") == 0
    assert (tmp_path / "t/rounds.csv").read_bytes() == (tmp_path / "m/rounds.csv").read_bytes()


def test_partition_bad_csv(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("site_id,label,f0\nA,0,zz\n")
    assert run("partition", "--input", p, "--clients", 1, "--out", tmp_path / "o") == 1
    err = capsys.readouterr().err
    assert "line 2" in err and str(p) in err


def test_report(cfg, tmp_path):
    out = tmp_path / "r"
    run("train", "-c", cfg, "--out", out)
    assert run("report", "--input", out) == 0
    cm = list(csv.reader((out / "confusion_matrix.csv").open()))
    assert cm[0] == ["true", "pred_CN", "pred_AD"]
    for row in cm[1:]:
        assert sum(float(x) for x in row[1:]) == pytest.approx(1.0)
    roc = list(csv.DictReader((out / "roc.csv").open()))
    assert roc[0]["fpr"] == "0" and roc[-1]["tpr"] == "1"
    assert run("report", "--input", tmp_path / "missing") == 1
