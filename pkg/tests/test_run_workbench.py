#!/usr/bin/env python3
"""
Workbench CLI tests

Exit codes, deterministic output files, config precedence and the
generate -> baseline -> train -> eval flow on tiny settings.
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import csv
import json
import math
import re

import numpy as np
import pytest

from channel_sim import generate_dataset, load_dataset
from run_workbench import ConfigError, RunConfig, _test_set, load_config_file, main, resolve_config
from uwgnn import UwgnnConfig, UwgnnModel, init_model


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture
def tiny_checkpoint(tmp_path):
    path = str(tmp_path / "model.json")
    code = main(["train", "--n", "3", "--count", "24", "--epochs", "1", "--batch-size", "8", "--K", "1",
                 "--seed", "5", "--out", path, "-q"])
    assert code == 0
    return path


# --- generate ---------------------------------------------------------------------

def test_generate_is_byte_identical(tmp_path):
    first, second = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
    for path in (first, second):
        assert main(["generate", "--n", "3", "--count", "5", "--seed", "4", "--out", path, "-q"]) == 0
    with open(first, "rb") as a, open(second, "rb") as b:
        assert a.read() == b.read()
    assert len(load_dataset(first)) == 5


def test_generate_zero_instances(tmp_path):
    path = str(tmp_path / "empty.jsonl")
    assert main(["generate", "--n", "3", "--count", "0", "--out", path, "-q"]) == 0
    assert load_dataset(path) == []


def test_quiet_mode_prints_only_the_result(tmp_path, capsys):
    main(["generate", "--n", "2", "--count", "1", "--out", str(tmp_path / "d.jsonl"), "-q"])
    out = capsys.readouterr().out.strip()
    assert "\n" not in out
    assert out.startswith("✅")


def test_missing_out_is_an_error(capsys):
    assert main(["generate", "--n", "2", "--count", "1", "-q"]) == 1
    assert "❌ Error" in capsys.readouterr().out


# --- baseline ---------------------------------------------------------------------

def test_single_user_baseline_matches_closed_form(tmp_path):
    data = str(tmp_path / "single.jsonl")
    out = str(tmp_path / "baseline.csv")
    assert main(["generate", "--n", "1", "--count", "4", "--seed", "2", "--out", data, "-q"]) == 0
    assert main(["baseline", "--dataset", data, "--restarts", "2", "--out", out, "-q"]) == 0
    rows = _read_csv(out)
    assert len(rows) == 4
    for inst, row in zip(load_dataset(data), rows):
        h = inst.H[0, 0]
        expected = math.log2(1 + h * h * inst.p_max / inst.sigma2)
        assert float(row["single_run_rate"]) == pytest.approx(expected, abs=1e-12)
        assert float(row["best_of_rate"]) >= float(row["single_run_rate"])


def test_baseline_without_restarts_has_no_best_column(tmp_path):
    data = str(tmp_path / "d.jsonl")
    out = str(tmp_path / "b.csv")
    main(["generate", "--n", "3", "--count", "2", "--out", data, "-q"])
    assert main(["baseline", "--dataset", data, "--restarts", "0", "--out", out, "-q"]) == 0
    assert list(_read_csv(out)[0]) == ["instance_id", "n_users", "single_run_rate"]


def test_baseline_on_missing_dataset_fails(tmp_path):
    assert main(["baseline", "--dataset", str(tmp_path / "nope.jsonl"), "--out",
                 str(tmp_path / "b.csv"), "-q"]) == 1


# --- configuration ----------------------------------------------------------------

def test_config_file_sits_between_preset_and_flags(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("PRESET=desk\nN_USERS=6\nSEED=3\nK=2\nTEST_SIZES=5,7\nWEIGHTED=yes\n")
    config = resolve_config(load_config_file(str(path)), {"seed": 9})
    assert config.preset == "desk"
    assert config.count == 2000
    assert config.n_users == 6
    assert config.seed == 9
    assert config.K == 2
    assert config.test_sizes == [5, 7]
    assert config.weighted is True


def test_bad_config_values():
    with pytest.raises(ConfigError):
        resolve_config({"bogus": "1"})
    with pytest.raises(ConfigError):
        resolve_config({"weighted": "maybe"})
    with pytest.raises(ConfigError):
        resolve_config({"n_users": "0"})
    with pytest.raises(ConfigError):
        resolve_config({}, {"preset": "huge"})
    with pytest.raises(ConfigError):
        resolve_config({"aggregation": "median"})


def test_unknown_config_key_exits_with_one(tmp_path):
    path = tmp_path / "bad.env"
    path.write_text("BOGUS=1\n")
    assert main(["generate", "--config", str(path), "--out", str(tmp_path / "x.jsonl"), "-q"]) == 1


def test_unknown_suite_is_a_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main(["eval", "--suite", "bogus"])
    assert excinfo.value.code == 2


def test_digest_ignores_threads_only():
    assert RunConfig(threads=4).digest() == RunConfig().digest()
    assert RunConfig(seed=1).digest() != RunConfig().digest()


# --- train and eval ---------------------------------------------------------------

def test_zero_epoch_training_writes_initial_model(tmp_path):
    path = str(tmp_path / "init.json")
    assert main(["train", "--n", "3", "--count", "10", "--epochs", "0", "--K", "1", "--seed", "5",
                 "--out", path, "-q"]) == 0
    model, meta = UwgnnModel.load(path)
    expected = init_model(UwgnnConfig(K=1), 5)
    assert all(np.array_equal(model.params[k], expected[k]) for k in expected)
    assert meta["seed"] == 5
    assert meta["n_parameters"] == 897
    with open(str(tmp_path / "init.curve.csv")) as f:
        assert f.read() == "epoch,train_loss,val_ratio\n"


def test_training_curve_is_written(tiny_checkpoint):
    rows = _read_csv(tiny_checkpoint.replace("model.json", "model.curve.csv"))
    assert [row["epoch"] for row in rows] == ["1"]
    assert math.isfinite(float(rows[0]["train_loss"]))


def test_eval_ratio_suite(tmp_path, tiny_checkpoint):
    out = str(tmp_path / "reports")
    assert main(["eval", "--checkpoint", tiny_checkpoint, "--suite", "ratio", "--n", "3", "--test-count", "6",
                 "--restarts", "0", "--out", out, "-q"]) == 0
    assert len(_read_csv(os.path.join(out, "ratio_table.csv"))) == 6
    with open(os.path.join(out, "ratio_table.json")) as f:
        summary = json.load(f)["summary"]
    assert summary["count"] == 6
    assert math.isfinite(summary["mean_ratio"])


def test_eval_corr_suite(tmp_path, tiny_checkpoint):
    out = str(tmp_path / "corr")
    assert main(["eval", "--checkpoint", tiny_checkpoint, "--suite", "corr", "--n", "4", "--test-count", "3",
                 "--out", out, "-q"]) == 0
    assert [row["x"] for row in _read_csv(os.path.join(out, "feature_correlation.csv"))] == ["1"]


def test_eval_needs_checkpoint(tmp_path):
    assert main(["eval", "--suite", "ratio", "--out", str(tmp_path), "-q"]) == 1


# --- provenance and held-out data ---------------------------------------------------

SUITE_FLAGS = {
    "ratio": ["--restarts", "0"],
    "scalability": ["--test-sizes", "2,3"],
    "shift": [],
    "topology": ["--eta-grid=-1e6,0.3"],
    "mobility": ["--speeds", "0,50", "--horizon", "1"],
    "sample_complexity": ["--train-sizes", "4,8", "--repeats", "1"],
    "corr": [],
    "width": [],
    "aggregation": [],
}


@pytest.mark.parametrize("suite", sorted(SUITE_FLAGS))
def test_every_summary_names_the_config_digest(tmp_path, tiny_checkpoint, capsys, suite):
    config_file = tmp_path / "small.env"
    config_file.write_text("MOBILITY_COUNT=2\nMSG_WIDTHS=4\nVAR_WIDTHS=2\n")
    out = str(tmp_path / suite)
    capsys.readouterr()
    assert main(["eval", "--checkpoint", tiny_checkpoint, "--suite", suite, "--n", "3", "--test-count", "3",
                 "--count", "8", "--epochs", "0", "--config", str(config_file), "--out", out, "-q"]
                + SUITE_FLAGS[suite]) == 0
    digest = re.search(r"\[([0-9a-f]+), checkpoint", capsys.readouterr().out).group(1)
    summaries = [name for name in os.listdir(out) if name.endswith(".json") and name != "index.json"]
    assert summaries
    for name in summaries:
        with open(os.path.join(out, name)) as f:
            assert json.load(f)["summary"]["config_digest"] == digest, name


def test_generated_test_set_is_disjoint_from_training_set():
    config = RunConfig(n_users=3, count=30, test_count=30)
    train_set = generate_dataset(config.count, config.n_users, config.seed)
    test_set = _test_set(config, None)
    assert not any(np.array_equal(a.H, b.H) for a in train_set for b in test_set)


def test_eval_warns_when_mixing_config_digests(tmp_path, tiny_checkpoint, mocker):
    out = str(tmp_path / "mixed")
    args = ["eval", "--checkpoint", tiny_checkpoint, "--suite", "corr", "--n", "3", "--test-count", "2",
            "--out", out, "-q"]
    logger = mocker.patch("run_workbench.logger")
    assert main(args + ["--seed", "1"]) == 0
    assert main(args + ["--seed", "1"]) == 0
    logger.warning.assert_not_called()
    assert main(args + ["--seed", "2"]) == 0
    logger.warning.assert_called_once()
    assert "feature_correlation" in logger.warning.call_args[0][0]
