"""Command-line surface: subcommands, overrides, and exit codes."""

import os

import pytest

from fewbench.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, EXIT_TIMED_OUT, main
from fewbench.dataset import load_feature_dataset


BASE_CONFIG = """\
# fast end-to-end phase over easy synthetic features
data.synthetic.num_classes = 12
data.synthetic.dim = 4
data.synthetic.samples_per_class = 6
data.synthetic.class_std = 0.1
data.synthetic.mean_scale = 3.0
data.synthetic.seed = 3
data.n_train_classes = 6
phase.episode_count = 4
phase.budget_seconds = 60
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "phase.cfg"
    path.write_text(BASE_CONFIG + f"paths.workdir = {tmp_path / 'work'}\n")
    return str(path)


def test_gen_synthetic_and_split_round_trip(tmp_path):
    raw = str(tmp_path / "all.csv")
    train = str(tmp_path / "train.csv")
    test = str(tmp_path / "test.csv")
    assert main(["gen-synthetic", "--classes", "6", "--dim", "3",
                 "--samples", "4", "--seed", "11", "--out", raw]) == EXIT_OK
    table = load_feature_dataset(raw)
    assert table.n_classes == 6 and table.dim == 3

    assert main(["split", "--input", raw, "--train-classes", "4",
                 "--seed", "2", "--out-train", train, "--out-test", test]) == EXIT_OK
    assert load_feature_dataset(train).n_classes == 4
    assert load_feature_dataset(test).n_classes == 2


def test_ingest_then_score(config_path, tmp_path, capsys):
    assert main(["ingest", "--config", config_path, "--seed", "101"]) == EXIT_OK
    assert os.path.exists(tmp_path / "work" / "learner_seed101.txt")
    assert main(["score", "--config", config_path, "--seed", "101"]) == EXIT_OK
    assert os.path.exists(tmp_path / "work" / "score_seed101.csv")
    out = capsys.readouterr().out
    assert "seed 101: mean" in out


def test_score_without_artifact_fails(config_path):
    assert main(["score", "--config", config_path, "--seed", "999"]) == EXIT_FAILED


def test_run_and_report(config_path, tmp_path, capsys):
    assert main(["run", "--config", config_path]) == EXIT_OK
    out = capsys.readouterr().out
    assert "final (worst of 3):" in out
    board = str(tmp_path / "work" / "leaderboard.csv")
    assert main(["report", "--leaderboard", board]) == EXIT_OK
    report = capsys.readouterr().out
    assert report.splitlines()[0] == "rank,method,final,wallclock,status"
    assert report.splitlines()[1].startswith("1,proto,")


def test_set_overrides_apply(config_path, tmp_path):
    assert main([
        "run", "--config", config_path,
        "--set", "method.name=qda",
        "--set", "method.qda.shrinkage=0.75",
        "--set", f"paths.leaderboard={tmp_path / 'alt.csv'}",
    ]) == EXIT_OK
    board = open(tmp_path / "alt.csv", encoding="utf-8").read()
    assert board.startswith("qda,")


def test_method_flag_overrides(config_path, capsys):
    assert main(["run", "--config", config_path, "--method", "rect",
                 "--episodes", "2"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "final (worst of 3):" in out


def test_missing_config_file_is_config_error(tmp_path):
    code = main(["run", "--config", str(tmp_path / "absent.cfg")])
    assert code == EXIT_CONFIG


def test_malformed_config_is_config_error(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("this line has no equals sign\n")
    assert main(["run", "--config", str(path)]) == EXIT_CONFIG


def test_unknown_method_is_config_error(config_path):
    assert main(["run", "--config", config_path,
                 "--method", "mystery"]) == EXIT_CONFIG


def test_bad_set_syntax_is_config_error(config_path):
    assert main(["run", "--config", config_path, "--set", "oops"]) == EXIT_CONFIG


def test_bad_usage_is_config_error(capsys):
    assert main(["score"]) == EXIT_CONFIG  # missing required flags
    assert main(["no-such-command"]) == EXIT_CONFIG
    capsys.readouterr()


def test_run_timeout_exit_code(config_path):
    code = main([
        "run", "--config", config_path,
        "--method", "sleeper",
        "--set", "method.sleeper.duration_seconds=30",
        "--budget-seconds", "0.2",
    ])
    assert code == EXIT_TIMED_OUT


def test_ingest_timeout_exit_code(config_path):
    code = main([
        "ingest", "--config", config_path, "--seed", "101",
        "--method", "sleeper",
        "--set", "method.sleeper.duration_seconds=30",
        "--budget-seconds", "0.2",
    ])
    assert code == EXIT_TIMED_OUT


def test_run_failure_exit_code(config_path):
    code = main([
        "run", "--config", config_path,
        "--set", "method.proto.metric=bogus",
    ])
    assert code == EXIT_FAILED


def test_selftest_passes(capsys):
    assert main(["selftest"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "ok" in out and "FAIL" not in out
