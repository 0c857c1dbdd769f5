import csv
import json

import pytest

from pisal.cli import ExperimentConfig, build_parser, load_config, main, run_experiment, run_sweep, sweep_cells
from pisal.errors import ConfigurationError
from pisal.sal import read_log_csv

TINY = {
    "problem": "stefan", "n_u": 40, "n_f": 60, "n_initial": 4, "k_max": 2, "lbfgs_interface_iters": 5,
    "lbfgs_field_iters": 10, "pretrain_iters": 10, "adam_warmup": 10, "net1_hidden": [5], "net2_hidden": [5],
    "netI_hidden": [3],
}


def write_config(tmp_path, **extra):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**TINY, **extra}))
    return str(path)


@pytest.fixture(scope="module")
def tiny_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    assert main(["run", "--config", write_config(tmp), "--out", str(tmp / "a"), "--emit-grid"]) == 0
    return tmp


def test_unknown_problem_exits_2(tmp_path, capsys):
    assert main(["run", "--config", write_config(tmp_path), "--problem", "heat", "--out", str(tmp_path)]) == 2
    assert "heat" in capsys.readouterr().err


def test_unknown_key_and_bad_flag_exit_2(tmp_path):
    assert main(["run", "--config", write_config(tmp_path, learning_rate=1.0)]) == 2
    assert main(["run", "--no-such-flag", "1"]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["run", "--config", write_config(tmp_path), "--k_max", "0", "--out", str(tmp_path)]) == 2


def test_flags_override_config(tmp_path):
    args = build_parser().parse_args(["run", "--config", write_config(tmp_path), "--seed", "7",
                                      "--net1_hidden", "8,8", "--delta_train", "1e-3"])
    cfg = load_config(args)
    assert cfg.train["seed"] == 7 and cfg.train["net1_hidden"] == [8, 8]
    assert cfg.train_config().delta_train == 1e-3
    assert cfg.train_config().n_u == 40


def test_problem_defaults_fill_missing_sizes():
    cfg = ExperimentConfig("stokes", train={}).train_config()
    assert (cfg.n_u, cfg.n_f, cfg.n_initial) == (1000, 1000, 0)


def test_run_writes_all_artifacts(tiny_dir):
    out = tiny_dir / "a"
    for name in ("training_log.csv", "error_trace.csv", "checkpoint.json", "metrics.json",
                 "predictions.csv", "interface.csv", "timing.json"):
        assert (out / name).exists(), name
    metrics = json.loads((out / "metrics.json").read_text())
    log = read_log_csv(out / "training_log.csv")
    assert metrics["outer_iterations"] == log[-1].k
    assert metrics["lambdas"]["lambda1"] == log[-1].lambda1
    assert metrics["config"]["n_u"] == 40
    with open(out / "predictions.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "t", "pred_u", "true_u", "region"]
    assert len(rows) - 1 == 201 * 101
    assert len((out / "interface.csv").read_text().splitlines()) == 202


def test_emit_grid_off_writes_no_predictions(tmp_path):
    assert main(["run", "--config", write_config(tmp_path), "--out", str(tmp_path / "b"), "--k_max", "1"]) == 0
    assert not (tmp_path / "b" / "predictions.csv").exists()
    assert (tmp_path / "b" / "metrics.json").exists()


def test_two_runs_are_byte_identical(tiny_dir):
    again = tiny_dir / "again"
    assert main(["run", "--config", write_config(tiny_dir), "--out", str(again), "--emit-grid"]) == 0
    for name in ("training_log.csv", "metrics.json", "checkpoint.json", "predictions.csv", "error_trace.csv"):
        assert (again / name).read_bytes() == (tiny_dir / "a" / name).read_bytes(), name


def test_training_failure_keeps_partial_artifacts(tmp_path):
    status = main(["run", "--config", write_config(tmp_path, eps_interface=1e-15, max_resample=1),
                   "--out", str(tmp_path / "f")])
    assert status == 1
    assert (tmp_path / "f" / "checkpoint.json").exists()
    assert json.loads((tmp_path / "f" / "timing.json").read_text())["status"] == "failed"
    assert not (tmp_path / "f" / "metrics.json").exists()


def test_baseline_method_runs(tmp_path):
    assert main(["run", "--config", write_config(tmp_path), "--method", "pinn-baseline",
                 "--out", str(tmp_path / "p"), "--emit-grid", "--k_max", "1"]) == 0
    metrics = json.loads((tmp_path / "p" / "metrics.json").read_text())
    assert metrics["lambdas"]["lambda1"] == metrics["lambdas"]["lambda2"]
    assert metrics["rmse_interface"] is None
    assert not (tmp_path / "p" / "interface.csv").exists()


def test_sweep_cells_order_and_names(tmp_path):
    base = ExperimentConfig.from_dict({**TINY, "out": str(tmp_path)})
    cells = sweep_cells(base, [1, 2], [3, 4], seeds=[0, 1])
    assert [(len(c.train["net1_hidden"]), c.train["net1_hidden"][0], c.train["seed"]) for _, c in cells] == [
        (1, 3, 0), (1, 3, 1), (1, 4, 0), (1, 4, 1), (2, 3, 0), (2, 3, 1), (2, 4, 0), (2, 4, 1)]
    assert cells[5][1].out.endswith("cell005_L2_N3_nu40_nf60_s1")
    with pytest.raises(ConfigurationError):
        sweep_cells(base, [], [3])


def test_one_cell_sweep_equals_a_run(tmp_path, tiny_dir):
    assert main(["sweep", "--config", write_config(tmp_path), "--out", str(tmp_path / "s"),
                 "--layers", "1", "--neurons", "5"]) == 0
    with open(tmp_path / "s" / "sweep_results.csv") as fh:
        (row,) = list(csv.DictReader(fh))
    single = json.loads((tiny_dir / "a" / "metrics.json").read_text())
    assert row["status"] == "ok"
    assert float(row["pe_lambda1"]) == single["pe_lambda1"]
    cell = tmp_path / "s" / "cell000_L1_N5_nu40_nf60_s0"
    assert (cell / "training_log.csv").read_bytes() == (tiny_dir / "a" / "training_log.csv").read_bytes()
    assert (tmp_path / "s" / "sweep_timing.csv").exists()


def test_sweep_is_deterministic_and_records_failures(tmp_path):
    base = ExperimentConfig.from_dict({**TINY, "k_max": 1})
    results = []
    for name in ("x", "y"):
        cfg = ExperimentConfig.from_dict({**base.to_dict(), "out": str(tmp_path / name)})
        rows = run_sweep(cfg, [1], [3, 4], quiet=True)
        assert [r["status"] for r in rows] == ["ok", "ok"]
        results.append((tmp_path / name / "sweep_results.csv").read_bytes())
    assert results[0] == results[1]
    bad = ExperimentConfig.from_dict({**TINY, "eps_interface": 1e-15, "max_resample": 0, "out": str(tmp_path / "z")})
    rows = run_sweep(bad, [1], [3], quiet=True)
    assert rows[0]["status"] == "failed"


def test_check_command_passes(capsys):
    assert main(["check"]) == 0
    out = capsys.readouterr().out
    assert "checks passed" in out and "FAIL" not in out


def test_run_experiment_rejects_bad_method(tmp_path):
    with pytest.raises(ConfigurationError):
        run_experiment(ExperimentConfig("stefan", "indicator", str(tmp_path), False, {}))
