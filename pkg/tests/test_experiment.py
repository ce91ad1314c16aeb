import json

import numpy as np
import pytest

from oracles import CASE1_FORMULA, case_product
from stlcmdp.augment import build_augmented_mdp
from stlcmdp.cli import main
from stlcmdp.experiment import (DIAGNOSTIC_COLUMNS, ConfigError, ExperimentConfig,
                                emit_plot_data, evaluate_policy, read_plot_data,
                                repro_config, run_experiment)
from stlcmdp.mdp import FiniteHorizonMdp, uniform_policy
from stlcmdp.simulator import Simulator
from stlcmdp.stl import parse_formula

SMALL = {
    "grid": {"width": 3, "height": 3, "start": [0, 0], "p": 0.9},
    "formula": "F[0,3] G[0,1] (x > 2 & y > 2)",
    "p_thres": 0.5,
    "mode": "both",
    "hyper": {"budget": 20.0, "eta": 1.0, "iterations": 4, "rollouts": 200, "episodes": 2000},
    "trajectories": 500,
    "seed": 3,
}


def write_config(tmp_path, **changes):
    doc = json.loads(json.dumps(SMALL))
    doc.update(changes)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


def test_always_satisfying_environment():
    formula = parse_formula(CASE1_FORMULA)
    mdp = FiniteHorizonMdp.from_dense(np.ones((1, 1, 1)), 9, 0, [[5.0, 5.0]])
    aug = build_augmented_mdp(mdp, formula, np.zeros((1, 1)))
    cmdp = aug.satisfaction_problem(0.5)
    sim = Simulator(cmdp.mdp, cmdp.cost, cmdp.constraint)
    report = evaluate_policy(sim, aug, np.ones(cmdp.mdp.table_shape), 50, seed=0)
    assert report.satisfaction == 1.0 and report.satisfaction_se == 0.0
    assert report.monitor_agreement


def test_flag_and_monitor_agree_on_random_policy():
    aug = case_product(2)
    cmdp = aug.satisfaction_problem(0.7)
    sim = Simulator(cmdp.mdp, cmdp.cost, cmdp.constraint)
    report = evaluate_policy(sim, aug, uniform_policy(cmdp.mdp), 2000, seed=1)
    assert report.monitor_agreement and 0 <= report.satisfaction <= 1
    assert report.cost_se > 0


def test_evaluation_standard_errors():
    aug = case_product(1)
    cmdp = aug.satisfaction_problem(0.5)
    sim = Simulator(cmdp.mdp, cmdp.cost, cmdp.constraint)
    report = evaluate_policy(sim, aug, uniform_policy(cmdp.mdp), 4000, seed=2)
    p = report.satisfaction
    assert report.satisfaction_se == pytest.approx(np.sqrt(p * (1 - p) / 4000))


def test_plot_data_round_trip(tmp_path):
    rows = [dict(p_thres=0.5, t=t, lambda1=0.1 * t, cost=1 / 3, constraint=0.2,
                 lagrangian=1.0, best_response_value=2.0, regret=0.01 * t) for t in range(1, 4)]
    path = emit_plot_data(rows, tmp_path / "d.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(DIAGNOSTIC_COLUMNS) and len(lines) == 4
    assert read_plot_data(path) == rows
    emit_plot_data(rows[:1], tmp_path / "one.csv")
    assert len((tmp_path / "one.csv").read_text().splitlines()) == 2
    with pytest.raises(ValueError):
        emit_plot_data([], tmp_path / "none.csv")


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMALL, "p_thres": 1.5})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMALL, "mode": "fast"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMALL, "formula": "F[0,1] F[0,1] F[0,1] (x > 0)"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMALL, "hyper": {"gamma": 0.9}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"formula": CASE1_FORMULA})
    with pytest.raises(ConfigError):
        repro_config("case3")


def test_zero_threshold_costs_nothing():
    config = ExperimentConfig.from_dict({**SMALL, "p_thres": 0.0, "mode": "exact"})
    report = run_experiment(config)
    assert report["results"][0]["exact"]["optimal_value"] == 0.0


def test_run_experiment_outputs(tmp_path):
    config = ExperimentConfig.from_dict(SMALL)
    report = run_experiment(config, tmp_path)
    for name in ("report.json", "diagnostics.csv", "policy.json"):
        assert (tmp_path / name).exists()
    saved = json.loads((tmp_path / "report.json").read_text())
    entry = saved["results"][0]
    gap = abs(entry["learn"]["evaluation"]["cost"] - entry["exact"]["optimal_value"]) \
        / entry["exact"]["optimal_value"] * 100
    assert entry["learn"]["cost_gap_percent"] == pytest.approx(gap)
    assert saved["seed"] == 3 and saved["results"] == report["results"]
    assert len(read_plot_data(tmp_path / "diagnostics.csv")) == 4
    policies = json.loads((tmp_path / "policy.json").read_text())["runs"]
    assert [p["metadata"]["method"] for p in policies] == ["exact", "learn"]


def test_cli_exit_codes(tmp_path, capsys):
    good = write_config(tmp_path)
    assert main(["check", "--config", str(good)]) == 0
    assert "product states" in capsys.readouterr().out
    bad = write_config(tmp_path, grid={"width": 3, "height": 3, "start": [5, 5]})
    assert main(["check", "--config", str(bad)]) == 2
    assert main(["plan", "--config", str(tmp_path / "missing.json")]) == 2
    infeasible = write_config(tmp_path, p_thres=0.99999, grid={"width": 3, "height": 3,
                                                               "p": 0.5})
    assert main(["plan", "--config", str(infeasible), "--out", str(tmp_path / "x")]) == 3


def test_cli_plan_then_eval(tmp_path, capsys):
    config = write_config(tmp_path, p_thres=0.6)
    out = tmp_path / "run"
    assert main(["plan", "--config", str(config), "--out", str(out), "--seed", "9"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["seed"] == 9 and "learn" not in report["results"][0]
    capsys.readouterr()
    assert main(["eval", "--config", str(config), "--policy", str(out / "policy.json"),
                 "--out", str(tmp_path / "ev"), "--trajectories", "300"]) == 0
    evaluated = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert evaluated["evaluation"]["trajectories"] == 300
    assert main(["eval", "--config", str(config), "--policy", str(out / "policy.json"),
                 "--index", "4"]) == 2


def test_learn_is_deterministic(tmp_path):
    config = write_config(tmp_path)
    for name in ("a", "b"):
        assert main(["learn", "--config", str(config), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == \
        (tmp_path / "b" / "report.json").read_bytes()
