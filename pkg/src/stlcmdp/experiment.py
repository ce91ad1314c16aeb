"""End-to-end pipeline: grid + formula -> product CMDP -> plan/learn -> evaluate.

A config is a JSON object::

    {"grid": {"width": 6, "height": 6, "start": [0, 0], "p": 0.93},
     "formula": "F[0,7] G[0,1] (x > 4 & y > 4)",
     "p_thres": [0.5, 0.9],
     "mode": "both",
     "hyper": {"budget": 20, "eta": 1, "episodes": 100000},
     "trajectories": 10000,
     "seed": 0}

``p_thres`` may be a single number or a list; each threshold is one run.
"""
from __future__ import annotations

import copy
import csv
import math
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .augment import AugmentedMdp, build_augmented_mdp
from .gridworld import GridSpec, build_grid_mdp, grid_cost_table
from .learner import ObMfcHyperparams, run_ob_mfc
from .planner import solve_dual
from .serialize import dump, policy_to_json
from .simulator import EVALUATION, Simulator, rollout, stream
from .stl import horizon, monitor, parse_formula

MODES = ("exact", "learn", "both")
DIAGNOSTIC_COLUMNS = ("p_thres", "t", "lambda1", "cost", "constraint", "lagrangian",
                      "best_response_value", "regret")

REPRO = {
    "case1": {
        "grid": {"width": 6, "height": 6, "start": [0, 0], "p": 0.93},
        "formula": "F[0,7] G[0,1] (x > 4 & y > 4)",
        "p_thres": [0.5, 0.9],
        "mode": "both",
        "hyper": {"budget": 20.0, "eta": 1.0, "iterations": 200, "rollouts": 5000,
                  "episodes": 100000},
        "trajectories": 10000,
        "seed": 0,
    },
    "case2": {
        "grid": {"width": 4, "height": 4, "start": [1, 1], "p": 0.93},
        "formula": ("G[0,12] (F[0,2](x>1 & x<2 & y>3 & y<4) & "
                    "F[0,2](x>2 & x<3 & y>2 & y<3))"),
        "p_thres": [0.7],
        "mode": "both",
        "hyper": {"budget": 100.0, "eta": 2.0, "iterations": 200, "rollouts": 5000,
                  "episodes": 500000},
        "trajectories": 10000,
        "seed": 0,
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    grid: GridSpec
    formula: str
    thresholds: list
    mode: str = "exact"
    hyper: dict | None = None
    trajectories: int = 10000
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            grid = GridSpec.from_dict(doc["grid"])
            formula = str(doc["formula"])
            raw = doc.get("p_thres", [])
            thresholds = [float(p) for p in (raw if isinstance(raw, list) else [raw])]
        except KeyError as exc:
            raise ConfigError(f"missing config field {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        config = cls(grid, formula, thresholds, doc.get("mode", "exact"),
                     dict(doc.get("hyper") or {}), int(doc.get("trajectories", 10000)),
                     int(doc.get("seed", 0)))
        config.validate()
        return config

    def validate(self) -> None:
        if not self.thresholds:
            raise ConfigError("at least one p_thres is required")
        for p in self.thresholds:
            if not 0 <= p < 1:
                raise ConfigError(f"p_thres must lie in [0, 1), got {p}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.trajectories < 1:
            raise ConfigError("trajectories must be at least 1")
        known = {f.name for f in fields(ObMfcHyperparams)} - {"seed"}
        unknown = set(self.hyper or {}) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameters: {sorted(unknown)}")
        try:
            parse_formula(self.formula)
        except ValueError as exc:
            raise ConfigError(f"formula: {exc}") from exc

    def to_dict(self) -> dict:
        return {"grid": self.grid.to_dict(), "formula": self.formula, "p_thres": self.thresholds,
                "mode": self.mode, "hyper": dict(self.hyper or {}),
                "trajectories": self.trajectories, "seed": self.seed}

    def hyperparams(self) -> ObMfcHyperparams:
        return ObMfcHyperparams(seed=self.seed, **(self.hyper or {}))


def repro_config(name: str) -> ExperimentConfig:
    if name not in REPRO:
        raise ConfigError(f"unknown repro case {name!r}; choose from {sorted(REPRO)}")
    return ExperimentConfig.from_dict(copy.deepcopy(REPRO[name]))


def build_product(config: ExperimentConfig) -> AugmentedMdp:
    formula = parse_formula(config.formula)
    H = horizon(formula) + 1
    return build_augmented_mdp(build_grid_mdp(config.grid, H), formula,
                               grid_cost_table(config.grid, H))


@dataclass
class EvaluationReport:
    satisfaction: float
    satisfaction_se: float
    cost: float
    cost_se: float
    trajectories: int
    monitor_agreement: bool

    def to_dict(self) -> dict:
        return {"satisfaction": self.satisfaction, "satisfaction_se": self.satisfaction_se,
                "cost": self.cost, "cost_se": self.cost_se,
                "trajectories": self.trajectories, "monitor_agreement": self.monitor_agreement}


class MonitorMismatch(AssertionError):
    pass


def evaluate_policy(sim: Simulator, augmented: AugmentedMdp, policy, m: int,
                    seed) -> EvaluationReport:
    """Roll out ``m`` episodes; satisfaction by the final flag and by the monitor."""
    if m < 1:
        raise ValueError("need at least one evaluation trajectory")
    rng = seed if isinstance(seed, np.random.Generator) else stream(int(seed), EVALUATION)
    states, actions = rollout(sim, np.asarray(policy, dtype=float), m, rng)
    H = sim.horizon
    by_flag = augmented.fin_code(states[:, H]) == 1
    # the monitor reads the base signal s_0..s_{H-1}; distinct paths are checked once
    base = augmented.base_state(states[:, :H])
    paths, inverse = np.unique(base, axis=0, return_inverse=True)
    embedding = augmented.base.embedding
    verdicts = np.array([monitor(augmented.formula, embedding[path]) for path in paths])
    by_monitor = verdicts[inverse.ravel()]
    agree = bool(np.array_equal(by_flag, by_monitor))
    if not agree:
        raise MonitorMismatch(f"{int((by_flag != by_monitor).sum())} episodes disagree")
    totals = sim.cost[np.arange(H + 1), states, actions].sum(axis=1)
    sat = float(by_flag.mean())
    cost = float(totals.mean())
    cost_se = float(totals.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    return EvaluationReport(sat, math.sqrt(sat * (1 - sat) / m), cost, cost_se, m, agree)


def emit_plot_data(diagnostics, path) -> Path:
    """Per-iteration CSV with a fixed column order."""
    rows = list(diagnostics)
    if not rows:
        raise ValueError("no diagnostics to write")
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DIAGNOSTIC_COLUMNS)
        for row in rows:
            writer.writerow([repr(float(row[c])) if c != "t" else int(row[c])
                             for c in DIAGNOSTIC_COLUMNS])
    return path


def read_plot_data(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: (int(v) if k == "t" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def _gap(estimate: float, exact: float):
    return None if exact == 0 else abs(estimate - exact) / abs(exact) * 100.0


def run_threshold(config: ExperimentConfig, augmented: AugmentedMdp, p_thres: float,
                  mode: str, index: int = 0) -> dict:
    """One threshold: returns the report entry, diagnostics rows and policies."""
    cmdp = augmented.satisfaction_problem(p_thres)
    sim = Simulator(cmdp.mdp, cmdp.cost, cmdp.constraint)
    entry, diagnostics, policies, timings = {"p_thres": p_thres}, [], {}, {}
    exact_value = None
    eval_seed = [config.seed, index]
    if mode in ("exact", "both"):
        start = time.perf_counter()
        solution = solve_dual(cmdp)
        timings["exact"] = time.perf_counter() - start
        exact_value = solution.optimal_value
        report = evaluate_policy(sim, augmented, solution.policy, config.trajectories,
                                 stream(config.seed, EVALUATION, 2 * index))
        entry["exact"] = {
            "optimal_value": solution.optimal_value,
            "lambda_star": solution.lambda_star,
            "constraint_value": solution.constraint_value,
            "satisfaction_probability": 1.0 - solution.constraint_value,
            "mixture_weights": solution.weights,
            "evaluation": report.to_dict(),
        }
        policies["exact"] = solution.policy
    if mode in ("learn", "both"):
        hyper = config.hyperparams()
        hyper.seed = int(np.random.SeedSequence(eval_seed).generate_state(1)[0])
        start = time.perf_counter()
        result = run_ob_mfc(sim, cmdp.threshold, hyper)
        timings["learn"] = time.perf_counter() - start
        report = evaluate_policy(sim, augmented, result.policy, config.trajectories,
                                 stream(config.seed, EVALUATION, 2 * index + 1))
        entry["learn"] = {
            "hyperparameters": hyper.to_dict(),
            "average_cost": result.cost,
            "average_constraint": result.constraint,
            "lambda_bar": result.lambda_bar,
            "regret": result.regret,
            "evaluation": report.to_dict(),
        }
        if exact_value is not None:
            entry["learn"]["cost_gap_percent"] = _gap(report.cost, exact_value)
        diagnostics = [dict(p_thres=p_thres, t=r.t, lambda1=r.lam1, cost=r.cost,
                            constraint=r.constraint, lagrangian=r.lagrangian,
                            best_response_value=r.best_response_value, regret=r.regret)
                       for r in result.diagnostics]
        policies["learn"] = result.policy
    return {"entry": entry, "diagnostics": diagnostics, "policies": policies,
            "timings": timings}


def run_experiment(config: ExperimentConfig, out_dir=None, mode: str | None = None) -> dict:
    """Run every threshold, write ``report.json``/``diagnostics.csv``/``policy.json``."""
    mode = mode or config.mode
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    augmented = build_product(config)
    runs = [run_threshold(config, augmented, p, mode, i)
            for i, p in enumerate(config.thresholds)]
    report = {
        "config": dict(config.to_dict(), mode=mode),
        "seed": config.seed,
        "product_states": augmented.product.num_states,
        "horizon": augmented.product.horizon,
        "results": [run["entry"] for run in runs],
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump(report, out / "report.json")
        dump({"timings_seconds": [dict(p_thres=p, **run["timings"])
                                  for p, run in zip(config.thresholds, runs)]},
             out / "timings.json")
        rows = [row for run in runs for row in run["diagnostics"]]
        if rows:
            emit_plot_data(rows, out / "diagnostics.csv")
        dump({"runs": [dict(policy_to_json(pol, {"p_thres": p, "method": method,
                                                 "seed": config.seed,
                                                 "dims": list(augmented.dims)}))
                       for p, run in zip(config.thresholds, runs)
                       for method, pol in run["policies"].items()]},
             out / "policy.json")
    report["timings"] = [run["timings"] for run in runs]
    return report
