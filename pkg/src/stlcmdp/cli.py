"""``stlcmdp`` command line.

Exit codes: 0 success, 2 config error, 3 infeasible, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .augment import HorizonMismatch
from .experiment import (MODES, REPRO, ConfigError, ExperimentConfig, build_product,
                         evaluate_policy, repro_config, run_experiment)
from .gridworld import SpecError
from .learner import NumericOverflow
from .planner import Infeasible, ToleranceNotReached
from .serialize import dump, load, policy_from_json
from .simulator import EVALUATION, Simulator, stream
from .stl import FormulaSyntaxError, FragmentError

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--trajectories", type=int, help="evaluation rollouts")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="stlcmdp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("check", "validate a config"), ("plan", "exact planning"),
                       ("learn", "model-free learning")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--config", required=True)
    p = sub.add_parser("eval", parents=[common], help="evaluate a saved policy")
    p.add_argument("--config", required=True)
    p.add_argument("--policy", required=True, help="policy.json written by plan/learn")
    p.add_argument("--index", type=int, default=0, help="entry of policy.json to evaluate")
    p = sub.add_parser("repro", parents=[common], help="built-in case studies")
    p.add_argument("case", choices=sorted(REPRO))
    p.add_argument("--mode", choices=MODES, default="both")
    return parser


def _load_config(args) -> ExperimentConfig:
    if args.command == "repro":
        config = repro_config(args.case)
    else:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        config = ExperimentConfig.from_dict(doc)
    if args.seed is not None:
        config.seed = args.seed
    if args.trajectories is not None:
        if args.trajectories < 1:
            raise ConfigError("--trajectories must be positive")
        config.trajectories = args.trajectories
    return config


def _summary(report: dict) -> str:
    lines = [f"product states: {report['product_states']}"]
    for entry in report["results"]:
        for method in ("exact", "learn"):
            if method not in entry:
                continue
            ev = entry[method]["evaluation"]
            head = f"p_thres={entry['p_thres']} {method}:"
            if method == "exact":
                head += f" optimal={entry[method]['optimal_value']:.4f}"
            lines.append(f"{head} evaluated sat={ev['satisfaction']:.4f} "
                         f"cost={ev['cost']:.4f}")
    return "\n".join(lines)


def _run(args) -> int:
    config = _load_config(args)
    if args.command == "check":
        augmented = build_product(config)
        print(f"ok: {augmented.product.num_states} product states, "
              f"horizon {augmented.product.horizon}")
        return EXIT_OK
    if args.command == "eval":
        augmented = build_product(config)
        runs = load(args.policy).get("runs", [])
        if not 0 <= args.index < len(runs):
            raise ConfigError(f"policy file holds {len(runs)} entries")
        policy = policy_from_json(runs[args.index])
        p_thres = runs[args.index].get("metadata", {}).get("p_thres", config.thresholds[0])
        cmdp = augmented.satisfaction_problem(p_thres)
        if policy.shape != cmdp.mdp.table_shape:
            raise ConfigError(f"policy shape {policy.shape} does not match {cmdp.mdp.table_shape}")
        sim = Simulator(cmdp.mdp, cmdp.cost, cmdp.constraint)
        report = evaluate_policy(sim, augmented, policy, config.trajectories,
                                 stream(config.seed, EVALUATION, 1000 + args.index))
        Path(args.out).mkdir(parents=True, exist_ok=True)
        dump({"p_thres": p_thres, "seed": config.seed, "evaluation": report.to_dict()},
             Path(args.out) / "report.json")
        print(f"sat={report.satisfaction:.4f} cost={report.cost:.4f}")
        return EXIT_OK
    mode = {"plan": "exact", "learn": "learn"}.get(args.command, getattr(args, "mode", None))
    report = run_experiment(config, args.out, mode)
    print(_summary(report))
    for p, t in zip(config.thresholds, report["timings"]):
        print(f"p_thres={p} timings: " + ", ".join(f"{k} {v:.1f}s" for k, v in t.items()),
              file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (ConfigError, SpecError, FormulaSyntaxError, FragmentError, HorizonMismatch) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ToleranceNotReached, NumericOverflow, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
