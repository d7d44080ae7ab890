"""Command-line entry point: ``dpus <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentPlan, load_config
from .experiment import (CalibrationError, calibrate_scenario, restore_learner, run_cell,
                         run_sweep)
from .learners import LEARNERS, TrainConfig, TrainingDivergence, evaluate, run_fixed_policy
from .sim import CorridorConfig
from .theory import (canonical_coupled_mdp, check_additivity, check_coupling_gap,
                     random_factored_mdp)

EXIT_OK, EXIT_USAGE, EXIT_ABORT = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # the subcommand copy uses SUPPRESS so it does not reset flags given
    # before the subcommand name
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="key = value configuration file", **kw)
    p.add_argument("--seed", type=int, help="override the seed (non-negative)", **kw)
    p.add_argument("--out", type=Path, help="output directory", **kw)
    p.add_argument("-v", "--verbose", action="store_true", **kw)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = _Parser(prog="dpus", description="Traffic-signal MARL experiments.",
                     parents=[_global_flags(suppress=False)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="fixed-policy rollout")
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--horizon", type=int)
    p.add_argument("--action", choices=["decrease", "hold", "increase"], default="hold")

    p = sub.add_parser("train", parents=[common], help="train one cell")
    p.add_argument("--algorithm", choices=list(LEARNERS), default="dpus")
    p.add_argument("--target-rate", type=float, default=None,
                   help="calibrate demand to this spill-over rate first")
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("sweep", parents=[common], help="run the full plan")
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("evaluate", parents=[common], help="greedy rollout of a checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("check-theory", parents=[common], help="run the value-iteration checks")
    p.add_argument("--instances", type=int, default=20)

    p = sub.add_parser("calibrate", parents=[common], help="calibrate demand multipliers")
    p.add_argument("--rates", type=float, nargs="+")
    return parser


def _print_metrics(rows, out=None):
    out = out or sys.stdout
    print("episode,team_reward,spillover_rate,dropped_arrivals", file=out)
    for m in rows:
        print(f"{m.episode},{m.team_reward:.3f},{m.spillover_rate:.4f},{m.dropped_arrivals}",
              file=out)


def _load(args):
    if args.config is not None:
        corridor, train, plan = load_config(args.config)
    else:
        corridor, train = CorridorConfig(), TrainConfig()
        plan = ExperimentPlan(train=train, corridor=corridor)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        train = replace(train, seed=args.seed)
        plan = replace(plan, seeds=(args.seed,), train=train)
    if args.out is not None:
        plan = replace(plan, output_dir=str(args.out))
    return corridor, train, plan


def cmd_simulate(args, corridor, train, plan):
    action = {"decrease": 0, "hold": 1, "increase": 2}[args.action]
    rows = run_fixed_policy(corridor, args.episodes, train.seed,
                            args.horizon or train.horizon, action)
    _print_metrics(rows)
    return EXIT_OK


def cmd_train(args, corridor, train, plan):
    out = Path(plan.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    target, mult = (plan.scenarios[0] if args.target_rate is None
                    else (args.target_rate, None))
    if args.target_rate is None and not plan.demand_multipliers:
        mult = corridor.demand_multiplier
    if mult is None:
        cal = calibrate_scenario(target, corridor, range(plan.calibration_seeds),
                                 train.horizon, plan.calibration_tolerance)
        mult = cal.demand_multiplier
        print(f"calibrated multiplier {mult:.4f} (rate {cal.achieved_rate:.3f})")
    row = run_cell(args.algorithm, target, mult, train.seed, train, corridor, out,
                   args.overwrite or plan.overwrite, plan.record_wall_time)
    print(f"{row['algorithm']} seed {row['seed']}: {row['status']}, "
          f"mean team reward (last 100) {row['mean_team_reward_last100']}")
    return EXIT_ABORT if row["status"].startswith("aborted") else EXIT_OK


def cmd_sweep(args, corridor, train, plan):
    if args.overwrite:
        plan = replace(plan, overwrite=True)
    rows = run_sweep(plan)
    for r in rows:
        print(f"{r['algorithm']:8s} rate {r['target_rate']:<5g} seed {r['seed']:<3d} "
              f"{r['status']:8s} {r['mean_team_reward_last100']}")
    return EXIT_ABORT if any(r["status"].startswith("aborted") for r in rows) else EXIT_OK


def cmd_evaluate(args, corridor, train, plan):
    if not args.checkpoint.exists():
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    learner, saved = restore_learner(args.checkpoint)
    rows = evaluate(learner, saved, args.episodes, train.seed,
                    args.horizon or learner.horizon)
    _print_metrics(rows)
    return EXIT_OK


def cmd_check_theory(args, corridor, train, plan):
    rng = np.random.default_rng(train.seed)
    results = []
    for k in range(args.instances):
        sizes = tuple(int(x) for x in rng.integers(2, 5, size=2))
        acts = tuple(int(x) for x in rng.integers(2, 4, size=2))
        rep = check_additivity(random_factored_mdp(rng, sizes, acts, 0.9))
        results.append((f"additivity #{k}", rep.max_discrepancy, rep.passed))
    gap = check_coupling_gap(canonical_coupled_mdp())
    results.append(("coupling gap (expect > 0.1)", gap.max_discrepancy,
                    gap.max_discrepancy > 0.1 and bool(gap.policy_mismatches)))
    vac = check_coupling_gap(canonical_coupled_mdp(reachable=False),
                             start_states=[(a, b) for a in (0, 1) for b in (0, 1)])
    results.append(("unreachable coupling", vac.max_discrepancy, vac.passed))
    print(f"{'check':32s} {'max discrepancy':>16s}  result")
    for name, d, ok in results:
        print(f"{name:32s} {d:16.3e}  {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if all(ok for *_, ok in results) else EXIT_ABORT


def cmd_calibrate(args, corridor, train, plan):
    rates = args.rates or plan.target_rates
    print("target_rate,demand_multiplier,achieved_rate")
    for r in rates:
        cal = calibrate_scenario(r, corridor, range(plan.calibration_seeds),
                                 train.horizon, plan.calibration_tolerance)
        print(f"{r},{cal.demand_multiplier:.6f},{cal.achieved_rate:.4f}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "evaluate": cmd_evaluate,
    "check-theory": cmd_check_theory,
    "calibrate": cmd_calibrate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        corridor, train, plan = _load(args)
        return COMMANDS[args.command](args, corridor, train, plan)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDivergence, CalibrationError, RuntimeError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
