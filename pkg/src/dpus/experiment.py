"""Scenario calibration and experiment sweeps."""

from __future__ import annotations

import csv
import io
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentPlan
from .learners import LEARNERS, BaseDQNLearner, TrainConfig, TrainingDivergence, run_fixed_policy
from .marl import CorridorEnv
from .qnet import load_checkpoint, save_checkpoint
from .sim import CorridorConfig

log = logging.getLogger(__name__)

METRICS_FIELDS = ("algorithm", "target_rate", "measured_rate", "seed", "episode",
                  "team_reward", "reward_agent_1", "reward_agent_2", "epsilon",
                  "dropped_arrivals", "wall_seconds")
SUMMARY_FIELDS = ("algorithm", "target_rate", "demand_multiplier", "seed", "episodes",
                  "mean_measured_rate", "mean_team_reward_last100", "status")

MULTIPLIER_BOUNDS = (0.1, 10.0)


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Calibration:
    demand_multiplier: float
    achieved_rate: float
    iterations: int


def measured_rate(corridor: CorridorConfig, multiplier: float, seeds, horizon: int) -> float:
    """Mean spill-over rate of hold-only episodes, one episode per seed."""
    scenario = replace(corridor, demand_multiplier=float(multiplier))
    rates = [run_fixed_policy(scenario, 1, int(s), horizon)[0].spillover_rate for s in seeds]
    return float(np.mean(rates))


def calibrate_scenario(target_rate: float, corridor: CorridorConfig, seeds=range(20),
                       horizon: int = 720, tolerance: float = 0.05,
                       max_iterations: int = 30) -> Calibration:
    """Bisect the demand multiplier until the hold-policy spill-over rate
    is within ``tolerance`` of ``target_rate``.

    Raises :class:`CalibrationError` when the target lies outside the rates
    reachable with multipliers in ``MULTIPLIER_BOUNDS``.
    """
    if not 0.0 <= target_rate <= 1.0:
        raise ValueError("target_rate must lie in [0, 1]")
    seeds = list(seeds)
    lo, hi = MULTIPLIER_BOUNDS
    r_lo = measured_rate(corridor, lo, seeds, horizon)
    if abs(r_lo - target_rate) <= tolerance:
        return Calibration(lo, r_lo, 0)
    r_hi = measured_rate(corridor, hi, seeds, horizon)
    if abs(r_hi - target_rate) <= tolerance:
        return Calibration(hi, r_hi, 0)
    if not r_lo < target_rate < r_hi:
        raise CalibrationError(
            f"target rate {target_rate} unreachable: multipliers {lo}..{hi} "
            f"give rates {r_lo:.3f}..{r_hi:.3f}")
    best = (abs(r_lo - target_rate), lo, r_lo)
    for it in range(1, max_iterations + 1):
        mid = 0.5 * (lo + hi)
        r = measured_rate(corridor, mid, seeds, horizon)
        best = min(best, (abs(r - target_rate), mid, r))
        if abs(r - target_rate) <= tolerance:
            return Calibration(mid, r, it)
        if r < target_rate:
            lo = mid
        else:
            hi = mid
    _, mult, rate = best
    return Calibration(mult, rate, max_iterations)


def cell_name(algorithm: str, target_rate: float, seed: int) -> str:
    return f"{algorithm}_rate{target_rate:g}_seed{seed}"


def metrics_rows(algorithm, target_rate, seed, metrics, record_wall_time=False):
    for m in metrics:
        rewards = list(m.agent_rewards) + [""] * (2 - len(m.agent_rewards))
        yield {
            "algorithm": algorithm,
            "target_rate": repr(float(target_rate)),
            "measured_rate": repr(m.spillover_rate),
            "seed": seed,
            "episode": m.episode,
            "team_reward": repr(m.team_reward),
            "reward_agent_1": repr(rewards[0]),
            "reward_agent_2": repr(rewards[1]) if rewards[1] != "" else "",
            "epsilon": repr(m.epsilon),
            "dropped_arrivals": m.dropped_arrivals,
            "wall_seconds": repr(m.wall_seconds) if record_wall_time else "0.0",
        }


def _atomic_write(path: Path, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_metrics(path, rows):
    buf = io.StringIO(newline="")
    writer = csv.DictWriter(buf, fieldnames=METRICS_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    _atomic_write(Path(path), buf.getvalue().encode("utf-8"))


def read_metrics(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def learner_networks(learner: BaseDQNLearner):
    return learner.network_ if hasattr(learner, "network_") else learner.networks_


def save_learner(path, learner: BaseDQNLearner, algorithm: str, corridor: CorridorConfig):
    meta = {"algorithm": algorithm, "corridor": corridor.__dict__,
            "params": {k: v for k, v in learner.get_params().items() if k != "callback"}}
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        save_checkpoint(tmp, learner_networks(learner), meta)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def restore_learner(path) -> tuple[BaseDQNLearner, CorridorConfig]:
    """Rebuild a fitted learner (ready for ``predict``/``evaluate``) from a checkpoint."""
    nets, meta = load_checkpoint(path, with_meta=True)
    corridor = CorridorConfig(**meta["corridor"])
    params = meta["params"]
    params["hidden_sizes"] = tuple(params["hidden_sizes"])
    learner = LEARNERS[meta["algorithm"]](**params)
    env = CorridorEnv(corridor)
    learner.n_agents_ = env.n_agents
    learner.n_features_in_ = env.n_agents * env.obs_size
    learner._setup(env, np.random.SeedSequence(0))
    if hasattr(learner, "network_"):
        learner.network_ = nets
    else:
        learner.networks_ = list(nets)
    learner._begin_episode()
    learner.metrics_ = []
    return learner, corridor


def run_cell(algorithm: str, target_rate: float, multiplier: float, seed: int,
             train: TrainConfig, corridor: CorridorConfig, out_dir, overwrite=False,
             record_wall_time=False) -> dict:
    """Train one (algorithm, scenario, seed) cell and write its files."""
    out_dir = Path(out_dir)
    name = cell_name(algorithm, target_rate, seed)
    metrics_path = out_dir / f"metrics_{name}.csv"
    ckpt_path = out_dir / f"checkpoint_{name}.npz"
    summary = {"algorithm": algorithm, "target_rate": target_rate,
               "demand_multiplier": multiplier, "seed": seed}
    if metrics_path.exists() and ckpt_path.exists() and not overwrite:
        log.info("skipping %s: outputs exist (use overwrite to replace)", name)
        rows = read_metrics(metrics_path)
        return {**summary, **_summarize([float(r["team_reward"]) for r in rows],
                                        [float(r["measured_rate"]) for r in rows]),
                "status": "skipped"}
    scenario = replace(corridor, demand_multiplier=float(multiplier))
    config = replace(train, seed=int(seed))
    learner = LEARNERS[algorithm].from_config(config)
    try:
        learner.fit(scenario)
    except TrainingDivergence as exc:
        log.warning("cell %s aborted: %s", name, exc)
        return {**summary, "episodes": len(getattr(learner, "metrics_", [])),
                "mean_measured_rate": "", "mean_team_reward_last100": "",
                "status": f"aborted: {exc}"}
    write_metrics(metrics_path, metrics_rows(algorithm, target_rate, seed,
                                             learner.metrics_, record_wall_time))
    save_learner(ckpt_path, learner, algorithm, scenario)
    return {**summary,
            **_summarize([m.team_reward for m in learner.metrics_],
                         [m.spillover_rate for m in learner.metrics_]),
            "status": "ok"}


def _summarize(team_rewards, rates) -> dict:
    return {"episodes": len(team_rewards),
            "mean_measured_rate": repr(float(np.mean(rates))),
            "mean_team_reward_last100": repr(float(np.mean(team_rewards[-100:])))}


def _run_cell_args(args):
    return run_cell(*args)


def run_sweep(plan: ExperimentPlan, out_dir=None) -> list[dict]:
    """Train every (algorithm, scenario, seed) cell of ``plan``.

    Writes one metrics CSV and one checkpoint per cell plus ``summary.csv``
    and ``calibration.csv``; returns the summary rows.  Aborted cells are
    recorded in the summary and do not stop the sweep.
    """
    out_dir = Path(out_dir or plan.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenarios = []
    calib_rows = []
    for target, mult in plan.scenarios:
        if mult is None:
            cal = calibrate_scenario(target, plan.corridor, range(plan.calibration_seeds),
                                     plan.train.horizon, plan.calibration_tolerance)
            mult = cal.demand_multiplier
            calib_rows.append((target, mult, cal.achieved_rate, cal.iterations))
            log.info("scenario %.2f: multiplier %.4f gives rate %.3f",
                     target, mult, cal.achieved_rate)
        scenarios.append((target, mult))
    if calib_rows:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["target_rate", "demand_multiplier", "achieved_rate", "iterations"])
        w.writerows([[repr(float(a)), repr(float(b)), repr(float(c)), d]
                     for a, b, c, d in calib_rows])
        _atomic_write(out_dir / "calibration.csv", buf.getvalue().encode("utf-8"))

    jobs = [(algo, target, mult, seed, plan.train, plan.corridor, out_dir,
             plan.overwrite, plan.record_wall_time)
            for target, mult in scenarios for algo in plan.algorithms for seed in plan.seeds]
    if plan.workers > 1:
        with ProcessPoolExecutor(plan.workers) as pool:
            results = list(pool.map(_run_cell_args, jobs))
    else:
        results = [_run_cell_args(j) for j in jobs]

    buf = io.StringIO(newline="")
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in results:
        writer.writerow({k: (repr(float(row[k])) if k in ("target_rate", "demand_multiplier")
                             else row[k]) for k in SUMMARY_FIELDS})
    _atomic_write(out_dir / "summary.csv", buf.getvalue().encode("utf-8"))
    return results
