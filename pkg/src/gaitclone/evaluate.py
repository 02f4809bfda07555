"""Evaluation harness: single batch, triple batch, out-of-distribution
headings; failure rate, survival time, velocity tracking and contact
tracking metrics.

Policies are rolled out closed loop at 1 kHz. The expert's planner runs in
parallel every tick as the online goal generator: it computes the contact
plan from the current, policy-driven state and supplies the contact goals;
velocity-conditioned policies receive the command directly. Episode i uses
the same command sequence and initial state for every policy, so
comparisons are paired. The expert itself can be evaluated through the
same harness (policy=None) as the metric ceiling.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .dcm import GaitParams
from .expert import ExpertConfig, run_episode
from .net import Mlp, load_mlp
from .pipeline import RolloutTuple, sample_rollout_tuples
from .plant import PlantParams

__all__ = [
    "EvalEpisodeResult",
    "run_policy_episode",
    "eval_batch",
    "eval_single_batch",
    "eval_triple_batch",
    "eval_ood",
    "failure_rate",
    "survival_quartiles",
    "error_summary",
    "write_episode_csv",
    "write_report",
    "write_long_csv",
]


@dataclass
class EvalEpisodeResult:
    """Per-episode outcome and tracking errors."""

    survived: bool
    survival_time: float
    expected_duration: float
    failure_kind: int                       # 0 none, 1 velocity, 2 height
    vel_err_x: list[float] = field(default_factory=list)   # per step
    vel_err_y: list[float] = field(default_factory=list)
    contact_err: list[float] = field(default_factory=list)  # per touchdown
    n_steps: int = 0

    @property
    def vel_err(self) -> list[float]:
        return [math.hypot(ex, ey) for ex, ey in zip(self.vel_err_x, self.vel_err_y)]


def _result_from_traj(traj, commands) -> EvalEpisodeResult:
    res = EvalEpisodeResult(
        survived=traj.failure == 0,
        survival_time=traj.survival_time,
        expected_duration=traj.expected_duration,
        failure_kind=int(traj.failure),
        n_steps=len(traj.steps),
    )
    st = traj.steps
    if traj.initial_com is not None and len(st) > 0:
        # prepend the episode start as the zeroth step boundary
        t0 = np.array([[0.0, -1.0, 0.0, 0.0, 0.0, 0.0,
                        traj.initial_com[0], traj.initial_com[1], 0.0]])
        st = np.vstack([t0, st])
    for i in range(1, len(st)):
        dt_ = st[i, 0] - st[i - 1, 0]
        if dt_ <= 0:
            continue
        ci = int(st[i, 8])
        cmd = commands[min(ci, len(commands) - 1)]
        vx = (st[i, 6] - st[i - 1, 6]) / dt_
        vy = (st[i, 7] - st[i - 1, 7]) / dt_
        res.vel_err_x.append(abs(vx - cmd.v_d[0]))
        res.vel_err_y.append(abs(vy - cmd.v_d[1]))
        if st[i, 1] >= 0:
            res.contact_err.append(
                math.hypot(st[i, 2] - st[i, 4], st[i, 3] - st[i, 5]))
    return res


def run_policy_episode(policy: Mlp | None, tuples, seed: int,
                       heading: float = 0.0,
                       plant: PlantParams | None = None,
                       gaits: GaitParams | None = None,
                       econ: ExpertConfig | None = None) -> EvalEpisodeResult:
    """Closed loop rollout of one policy (or the expert when None)."""
    traj = run_episode(tuples, seed=seed, heading=heading, plant=plant,
                       gaits=gaits, config=econ, policy=policy)
    return _result_from_traj(traj, traj.commands)


def _episode_tuples(seed: int, index: int, n_tuples: int) -> list[RolloutTuple]:
    rng = np.random.default_rng([seed, index, 2])
    return sample_rollout_tuples(rng, n_tuples)


def _eval_one(args):
    policy_path, tuples, ep_seed, heading, plant, gaits, econ = args
    policy = load_mlp(policy_path) if policy_path is not None else None
    res = run_policy_episode(policy, tuples, ep_seed, heading=heading,
                             plant=plant, gaits=gaits, econ=econ)
    return res


def eval_batch(policy: Mlp | str | None, n_episodes: int, seed: int,
               n_tuples: int = 1, heading: float = 0.0,
               plant: PlantParams | None = None,
               gaits: GaitParams | None = None,
               econ: ExpertConfig | None = None,
               workers: int = 1) -> list[EvalEpisodeResult]:
    """n episodes drawn from the training command distribution; episode i
    always gets the same tuples and initial state, whatever the policy."""
    if isinstance(policy, (str, Path)):
        policy_path = str(policy)
        policy_obj = None
    else:
        policy_path = None
        policy_obj = policy
    jobs = []
    for i in range(n_episodes):
        tuples = [tuple(t) for t in _episode_tuples(seed, i, n_tuples)]
        ep_seed = int(np.random.default_rng([seed, i, 3]).integers(0, 2 ** 62))
        jobs.append((policy_path, tuples, ep_seed, heading, plant, gaits, econ))
    if workers > 1 and policy_path is not None:
        with get_context("fork").Pool(workers) as pool:
            return pool.map(_eval_one, jobs)
    out = []
    for job in jobs:
        if policy_path is None:
            _, tuples, ep_seed, hd, pl, ga, ec = job
            out.append(run_policy_episode(policy_obj, tuples, ep_seed,
                                          heading=hd, plant=pl, gaits=ga,
                                          econ=ec))
        else:
            out.append(_eval_one(job))
    return out


def eval_single_batch(policy, n_episodes: int = 100, seed: int = 0,
                      **kw) -> list[EvalEpisodeResult]:
    """One command tuple per episode."""
    return eval_batch(policy, n_episodes, seed, n_tuples=1, **kw)


def eval_triple_batch(policy, n_episodes: int = 100, seed: int = 0,
                      **kw) -> list[EvalEpisodeResult]:
    """Three consecutive command tuples per episode: gait and velocity
    switches on the fly."""
    return eval_batch(policy, n_episodes, seed, n_tuples=3, **kw)


def eval_ood(policy, angles_deg, n_episodes: int = 100, seed: int = 0,
             **kw) -> dict[float, list[EvalEpisodeResult]]:
    """Single-batch episodes with the commanded velocity rotated off the
    sagittal axis by each angle; angles are out of the training
    distribution (which is sagittal only)."""
    out = {}
    for ang in angles_deg:
        if ang == 0:
            raise ValueError("0 degrees is the training distribution, not OOD")
        out[float(ang)] = eval_batch(policy, n_episodes, seed, n_tuples=1,
                                     heading=math.radians(ang), **kw)
    return out


def failure_rate(results: list[EvalEpisodeResult]) -> float:
    """Failures per 100 episodes."""
    if not results:
        return 0.0
    return 100.0 * sum(1 for r in results if not r.survived) / len(results)


def survival_quartiles(results: list[EvalEpisodeResult]) -> tuple[float, float, float]:
    times = np.array([r.survival_time for r in results])
    q1, q2, q3 = np.percentile(times, [25, 50, 75])
    return float(q1), float(q2), float(q3)


def error_summary(values: list[float]) -> dict:
    """Distribution summary of pooled per-step / per-contact errors."""
    if not values:
        return {"count": 0, "mean": None, "q1": None, "median": None, "q3": None}
    arr = np.asarray(values, dtype=float)
    q1, q2, q3 = np.percentile(arr, [25, 50, 75])
    return {"count": int(arr.size), "mean": float(arr.mean()),
            "q1": float(q1), "median": float(q2), "q3": float(q3)}


def summarize(results: list[EvalEpisodeResult]) -> dict:
    pooled_v = [e for r in results for e in r.vel_err]
    pooled_vx = [e for r in results for e in r.vel_err_x]
    pooled_vy = [e for r in results for e in r.vel_err_y]
    pooled_c = [e for r in results for e in r.contact_err]
    q1, q2, q3 = survival_quartiles(results) if results else (0.0, 0.0, 0.0)
    return {
        "episodes": len(results),
        "failure_rate_per_100": failure_rate(results),
        "survival_quartiles": [q1, q2, q3],
        "velocity_error": error_summary(pooled_v),
        "velocity_error_x": error_summary(pooled_vx),
        "velocity_error_y": error_summary(pooled_vy),
        "contact_error": error_summary(pooled_c),
    }


def write_episode_csv(path, results: list[EvalEpisodeResult], label: str = ""):
    """One row per episode; the aggregate report is recomputable from it."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["label", "episode", "survived", "survival_time",
                    "expected_duration", "failure_kind", "n_steps",
                    "mean_vel_err", "mean_vel_err_x", "mean_vel_err_y",
                    "mean_contact_err"])
        for i, r in enumerate(results):
            w.writerow([
                label, i, int(r.survived), repr(r.survival_time),
                repr(r.expected_duration), r.failure_kind, r.n_steps,
                repr(float(np.mean(r.vel_err))) if r.vel_err else "",
                repr(float(np.mean(r.vel_err_x))) if r.vel_err_x else "",
                repr(float(np.mean(r.vel_err_y))) if r.vel_err_y else "",
                repr(float(np.mean(r.contact_err))) if r.contact_err else "",
            ])


def write_report(path, report: dict):
    with open(path, "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)


def write_long_csv(path, report: dict):
    """Plot-ready long format: one row per (section, policy, size, metric)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["section", "policy", "size", "metric", "value"])
        for section, policies in report.items():
            if not isinstance(policies, dict):
                continue
            for key, summ in policies.items():
                if not isinstance(summ, dict) or "failure_rate_per_100" not in summ:
                    continue
                parts = key.split("_n")
                pol = parts[0]
                size = parts[1] if len(parts) > 1 else ""
                rows = {
                    "failure_rate_per_100": summ["failure_rate_per_100"],
                    "survival_q1": summ["survival_quartiles"][0],
                    "survival_median": summ["survival_quartiles"][1],
                    "survival_q3": summ["survival_quartiles"][2],
                    "vel_err_mean": summ["velocity_error"]["mean"],
                    "vel_err_x_mean": summ["velocity_error_x"]["mean"],
                    "vel_err_y_mean": summ["velocity_error_y"]["mean"],
                    "contact_err_mean": summ["contact_error"]["mean"],
                }
                for metric, value in rows.items():
                    w.writerow([section, pol, size, metric,
                                "" if value is None else repr(value)])
