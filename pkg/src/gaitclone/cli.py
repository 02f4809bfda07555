"""Command-line entry point: collect -> train -> eval -> report, plus an
expert trajectory demo. Batch use only; every subcommand is idempotent
given the same config and seeds."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import Config, load_config
from .evaluate import (
    eval_batch, eval_ood, summarize, write_episode_csv, write_long_csv,
    write_report,
)
from .expert import run_expert_episode
from .pipeline import TAGS, collect, train_all
from .plant import Gait


def _load(args) -> Config:
    if args.config is None:
        return Config()
    return load_config(args.config)


def _dataset_paths(cfg: Config, size: int) -> dict:
    out = {}
    for tag in TAGS:
        p = Path(cfg.out_dir) / f"data_{tag}_n{size}.bin"
        if not p.exists():
            raise FileNotFoundError(
                f"dataset {p} not found; run `gaitclone collect --episodes "
                f"{size}` first")
        out[tag] = str(p)
    return out


def _model_path(cfg: Config, tag: str, size: int) -> Path:
    p = Path(cfg.out_dir) / f"policy_{tag}_n{size}.mlp"
    if not p.exists():
        raise FileNotFoundError(
            f"model {p} not found; run `gaitclone train --size {size}` first")
    return p


def cmd_collect(args):
    cfg = _load(args)
    seed = cfg.experiment.collect_seed if args.seed is None else args.seed
    manifest = collect(args.episodes, seed, cfg.out_dir, plant=cfg.plant,
                       gaits=cfg.gait_params(), econ=cfg.expert,
                       workers=args.workers or cfg.workers)
    print(f"collected {manifest['n_episodes']} episodes "
          f"({manifest['attempts']} attempts, "
          f"{len(manifest['excluded_attempts'])} excluded, "
          f"{manifest['row_count']} rows) -> {cfg.out_dir}")
    return 0


def cmd_train(args):
    cfg = _load(args)
    paths = _dataset_paths(cfg, args.size)
    result = train_all(paths, cfg.train, cfg.out_dir, hidden=cfg.experiment.hidden)
    for tag, mse in result["holdout_mse"].items():
        print(f"policy_{tag}_n{args.size}: holdout mse {mse:.5f}")
    return 0


def cmd_eval(args):
    cfg = _load(args)
    exp = cfg.experiment
    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else list(exp.sizes)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kw = dict(plant=cfg.plant, gaits=cfg.gait_params(), econ=cfg.expert,
              workers=args.workers or cfg.workers)
    n = exp.eval_episodes
    section = {}

    if args.suite in ("single", "triple"):
        n_tuples = 1 if args.suite == "single" else 3
        seed = exp.eval_seed + (0 if args.suite == "single" else 1)
        expert_res = eval_batch(None, n, seed, n_tuples=n_tuples, **kw)
        write_episode_csv(out_dir / f"eval_{args.suite}_expert.csv",
                          expert_res, label="expert")
        section["expert"] = summarize(expert_res)
        for size in sizes:
            for tag in TAGS:
                path = _model_path(cfg, tag, size)
                res = eval_batch(str(path), n, seed, n_tuples=n_tuples, **kw)
                label = f"{tag}_n{size}"
                write_episode_csv(out_dir / f"eval_{args.suite}_{label}.csv",
                                  res, label=label)
                section[label] = summarize(res)
                print(f"{args.suite} {label}: "
                      f"{section[label]['failure_rate_per_100']:.0f} fails/100")
    elif args.suite == "ood":
        size = exp.ood_size
        seed = exp.eval_seed + 2
        for tag in ("cc", "vc"):
            path = _model_path(cfg, tag, size)
            per_angle = eval_ood(str(path), exp.ood_angles_deg, n, seed, **kw)
            for ang, res in per_angle.items():
                label = f"{tag}_n{size}_ang{ang:g}"
                write_episode_csv(out_dir / f"eval_ood_{label}.csv", res,
                                  label=label)
                section[f"{tag}_n{size}__ang{ang:g}"] = summarize(res)
                print(f"ood {label}: "
                      f"{section[f'{tag}_n{size}__ang{ang:g}']['failure_rate_per_100']:.0f} fails/100")
    else:
        raise ValueError(f"unknown suite {args.suite!r}")

    with open(out_dir / f"eval_{args.suite}.json", "w") as f:
        json.dump(section, f, indent=1, sort_keys=True)
    return 0


def cmd_report(args):
    cfg = _load(args)
    out_dir = Path(cfg.out_dir)
    report = {}
    found = False
    for suite in ("single", "triple", "ood"):
        p = out_dir / f"eval_{suite}.json"
        if p.exists():
            with open(p) as f:
                report[suite] = json.load(f)
            found = True
    if not found:
        raise FileNotFoundError(
            f"no eval_*.json files under {out_dir}; run `gaitclone eval` first")
    write_report(out_dir / "report.json", report)
    write_long_csv(out_dir / "report_long.csv", report)
    print(f"wrote {out_dir / 'report.json'} and {out_dir / 'report_long.csv'}")
    return 0


def cmd_demo(args):
    cfg = _load(args)
    gait = Gait.WALK if args.gait == "walk" else Gait.RUN
    traj = run_expert_episode([(args.vd, args.duration, gait)],
                              seed=args.seed, plant=cfg.plant,
                              gaits=cfg.gait_params(), config=cfg.expert,
                              record_full=True)
    out = args.out or str(Path(cfg.out_dir) / f"demo_{args.gait}_{args.vd:g}.csv")
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    traj.write_csv(out)
    n_flight = int(np.sum(traj.aux[:, 0] == 2))
    print(f"demo: {traj.ticks} ticks, {len(traj.steps)} steps, "
          f"{n_flight} flight ticks, failure={traj.failure} -> {out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gaitclone",
        description="biped step-adaptation expert, behavioral cloning and "
                    "goal-conditioning evaluation")
    parser.add_argument("--config", default=None,
                        help="JSON config path (defaults built in when omitted)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="roll the expert and write datasets")
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="train the three policies for one size")
    p.add_argument("--size", type=int, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run an evaluation suite")
    p.add_argument("--suite", choices=("single", "triple", "ood"), required=True)
    p.add_argument("--sizes", default=None,
                   help="comma-separated dataset sizes (default: config grid)")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="aggregate eval outputs")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("demo", help="dump one expert trajectory as CSV")
    p.add_argument("--gait", choices=("walk", "run"), required=True)
    p.add_argument("--vd", type=float, required=True)
    p.add_argument("--duration", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_demo)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
