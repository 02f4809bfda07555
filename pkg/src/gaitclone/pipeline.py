"""Collection and training pipeline.

One expert rollout produces one row per tick holding the shared state, all
three goal vectors and the expert action; the three emitted datasets share
the row index and differ only in their goal columns. Policies for the
three conditionings are then trained with identical hyperparameters and
seeds on their respective datasets.

Dataset files are self-describing binary: a small header (tag, dims, row
count, seed, episode boundaries) followed by float32 rows laid out as
[shared | goal | action]. A lossless CSV export is available for
inspection.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import rollout as rk
from .dcm import GaitParams
from .expert import ExpertConfig, run_expert_episode
from .net import Mlp, TrainConfig, loss, save_mlp, train_mlp
from .plant import Gait, PlantParams

__all__ = [
    "RolloutTuple",
    "Dataset",
    "sample_rollout_tuples",
    "sample_episode_tuples",
    "collect",
    "train_all",
    "TAGS",
    "GOAL_SLICES",
]

TAGS = ("cc", "tcc", "vc")

# column slices of the 31-wide rollout feature rows
SHARED_SLICE = slice(rk.F_SHARED, rk.F_SHARED + rk.N_SHARED)
GOAL_SLICES = {
    "cc": slice(rk.F_CC, rk.F_CC + rk.N_CC),
    "tcc": slice(rk.F_TCC, rk.F_TCC + rk.N_TCC),
    "vc": slice(rk.F_VC, rk.F_VC + rk.N_VC),
}
ACTION_SLICE = slice(rk.F_ACT, rk.F_ACT + rk.N_ACTION)

DATASET_MAGIC = b"BCDS"
DATASET_VERSION = 1


@dataclass(frozen=True)
class RolloutTuple:
    """One command tuple: sagittal velocity, duration, gait."""

    v_d: float
    t_d: float
    gait: Gait

    def __iter__(self):
        yield self.v_d
        yield self.t_d
        yield self.gait


def sample_rollout_tuples(rng: np.random.Generator, count: int) -> list[RolloutTuple]:
    """i.i.d. draws from U(-1.0, 1.3) x U(1, 3) x {walk, run}."""
    if count < 1:
        raise ValueError("count must be >= 1")
    out = []
    for _ in range(count):
        v = float(rng.uniform(-1.0, 1.3))
        t = float(rng.uniform(1.0, 3.0))
        g = Gait(int(rng.integers(0, 2)))
        out.append(RolloutTuple(v, t, g))
    return out


def sample_episode_tuples(rng: np.random.Generator) -> list[RolloutTuple]:
    """One training episode's command sequence: 1-3 tuples, which keeps the
    total simulated time inside the 1-9 s window."""
    k = int(rng.integers(1, 4))
    return sample_rollout_tuples(rng, k)


@dataclass
class Dataset:
    """Columnar (shared, goal, action) transitions plus episode metadata."""

    tag: str
    n_shared: int
    n_goal: int
    n_action: int
    seed: int
    episode_starts: np.ndarray     # int64, row offset per episode
    rows: np.ndarray               # float32 (n_rows, n_shared+n_goal+n_action)
    attempt_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def n_episodes(self) -> int:
        return len(self.episode_starts)

    def episode_slices(self) -> list[slice]:
        bounds = np.append(self.episode_starts, self.n_rows)
        return [slice(int(bounds[i]), int(bounds[i + 1]))
                for i in range(self.n_episodes)]

    def shared(self) -> np.ndarray:
        return self.rows[:, :self.n_shared]

    def goals(self) -> np.ndarray:
        return self.rows[:, self.n_shared:self.n_shared + self.n_goal]

    def actions(self) -> np.ndarray:
        return self.rows[:, self.n_shared + self.n_goal:]

    def inputs(self) -> np.ndarray:
        return self.rows[:, :self.n_shared + self.n_goal]

    def save(self, path):
        with open(path, "wb") as f:
            f.write(DATASET_MAGIC)
            f.write(struct.pack("<I", DATASET_VERSION))
            tag = self.tag.encode("ascii")
            f.write(struct.pack("<I", len(tag)))
            f.write(tag)
            f.write(struct.pack("<III", self.n_shared, self.n_goal, self.n_action))
            f.write(struct.pack("<Q", self.n_rows))
            f.write(struct.pack("<q", self.seed))
            f.write(struct.pack("<I", self.n_episodes))
            f.write(self.episode_starts.astype("<i8").tobytes())
            f.write(self.attempt_indices.astype("<i8").tobytes())
            f.write(self.rows.astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path, "rb") as f:
            if f.read(4) != DATASET_MAGIC:
                raise ValueError(f"{path}: not a dataset file (bad magic)")
            (version,) = struct.unpack("<I", f.read(4))
            if version != DATASET_VERSION:
                raise ValueError(f"{path}: unsupported dataset version {version}")
            (tlen,) = struct.unpack("<I", f.read(4))
            tag = f.read(tlen).decode("ascii")
            n_shared, n_goal, n_action = struct.unpack("<III", f.read(12))
            (n_rows,) = struct.unpack("<Q", f.read(8))
            (seed,) = struct.unpack("<q", f.read(8))
            (n_eps,) = struct.unpack("<I", f.read(4))
            starts = np.frombuffer(f.read(8 * n_eps), dtype="<i8").copy()
            attempts = np.frombuffer(f.read(8 * n_eps), dtype="<i8").copy()
            width = n_shared + n_goal + n_action
            buf = f.read(4 * n_rows * width)
            if len(buf) != 4 * n_rows * width:
                raise ValueError(f"{path}: truncated dataset rows")
            rows = np.frombuffer(buf, dtype="<f4").reshape(n_rows, width).copy()
        return cls(tag=tag, n_shared=n_shared, n_goal=n_goal, n_action=n_action,
                   seed=seed, episode_starts=starts, rows=rows,
                   attempt_indices=attempts)

    def to_csv(self, path):
        """Lossless export: float32 values via repr round-trip exactly."""
        names = ([f"s{i}" for i in range(self.n_shared)]
                 + [f"g{i}" for i in range(self.n_goal)]
                 + [f"a{i}" for i in range(self.n_action)])
        ep = np.zeros(self.n_rows, dtype=np.int64)
        for i, sl in enumerate(self.episode_slices()):
            ep[sl] = i
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["episode"] + names)
            for r in range(self.n_rows):
                w.writerow([int(ep[r])] + [repr(float(v)) for v in self.rows[r]])


def _episode_seed(base_seed: int, attempt: int) -> int:
    return int(np.random.default_rng([base_seed, attempt]).integers(0, 2 ** 62))


def _run_attempt(args):
    base_seed, attempt, plant, gaits, econ = args
    rng = np.random.default_rng([base_seed, attempt, 1])
    tuples = sample_episode_tuples(rng)
    traj = run_expert_episode([tuple(t) for t in tuples],
                              seed=_episode_seed(base_seed, attempt),
                              plant=plant, gaits=gaits, config=econ)
    return (attempt, traj.failure, traj.feat.astype(np.float32),
            [(t.v_d, t.t_d, int(t.gait)) for t in tuples])


def collect(n_episodes: int, seed: int, out_dir,
            plant: PlantParams | None = None,
            gaits: GaitParams | None = None,
            econ: ExpertConfig | None = None,
            workers: int = 1) -> dict:
    """Roll the expert until ``n_episodes`` failure-free episodes are
    banked, then write the three row-aligned dataset files plus a manifest.

    Episodes are keyed by attempt index, so outputs are byte-identical for
    a given seed regardless of worker count, and a smaller collection is a
    prefix of a larger one with the same seed.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plant = plant or PlantParams()
    gaits = gaits or GaitParams(omega=plant.omega)
    econ = econ or ExpertConfig()

    results: dict[int, tuple] = {}
    excluded: list[int] = []
    kept: list[int] = []
    next_attempt = 0
    while len(kept) < n_episodes:
        need = n_episodes - len(kept)
        batch = list(range(next_attempt, next_attempt + need))
        next_attempt += need
        args = [(seed, a, plant, gaits, econ) for a in batch]
        if workers > 1:
            with get_context("fork").Pool(workers) as pool:
                out = pool.map(_run_attempt, args)
        else:
            out = [_run_attempt(a) for a in args]
        for attempt, failure, feat, tuples in out:
            results[attempt] = (failure, feat, tuples)
        for a in batch:
            failure, feat, tuples = results[a]
            if failure:
                excluded.append(a)
            else:
                kept.append(a)

    feats = [results[a][1] for a in kept]
    starts = np.zeros(len(kept), dtype=np.int64)
    off = 0
    for i, f in enumerate(feats):
        starts[i] = off
        off += f.shape[0]
    all_rows = np.concatenate(feats, axis=0)

    paths = {}
    for tag in TAGS:
        gsl = GOAL_SLICES[tag]
        rows = np.concatenate(
            [all_rows[:, SHARED_SLICE], all_rows[:, gsl], all_rows[:, ACTION_SLICE]],
            axis=1)
        ds = Dataset(tag=tag, n_shared=rk.N_SHARED,
                     n_goal=gsl.stop - gsl.start, n_action=rk.N_ACTION,
                     seed=seed, episode_starts=starts.copy(), rows=rows,
                     attempt_indices=np.asarray(kept, dtype=np.int64))
        path = out_dir / f"data_{tag}_n{n_episodes}.bin"
        ds.save(path)
        paths[tag] = str(path)

    manifest = {
        "n_episodes": n_episodes,
        "seed": seed,
        "attempts": next_attempt,
        "excluded_attempts": excluded,
        "row_count": int(all_rows.shape[0]),
        "files": paths,
        "episode_tuples": {str(a): results[a][2] for a in kept},
    }
    mpath = out_dir / f"manifest_n{n_episodes}.json"
    with open(mpath, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    manifest["manifest_path"] = str(mpath)
    return manifest


def _holdout_split(ds: Dataset, frac: float, seed: int):
    rng = np.random.default_rng([seed, 0x401d])
    n_hold = max(1, int(round(frac * ds.n_episodes)))
    hold = set(rng.choice(ds.n_episodes, size=n_hold, replace=False).tolist())
    train_rows, hold_rows = [], []
    for i, sl in enumerate(ds.episode_slices()):
        (hold_rows if i in hold else train_rows).append(np.arange(sl.start, sl.stop))
    return np.concatenate(train_rows), np.concatenate(hold_rows)


def train_on_dataset(ds: Dataset, tag: str, cfg: TrainConfig,
                     hidden=(256, 256, 256), log_path=None) -> Mlp:
    """Train one conditioning's policy on its dataset.

    Hard error when the dataset's conditioning tag does not match: the
    three datasets are row-aligned but their goal columns mean different
    things.
    """
    if ds.tag != tag:
        raise ValueError(f"conditioning mismatch: dataset is '{ds.tag}', "
                         f"requested policy is '{tag}'")
    train_idx, hold_idx = _holdout_split(ds, cfg.holdout_fraction, cfg.seed)
    train_idx = train_idx[::cfg.sample_stride]
    x = ds.inputs().astype(np.float64)
    y = ds.actions().astype(np.float64)
    x_tr, y_tr = x[train_idx], y[train_idx]
    x_ho, y_ho = x[hold_idx], y[hold_idx]

    dims = [x.shape[1], *hidden, y.shape[1]]
    net = Mlp.create(dims, seed=cfg.seed, tag=tag)
    in_std = x_tr.std(axis=0)
    out_std = y_tr.std(axis=0)
    net.set_normalizers(x_tr.mean(axis=0), np.maximum(in_std, 1e-6),
                        y_tr.mean(axis=0), np.maximum(out_std, 1e-6))
    train_mlp(net, x_tr, y_tr, cfg, x_val=x_ho, y_val=y_ho, log_path=log_path)
    return net


def train_all(dataset_paths: dict, cfg: TrainConfig, out_dir,
              hidden=(256, 256, 256)) -> dict:
    """Train the three policies with identical hyperparameters and seeds;
    they differ only in the goal columns of their inputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_paths = {}
    holdout_mse = {}
    for tag in TAGS:
        ds = Dataset.load(dataset_paths[tag])
        log_path = out_dir / f"train_{tag}_n{ds.n_episodes}.csv"
        net = train_on_dataset(ds, tag, cfg, hidden=hidden, log_path=log_path)
        path = out_dir / f"policy_{tag}_n{ds.n_episodes}.mlp"
        save_mlp(net, path)
        model_paths[tag] = str(path)
        _, hold_idx = _holdout_split(ds, cfg.holdout_fraction, cfg.seed)
        holdout_mse[tag] = loss(net, ds.inputs()[hold_idx].astype(np.float64),
                                ds.actions()[hold_idx].astype(np.float64))
    return {"models": model_paths, "holdout_mse": holdout_mse}
