"""Single JSON config with strict validation; every knob of the plant,
planner, network, training and experiment grid lives here so a full run is
reproducible from one file."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .dcm import GaitParams
from .expert import ExpertConfig
from .net import TrainConfig
from .plant import PlantParams

__all__ = ["GaitSettings", "ExperimentConfig", "Config", "load_config"]


@dataclass(frozen=True)
class GaitSettings:
    """GaitParams minus omega, which is always derived from the plant."""

    walk_t_nom: float = 0.30
    run_t_nom: float = 0.20
    run_t_f: float = 0.10
    step_width: float = 0.10
    t_min: float = 0.12
    t_max: float = 0.50
    u_limit_x: float = 0.55
    u_limit_y: float = 0.50
    b_halfwidth: float = 0.20

    def build(self, plant: PlantParams) -> GaitParams:
        return GaitParams(omega=plant.omega, **dataclasses.asdict(self))


@dataclass(frozen=True)
class ExperimentConfig:
    sizes: tuple = (25, 50, 100, 200, 400)
    eval_episodes: int = 100
    ood_angles_deg: tuple = (15.0, 30.0, 45.0, 60.0)
    ood_size: int = 400
    collect_seed: int = 1000
    eval_seed: int = 2000
    hidden: tuple = (256, 256, 256)

    def __post_init__(self):
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be >= 1")
        if any(s < 1 for s in self.sizes):
            raise ValueError("dataset sizes must be >= 1")


@dataclass(frozen=True)
class Config:
    out_dir: str = "runs"
    workers: int = 2
    plant: PlantParams = field(default_factory=PlantParams)
    gaits: GaitSettings = field(default_factory=GaitSettings)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def gait_params(self) -> GaitParams:
        return self.gaits.build(self.plant)


_SECTIONS = {
    "plant": PlantParams,
    "gaits": GaitSettings,
    "expert": ExpertConfig,
    "train": TrainConfig,
    "experiment": ExperimentConfig,
}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ValueError(f"config section '{where}' must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown config keys in '{where}': {sorted(unknown)}")
    kwargs = {}
    for k, v in data.items():
        if isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    return cls(**kwargs)


def load_config(path) -> Config:
    """Parse and validate a config file. Unknown keys are rejected."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(
            f"config file {path} not found; create one (see README) or run "
            f"without --config to use built-in defaults")
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ValueError("config root must be a JSON object")
    unknown = set(data) - set(_SECTIONS) - {"out_dir", "workers"}
    if unknown:
        raise ValueError(f"unknown top-level config keys: {sorted(unknown)}")
    kwargs = {}
    if "out_dir" in data:
        kwargs["out_dir"] = str(data["out_dir"])
    if "workers" in data:
        kwargs["workers"] = int(data["workers"])
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _build(cls, data[name], name)
    return Config(**kwargs)
