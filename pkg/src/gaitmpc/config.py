"""Experiment configuration: one JSON document drives a whole run.

The file is stored verbatim in every run's manifest so results are
reproducible from the manifest alone. Unknown keys are rejected to catch
typos early.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .cem import CEMConfig
from .model import TrainingConfig
from .plants import PlantParams, SurrogateQuadruped
from .rewards import RewardSpec, SpeedProfile
from .runtime import ClockModel
from .tg import ActionLimits, TGParams, TGSetup


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 1)."""


@dataclass
class ScheduleConfig:
    episodes: int = 36
    episodes_per_update: int = 3
    warmup_episodes: int = 3

    def __post_init__(self):
        if self.episodes < 0 or self.warmup_episodes < 0:
            raise ConfigError("episode counts must be non-negative")
        if self.episodes_per_update < 1:
            raise ConfigError("episodes_per_update must be >= 1")


@dataclass
class WarmupConfig:
    """Random exploration around the open-loop TG during warmup episodes.

    omega_bias draws one constant per-leg phase-rate offset per episode so
    the buffer covers sustained left/right gait asymmetries (and thereby
    yaw dynamics), on top of the per-step correlated noise.
    """

    gamma: float = 0.5
    swing_sigma: float = 0.25
    extension_sigma: float = 0.12
    omega_sigma: float = 0.4
    omega_bias: float = 0.5


@dataclass
class ExperimentConfig:
    master_seed: int = 0
    dt: float = 0.006
    episode_seconds: float = 7.5
    async_mode: bool = True
    initial_phases: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    plant: PlantParams = field(default_factory=PlantParams)
    tg_params: TGParams = field(default_factory=TGParams)
    tg_base_rate: float = float(2.0 * np.pi)
    tg_nominal_omega: float = 1.0
    tg_enabled: bool = True
    limits: ActionLimits = field(default_factory=ActionLimits)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    cem: CEMConfig = field(default_factory=CEMConfig)
    clock: ClockModel = field(default_factory=ClockModel)
    reward: RewardSpec = field(default_factory=RewardSpec)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    warmup: WarmupConfig = field(default_factory=WarmupConfig)

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.episode_seconds <= 0:
            raise ConfigError("episode_seconds must be positive")
        if abs(self.plant.dt - self.dt) > 1e-12:
            self.plant = PlantParams(**{**asdict(self.plant), "dt": self.dt})

    @property
    def episode_steps(self) -> int:
        return int(round(self.episode_seconds / self.dt))

    # ------------------------------------------------------------ builders

    def make_plant(self) -> SurrogateQuadruped:
        return SurrogateQuadruped(self.plant)

    def make_tg(self) -> TGSetup:
        return TGSetup.uniform(self.tg_params, base_rate=self.tg_base_rate,
                               limits=self.limits, enabled=self.tg_enabled,
                               nominal_omega=self.tg_nominal_omega)

    # ------------------------------------------------------------- codecs

    def to_dict(self) -> dict:
        d = {
            "master_seed": self.master_seed,
            "dt": self.dt,
            "episode_seconds": self.episode_seconds,
            "async_mode": self.async_mode,
            "initial_phases": list(self.initial_phases),
            "plant": asdict(self.plant),
            "tg": {
                "params": asdict(self.tg_params),
                "base_rate": self.tg_base_rate,
                "nominal_omega": self.tg_nominal_omega,
                "enabled": self.tg_enabled,
            },
            "limits": asdict(self.limits),
            "training": asdict(self.training),
            "cem": asdict(self.cem),
            "clock": asdict(self.clock),
            "reward": {
                "kind": self.reward.kind,
                "profile": asdict(self.reward.profile),
                "turn_rate": self.reward.turn_rate,
                "weights": list(self.reward.weights),
            },
            "schedule": asdict(self.schedule),
            "warmup": asdict(self.warmup),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)

        def sub(key, klass, **extra):
            raw = d.pop(key, None)
            if raw is None:
                return klass(**extra)
            if not isinstance(raw, dict):
                raise ConfigError(f"section {key!r} must be an object")
            try:
                return klass(**{**raw, **extra})
            except TypeError as e:
                raise ConfigError(f"bad section {key!r}: {e}") from None
            except ValueError as e:
                raise ConfigError(f"bad section {key!r}: {e}") from None

        tg_raw = d.pop("tg", {}) or {}
        try:
            tg_params = TGParams(**tg_raw.get("params", {}))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad section 'tg.params': {e}") from None
        reward_raw = d.pop("reward", {}) or {}
        try:
            profile = SpeedProfile(**reward_raw.get("profile", {}))
            reward_spec = RewardSpec(
                kind=reward_raw.get("kind", "forward"), profile=profile,
                turn_rate=reward_raw.get("turn_rate", 0.0),
                weights=tuple(reward_raw.get("weights", (1.0, 0.001, 0.01))))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad section 'reward': {e}") from None

        kwargs = dict(
            plant=sub("plant", PlantParams),
            limits=sub("limits", ActionLimits),
            training=sub("training", TrainingConfig),
            cem=sub("cem", CEMConfig),
            clock=sub("clock", ClockModel),
            schedule=sub("schedule", ScheduleConfig),
            warmup=sub("warmup", WarmupConfig),
            tg_params=tg_params,
            tg_base_rate=tg_raw.get("base_rate", float(2.0 * np.pi)),
            tg_nominal_omega=tg_raw.get("nominal_omega", 1.0),
            tg_enabled=tg_raw.get("enabled", True),
            reward=reward_spec,
        )
        known = {f.name for f in fields(cls)} - set(kwargs)
        for key in list(d):
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        scalars = {k: d[k] for k in d}
        if "initial_phases" in scalars:
            scalars["initial_phases"] = tuple(scalars["initial_phases"])
        try:
            return cls(**scalars, **kwargs)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        return cls.from_dict(raw)

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def replaced(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        top = {}
        for k, v in kw.items():
            if isinstance(v, dict) and isinstance(d.get(k), dict):
                d[k] = {**d[k], **v}
            else:
                top[k] = v
        d.update(top)
        return ExperimentConfig.from_dict(d)
