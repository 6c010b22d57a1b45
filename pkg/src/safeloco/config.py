"""Run configuration: one JSON document with env / cbf / train / eval
sections.  Unknown keys are rejected with their full path, and the
resolved document is persisted verbatim into every run directory.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .cbf import CbfConfig
from .lidar import LidarConfig
from .rewards import DEFAULT_WEIGHTS, RewardConfig

MODES = ("p3o_cbf", "p3o", "ppo_reward_shaping")


class ConfigError(ValueError):
    """Invalid configuration; carries the offending key path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"config error at '{path}': {message}")


def _check_empty(d: dict, path: str) -> None:
    if d:
        raise ConfigError(f"{path}.{sorted(d)[0]}", "unknown key")


@dataclass
class CommandConfig:
    vx: tuple[float, float] = (0.0, 1.0)
    vy: tuple[float, float] = (-0.3, 0.3)
    wz: tuple[float, float] = (-0.5, 0.5)
    resample_period: int = 100

    @staticmethod
    def from_dict(d: dict, path: str) -> "CommandConfig":
        d = dict(d)
        out = CommandConfig(
            vx=tuple(d.pop("vx", (0.0, 1.0))),
            vy=tuple(d.pop("vy", (-0.3, 0.3))),
            wz=tuple(d.pop("wz", (-0.5, 0.5))),
            resample_period=int(d.pop("resample_period", 100)),
        )
        _check_empty(d, path)
        return out


@dataclass
class CurriculumRule:
    promote_rate: float = 0.8
    demote_rate: float = 0.3
    window: int = 100
    min_episodes: int = 50

    @staticmethod
    def from_dict(d: dict, path: str) -> "CurriculumRule":
        d = dict(d)
        out = CurriculumRule(
            promote_rate=float(d.pop("promote_rate", 0.8)),
            demote_rate=float(d.pop("demote_rate", 0.3)),
            window=int(d.pop("window", 100)),
            min_episodes=int(d.pop("min_episodes", 50)),
        )
        _check_empty(d, path)
        return out


@dataclass
class EnvConfig:
    dt: float = 0.05
    history_len: int = 10
    weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    alpha_v: float = 4.0
    alpha_w: float = 4.0
    alpha_p: float = 2.0
    d_social: float = 1.2
    d_safe: float = 0.8            # cost indicator threshold
    unsafe_threshold: float = 0.6  # metric band only; deliberately separate
    comfort_threshold: float = 1.2
    command: CommandConfig = field(default_factory=CommandConfig)
    curriculum: CurriculumRule = field(default_factory=CurriculumRule)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    normalize_obs: bool = True

    def reward_config(self) -> RewardConfig:
        return RewardConfig(weights=dict(self.weights), alpha_v=self.alpha_v,
                            alpha_w=self.alpha_w, alpha_p=self.alpha_p,
                            d_social=self.d_social, d_safe=self.d_safe)

    @staticmethod
    def from_dict(d: dict, path: str = "env") -> "EnvConfig":
        d = dict(d)
        weights = dict(DEFAULT_WEIGHTS)
        for k, v in d.pop("weights", {}).items():
            if k not in weights:
                raise ConfigError(f"{path}.weights.{k}", "unknown reward/cost weight")
            weights[k] = float(v)
        lidar_d = dict(d.pop("lidar", {}))
        known = {"n_azimuth", "elevation_rings", "max_range", "range_noise_std",
                 "yaw_jitter_deg"}
        bad = set(lidar_d) - known
        if bad:
            raise ConfigError(f"{path}.lidar.{sorted(bad)[0]}", "unknown key")
        if "elevation_rings" in lidar_d:
            lidar_d["elevation_rings"] = tuple(lidar_d["elevation_rings"])
        try:
            lidar = LidarConfig(**lidar_d)
        except ValueError as exc:
            raise ConfigError(f"{path}.lidar", str(exc)) from exc
        out = EnvConfig(
            dt=float(d.pop("dt", 0.05)),
            history_len=int(d.pop("history_len", 10)),
            weights=weights,
            alpha_v=float(d.pop("alpha_v", 4.0)),
            alpha_w=float(d.pop("alpha_w", 4.0)),
            alpha_p=float(d.pop("alpha_p", 2.0)),
            d_social=float(d.pop("d_social", 1.2)),
            d_safe=float(d.pop("d_safe", 0.8)),
            unsafe_threshold=float(d.pop("unsafe_threshold", 0.6)),
            comfort_threshold=float(d.pop("comfort_threshold", 1.2)),
            command=CommandConfig.from_dict(d.pop("command", {}), f"{path}.command"),
            curriculum=CurriculumRule.from_dict(d.pop("curriculum", {}),
                                                f"{path}.curriculum"),
            lidar=lidar,
            normalize_obs=bool(d.pop("normalize_obs", True)),
        )
        _check_empty(d, path)
        return out


@dataclass
class TrainConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    kappa: tuple[float, float, float] = (1.0, 1.0, 1.0)
    d_thresholds: tuple[float, float, float] = (0.0, 0.0, 0.0)
    lr: float = 3e-4
    epochs: int = 5
    minibatches: int = 4
    n_envs: int = 16
    horizon: int = 256
    total_steps: int = 200_000
    mode: str = "p3o_cbf"
    entropy_coef: float = 0.005
    entropy_anneal: bool = True
    cost_fold_weight: float = 10.0
    init_log_std: tuple[float, float, float, float] = (-0.5, -0.5, -0.5, -1.6)
    checkpoint_every: int = 0      # updates between checkpoints; 0 = final only

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("train.gamma", "must lie in (0, 1)")
        if not 0.0 < self.gae_lambda <= 1.0:
            raise ConfigError("train.gae_lambda", "must lie in (0, 1]")
        if any(k < 0 for k in self.kappa):
            raise ConfigError("train.kappa", "must be nonnegative")
        if self.mode not in MODES:
            raise ConfigError("train.mode", f"must be one of {MODES}")

    @staticmethod
    def from_dict(d: dict, path: str = "train") -> "TrainConfig":
        d = dict(d)
        kwargs = {}
        for f in ("gamma", "gae_lambda", "clip_eps", "lr", "entropy_coef",
                  "cost_fold_weight"):
            if f in d:
                kwargs[f] = float(d.pop(f))
        for f in ("epochs", "minibatches", "n_envs", "horizon", "total_steps",
                  "checkpoint_every"):
            if f in d:
                kwargs[f] = int(d.pop(f))
        if "kappa" in d:
            kwargs["kappa"] = tuple(float(x) for x in d.pop("kappa"))
        if "d_thresholds" in d:
            kwargs["d_thresholds"] = tuple(float(x) for x in d.pop("d_thresholds"))
        if "init_log_std" in d:
            kwargs["init_log_std"] = tuple(float(x) for x in d.pop("init_log_std"))
        if "mode" in d:
            kwargs["mode"] = str(d.pop("mode"))
        if "entropy_anneal" in d:
            kwargs["entropy_anneal"] = bool(d.pop("entropy_anneal"))
        _check_empty(d, path)
        return TrainConfig(**kwargs)


@dataclass
class EvalConfig:
    trials: int = 30
    ablation_trials: int = 10
    level: int | None = None       # None: use the level stored in the checkpoint
    jobs: int = 1

    @staticmethod
    def from_dict(d: dict, path: str = "eval") -> "EvalConfig":
        d = dict(d)
        level = d.pop("level", None)
        out = EvalConfig(
            trials=int(d.pop("trials", 30)),
            ablation_trials=int(d.pop("ablation_trials", 10)),
            level=None if level is None else int(level),
            jobs=int(d.pop("jobs", 1)),
        )
        _check_empty(d, path)
        return out


def _cbf_from_dict(d: dict, path: str = "cbf") -> CbfConfig:
    d = dict(d)
    kwargs = {}
    if "gamma_cbf" in d:
        kwargs["gamma_cbf"] = float(d.pop("gamma_cbf"))
    if "d_min" in d:
        kwargs["d_min"] = float(d.pop("d_min"))
    if "normal_estimation" in d:
        kwargs["normal_estimation"] = str(d.pop("normal_estimation"))
    if "plane_fit_k" in d:
        kwargs["plane_fit_k"] = int(d.pop("plane_fit_k"))
    _check_empty(d, path)
    try:
        return CbfConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc


@dataclass
class RunConfig:
    run_name: str = "run"
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    cbf: CbfConfig = field(default_factory=CbfConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        d = dict(d)
        out = RunConfig(
            run_name=str(d.pop("run_name", "run")),
            seed=int(d.pop("seed", 0)),
            env=EnvConfig.from_dict(d.pop("env", {})),
            cbf=_cbf_from_dict(d.pop("cbf", {})),
            train=TrainConfig.from_dict(d.pop("train", {})),
            eval=EvalConfig.from_dict(d.pop("eval", {})),
        )
        _check_empty(d, "")
        return out

    @staticmethod
    def load(path: str | Path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
        return RunConfig.from_dict(doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        # asdict reaches into nested dataclasses already; normalize tuples
        return json.loads(json.dumps(d, default=list))

    def resolved_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def config_hash(config: "RunConfig | dict") -> str:
    doc = config.to_dict() if isinstance(config, RunConfig) else config
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def apply_mode(cfg: RunConfig, mode: str) -> RunConfig:
    """Clone the config for an ablation mode.

    The plain-constraint mode drops the comfort shaping by zeroing those
    reward weights; cost folding happens in the trainer.
    """
    if mode not in MODES:
        raise ConfigError("train.mode", f"must be one of {MODES}")
    doc = cfg.to_dict()
    doc["train"]["mode"] = mode
    if mode == "p3o":
        for term in ("proxemic", "approach_velocity", "approach_accel", "tangential"):
            doc["env"]["weights"][term] = 0.0
    return RunConfig.from_dict(doc)
