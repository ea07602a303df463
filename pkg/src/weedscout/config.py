"""Experiment configuration: defaults, presets, strict parsing, manifests.

One YAML mapping configures a whole experiment. The schema is strict: unknown
keys and type mismatches raise ConfigError with the dotted path, because a
silently ignored typo in a hyperparameter wastes a training run. Every command
writes a manifest embedding the fully resolved config, and a manifest can be
fed back through --config to reproduce the run.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field as dc_field

import yaml

from .environment import EnvConfig, StoppingCriterion
from .fieldsim import (
    DetectionConfig,
    FieldConfig,
    MEDIUM_CLUSTER_COUNT,
    MEDIUM_COVARIANCES,
    PriorConfig,
    config_fingerprint,
)
from .neuralnet import ConvSpec, QNetwork, QNetworkSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Bad configuration input (file, preset, or --set override)."""


@dataclass
class FlightConfig:
    """Drone, sensing-geometry, and reward scalars (everything in EnvConfig
    that is not one of the field/detection/prior/stopping sub-models)."""

    fov_size: int = 11
    global_pool_kernel: int = 3
    battery_init: float = 75.0
    battery_per_step: float = 0.2
    detect_reward: float = 1.0
    boundary_reward: float = -1.0
    step_reward: float = -0.5
    crash_reward: float = -150.0
    land_action: bool = False
    start_rule: str = "random"


@dataclass
class NetworkConfig:
    """Q-network layout as (kernel, channels) conv stages and dense widths.

    The output layer is appended automatically from the action count.
    """

    local_conv: tuple = ((5, 32), (3, 23))
    global_conv: tuple = ((5, 28), (3, 13))
    head: tuple = (256, 256, 256)


@dataclass
class EvalConfig:
    episodes: int = 1000
    checkpoints: tuple = (100, 200, 300)
    record_q: bool = False


@dataclass
class ExperimentConfig:
    seed: int = 0
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    detection: DetectionConfig = dc_field(default_factory=DetectionConfig)
    prior: PriorConfig = dc_field(default_factory=PriorConfig)
    stopping: StoppingCriterion = dc_field(default_factory=StoppingCriterion)
    env: FlightConfig = dc_field(default_factory=FlightConfig)
    network: NetworkConfig = dc_field(default_factory=NetworkConfig)
    train: TrainConfig = dc_field(default_factory=TrainConfig)
    eval: EvalConfig = dc_field(default_factory=EvalConfig)

    def resolved_prior(self) -> PriorConfig:
        res = self.prior.resolution
        if res == "full":
            res = self.field.size
        return dataclasses.replace(self.prior, resolution=int(res))

    def env_config(self) -> EnvConfig:
        f = self.env
        return EnvConfig(
            field=self.field,
            detection=self.detection,
            prior=self.resolved_prior(),
            stopping=self.stopping,
            fov_size=f.fov_size,
            global_pool_kernel=f.global_pool_kernel,
            battery_init=f.battery_init,
            battery_per_step=f.battery_per_step,
            detect_reward=f.detect_reward,
            boundary_reward=f.boundary_reward,
            step_reward=f.step_reward,
            crash_reward=f.crash_reward,
            land_action=f.land_action,
            start_rule=f.start_rule,
        )

    def network_spec(self) -> QNetworkSpec:
        env_cfg = self.env_config()
        return QNetworkSpec(
            local_shape=(3, env_cfg.fov_size, env_cfg.fov_size),
            global_shape=(3, env_cfg.global_size, env_cfg.global_size),
            local_conv=tuple(ConvSpec(int(k), int(c)) for k, c in self.network.local_conv),
            global_conv=tuple(ConvSpec(int(k), int(c)) for k, c in self.network.global_conv),
            head=tuple(int(w) for w in self.network.head) + (env_cfg.n_actions,),
        )

    def validate(self) -> None:
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        try:
            self.env_config().validate()
            self.train.validate()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.eval.episodes < 1:
            raise ConfigError("eval.episodes must be >= 1")
        for c in self.eval.checkpoints:
            if isinstance(c, bool) or not isinstance(c, int) or c < 0:
                raise ConfigError(f"eval.checkpoints entries must be non-negative integers, got {c!r}")
        for name, stages in (("local_conv", self.network.local_conv), ("global_conv", self.network.global_conv)):
            for st in stages:
                if len(st) != 2 or any(isinstance(v, bool) or not isinstance(v, int) or v < 1 for v in st):
                    raise ConfigError(f"network.{name} entries must be [kernel, channels] pairs of positive integers")
        for w in self.network.head:
            if isinstance(w, bool) or not isinstance(w, int) or w < 1:
                raise ConfigError("network.head entries must be positive integers")
        try:
            QNetwork(self.network_spec())  # builds layer plans; catches maps shrunk below 1x1
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"network does not fit the observation shapes: {exc}") from exc


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


_SECTIONS = ("field", "detection", "prior", "stopping", "env", "network", "train", "eval")


def _deep_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(_deep_tuple(v) for v in value)
    return value


def _coerce(path: str, default, value):
    if path == "prior.resolution" and value == "full":
        return "full"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be an integer, got {value!r}")
        if isinstance(value, float):
            if not value.is_integer():
                raise ConfigError(f"{path} must be an integer, got {value!r}")
            value = int(value)
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path} must be a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path} must be a list, got {value!r}")
        return _deep_tuple(value)
    raise ConfigError(f"{path}: unsupported setting type {type(default).__name__}")


def apply_mapping(cfg: ExperimentConfig, mapping: dict, source: str = "config") -> None:
    """Merge a (possibly partial) mapping into cfg, strictly."""
    if not isinstance(mapping, dict):
        raise ConfigError(f"{source}: top level must be a mapping, got {type(mapping).__name__}")
    for key, val in mapping.items():
        if key == "seed":
            cfg.seed = _coerce("seed", 0, val)
            continue
        if key not in _SECTIONS:
            raise ConfigError(
                f"unknown config key: {key} (known: seed, {', '.join(_SECTIONS)})"
            )
        if not isinstance(val, dict):
            raise ConfigError(f"{key} must be a mapping of settings, got {type(val).__name__}")
        section = getattr(cfg, key)
        reference = type(section)()
        known = {f.name for f in dataclasses.fields(section)}
        updates = {}
        for k2, v2 in val.items():
            if k2 not in known:
                raise ConfigError(
                    f"unknown config key: {key}.{k2} (known: {', '.join(sorted(known))})"
                )
            updates[k2] = _coerce(f"{key}.{k2}", getattr(reference, k2), v2)
        if type(section).__dataclass_params__.frozen:
            setattr(cfg, key, dataclasses.replace(section, **updates))
        else:
            for k2, v2 in updates.items():
                setattr(section, k2, v2)


def _as_lists(value):
    if isinstance(value, dict):
        return {k: _as_lists(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_as_lists(v) for v in value]
    return value


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {"seed": cfg.seed}
    for name in _SECTIONS:
        out[name] = _as_lists(dataclasses.asdict(getattr(cfg, name)))
    return out


# Error levels and scenario variants, applied on top of the defaults.
PRESETS: dict[str, dict] = {
    # full-scale defaults, spelled out for discoverability
    "paper-default": {},
    # small fast variant: 16x16 field, 5x5 view, ideal sensing, ~49k-param net
    "desk-scale": {
        "field": {
            "size": 16,
            "kind": "strong",
            "weed_count_mean": 20.0,
            "weed_count_std": 4.0,
            "cluster_count_mean": 2.0,
            "cluster_count_std": 0.0,
        },
        "detection": {
            "false_positive_rate": 0.0,
            "false_negative_rate": 0.0,
            "position_noise_std": 0.0,
        },
        "prior": {
            "resolution": "full",
            "false_positive_rate": 0.0,
            "false_negative_rate": 0.0,
            "position_noise_std": 0.0,
        },
        "env": {"fov_size": 5, "battery_init": 60.0, "battery_per_step": 0.5},
        "network": {
            "local_conv": [[3, 8], [3, 8]],
            "global_conv": [[3, 8], [3, 12]],
            "head": [64, 64, 64],
        },
        "train": {
            "train_steps": 200_000,
            "batch_size": 32,
            "buffer_capacity": 20_000,
            "learning_rate": 3e-4,
            "validation_interval": 20_000,
            "validation_episodes": 16,
        },
        "eval": {"episodes": 200, "checkpoints": [14, 28, 57]},
    },
    # weed distribution variants
    "dist-strong": {
        "field": {
            "kind": "strong",
            "cluster_count_mean": 3.0,
            "cluster_count_std": 2.0,
            "cluster_covariances": [[[5, 8], [8, 15]], [[15, 0], [0, 5]]],
        }
    },
    "dist-medium": {
        "field": {
            "kind": "medium",
            "cluster_count_mean": MEDIUM_CLUSTER_COUNT[0],
            "cluster_count_std": MEDIUM_CLUSTER_COUNT[1],
            "cluster_covariances": _as_lists(MEDIUM_COVARIANCES),
        }
    },
    "dist-uniform": {"field": {"kind": "uniform"}},
    # camera error levels
    "det-very-high": {"detection": {"false_positive_rate": 0.01, "false_negative_rate": 0.5, "position_noise_std": 0.5}},
    "det-high": {"detection": {"false_positive_rate": 0.001, "false_negative_rate": 0.1, "position_noise_std": 0.1}},
    "det-moderate": {"detection": {"false_positive_rate": 0.0001, "false_negative_rate": 0.05, "position_noise_std": 0.05}},
    "det-low": {"detection": {"false_positive_rate": 0.00005, "false_negative_rate": 0.02, "position_noise_std": 0.02}},
    "det-perfect": {"detection": {"false_positive_rate": 0.0, "false_negative_rate": 0.0, "position_noise_std": 0.0}},
    # pre-flight survey quality levels
    "prior-none": {"prior": {"resolution": 0}},
    "prior-low": {"prior": {"resolution": 2, "false_positive_rate": 0.002, "false_negative_rate": 0.40, "position_noise_std": 1.0}},
    "prior-moderate": {"prior": {"resolution": 12, "false_positive_rate": 0.001, "false_negative_rate": 0.20, "position_noise_std": 0.5}},
    "prior-high": {"prior": {"resolution": 24, "false_positive_rate": 0.0005, "false_negative_rate": 0.05, "position_noise_std": 0.25}},
    "prior-perfect": {"prior": {"resolution": "full", "false_positive_rate": 0.0, "false_negative_rate": 0.0, "position_noise_std": 0.0}},
    # episode termination variants
    "stop-all-found": {"stopping": {"kind": "all_found"}},
    "stop-coverage-50": {"stopping": {"kind": "coverage", "coverage_fraction": 0.5}},
    "stop-coverage-75": {"stopping": {"kind": "coverage", "coverage_fraction": 0.75}},
    "stop-stall-15": {"stopping": {"kind": "stalled", "stall_window": 15, "stall_min_found": 2}},
    "stop-stall-25": {"stopping": {"kind": "stalled", "stall_window": 25, "stall_min_found": 2}},
    "stop-stall-50": {"stopping": {"kind": "stalled", "stall_window": 50, "stall_min_found": 2}},
    "stop-land": {"stopping": {"kind": "learned_land"}, "env": {"land_action": True}},
}


def apply_preset(cfg: ExperimentConfig, name: str) -> None:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r} (available: {', '.join(sorted(PRESETS))})")
    apply_mapping(cfg, copy.deepcopy(PRESETS[name]), source=f"preset {name}")


def apply_set_overrides(cfg: ExperimentConfig, pairs: list[str]) -> None:
    """Apply `section.key=value` overrides; values are parsed as YAML."""
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"--set {key}: invalid value {raw!r} ({exc})") from exc
        mapping: dict = value
        for part in reversed(key.strip().split(".")):
            mapping = {part: mapping}
        apply_mapping(cfg, mapping, source=f"--set {key}")


def load_config(path, cfg: ExperimentConfig | None = None) -> ExperimentConfig:
    """Load a config file or a manifest (its embedded config) into cfg."""
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if "config" in data:
        data = data["config"]
    if cfg is None:
        cfg = default_config()
    apply_mapping(cfg, data, source=str(path))
    return cfg


def save_manifest(path, cfg: ExperimentConfig, command: str, artifacts: dict, result: dict | None = None) -> None:
    """Write a YAML manifest that reproduces the run via --config."""
    env_cfg = cfg.env_config()
    doc = {
        "weedscout_manifest": 1,
        "command": command,
        "fingerprints": {
            "env": config_fingerprint(env_cfg),
            "field": config_fingerprint(cfg.field),
        },
        "artifacts": _as_lists(artifacts),
        "config": config_to_dict(cfg),
    }
    if result is not None:
        doc["result"] = _as_lists(result)
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=True, default_flow_style=None)
