"""Scenario configuration: dataclasses plus a YAML file format.

A scenario file is a nested mapping with a ``schema_version`` key; every
section is optional and falls back to the defaults below.  Overrides use
dotted paths into the raw mapping, e.g. ``attacks.0.amplitude=2.0``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .control import ControllerGains
from .dynamics import VehicleParams
from .fdi import FdiThresholds
from .sensors import AttackSpec, NoiseConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class EstimatorConfig:
    gamma: float = 0.2
    window: int = 50
    chatter_window: int = 10
    velocity_cutoff_hz: float = 10.0
    # multiplicative mismatch of the estimator's grouped parameters vs truth
    model_scale: dict[str, float] = field(default_factory=dict)


@dataclass
class Excitation:
    """Sinusoidal dither added to the desired roll/pitch/yaw."""

    amplitude: tuple[float, float, float] = (0.0, 0.0, 0.0)
    frequency_hz: tuple[float, float, float] = (1.0, 1.3, 0.7)
    t_start: float = 0.0
    t_stop: float = 0.0

    def offset(self, t: float):
        if not self.t_start <= t < self.t_stop:
            return None
        a = np.asarray(self.amplitude, dtype=float)
        f = np.asarray(self.frequency_hz, dtype=float)
        return a * np.sin(2.0 * np.pi * f * (t - self.t_start))


@dataclass
class Waypoint:
    t: float
    P_ref: tuple[float, float, float]
    psi_ref: float = 0.0


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    duration: float = 10.0
    seed: int = 0
    transport_delay: float = 0.025
    fusion_blend: float = 0.98
    recovery_cutoff_hz: float = 8.0
    fdi_enabled: bool = True
    fr_enabled: bool = True
    initial_position: tuple[float, float, float] = (0.0, 0.0, 1.0)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    fdi: FdiThresholds = field(default_factory=FdiThresholds)
    gains: ControllerGains = field(default_factory=ControllerGains)
    waypoints: list[Waypoint] = field(default_factory=lambda: [Waypoint(0.0, (0.0, 0.0, 1.0))])
    attacks: list[AttackSpec] = field(default_factory=list)
    excitation: Excitation = field(default_factory=Excitation)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if int(self.seed) < 0:
            raise ConfigError("seed must be an unsigned integer")
        for a in self.attacks:
            if a.t_start < 0 or a.t_stop > self.duration + 1e-9:
                raise ConfigError(f"attack window [{a.t_start}, {a.t_stop}) outside [0, {self.duration}]")
        if not self.waypoints:
            raise ConfigError("at least one waypoint is required")

    def setpoint_at(self, t: float) -> Waypoint:
        current = self.waypoints[0]
        for wp in self.waypoints:
            if wp.t <= t:
                current = wp
        return current

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attacks"] = [dict(_attack_dict(a)) for a in self.attacks]
        return _plain(d)


def _attack_dict(a: AttackSpec) -> dict:
    d = asdict(a)
    d["channel"] = a.channel.value
    d["kind"] = a.kind.value
    d["frequencies"] = list(a.frequencies)
    return d


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _build(cls, data, section: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    kwargs = {}
    for k, v in data.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{section}': {exc}") from exc


def from_dict(d: dict) -> ScenarioConfig:
    d = dict(d or {})
    version = d.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    sections = {
        "vehicle": VehicleParams, "noise": NoiseConfig, "estimator": EstimatorConfig,
        "fdi": FdiThresholds, "gains": ControllerGains, "excitation": Excitation,
    }
    kwargs = {}
    for key, cls in sections.items():
        if key in d:
            sub = d.pop(key)
            if key == "estimator" and isinstance(sub, dict) and "model_scale" in sub:
                sub = dict(sub)
                ms = sub.pop("model_scale") or {}
                obj = _build(cls, sub, key)
                obj.model_scale = {str(k): float(v) for k, v in ms.items()}
                kwargs[key] = obj
            else:
                kwargs[key] = _build(cls, sub, key)
    if "waypoints" in d:
        kwargs["waypoints"] = [_build(Waypoint, w, "waypoints") for w in d.pop("waypoints")]
    if "attacks" in d:
        kwargs["attacks"] = [_build(AttackSpec, a, "attacks") for a in (d.pop("attacks") or [])]
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    for k, v in d.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        return ScenarioConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def set_path(d: dict, key: str, value) -> None:
    """Assign ``value`` at a dotted path; integer parts index into lists."""
    parts = key.strip().split(".")
    node = d
    try:
        for p in parts[:-1]:
            node = node[int(p)] if isinstance(node, list) else node.setdefault(p, {})
        last = parts[-1]
        if isinstance(node, list):
            node[int(last)] = value
        else:
            node[last] = value
    except (IndexError, ValueError, TypeError, AttributeError) as exc:
        raise ConfigError(f"cannot set '{key}': {exc}") from exc


def apply_overrides(d: dict, overrides) -> dict:
    """Set dotted-path keys in a raw scenario mapping; values parse as YAML."""
    d = yaml.safe_load(yaml.safe_dump(d)) if d else {}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override '{item}': {exc}") from exc
        set_path(d, key, value)
    return d


def load_raw(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed scenario {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("scenario file must contain a mapping")
    return data


def load_scenario(path, overrides=(), seed: int | None = None) -> ScenarioConfig:
    raw = apply_overrides(load_raw(path), overrides)
    if seed is not None:
        raw["seed"] = int(seed)
    raw.setdefault("name", Path(path).stem)
    return from_dict(raw)


def dump_scenario(cfg: ScenarioConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
