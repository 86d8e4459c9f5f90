"""Scenario and campaign configuration files (TOML).

All quantities are SI except angles, which are degrees at this boundary:
wind heading, magnetometer heading bias and gyroscope rate bias (deg/s).

Sections: ``[vehicle]``, ``[mission]``, ``[wind]``, ``[attack.N]`` (with
optional per-sensor sub-tables such as ``[attack.1.gps]``), ``[detector]``,
``[recovery]``, ``[seed]``, plus ``[noise]``, ``[sampling]`` and
``[campaign]`` for batch runs.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .attacks import AttackSpec, BiasProfile, StealthProfile
from .control import LqrWeights
from .dynamics import VehicleParams
from .errors import ConfigError
from .mission import MISSION_TYPES, MODES, MissionSpec, RecoveryConfig, WindConfig, mission_path
from .sensing import SENSORS, NoiseConfig, SamplingPlan, SensorId

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SECTIONS = ("vehicle", "mission", "wind", "attack", "detector", "recovery", "seed", "noise",
            "sampling", "campaign")
# Per-sensor attack keys; angular quantities for these sensors are given in degrees.
_PROFILE_KEYS = ("profile", "magnitude", "low", "high", "direction", "channels", "stealth", "base",
                 "slope", "bound", "duty", "period", "cap")
_ATTACK_KEYS = ("sensors", "emitter", "range", "start", "end", "seed") + _PROFILE_KEYS
_DEGREE_SENSORS = (SensorId.GYROSCOPE,)


@dataclass
class MissionConfig:
    type: str = "S"
    waypoints: np.ndarray | None = None
    size: float = 50.0
    cruise_speed: float = 5.0
    max_duration: float | None = None
    name: str = ""


@dataclass
class DetectorSettings:
    """Calibration ensemble settings."""

    k: float = 3.0
    calibration_missions: int = 15
    validation_missions: int = 15
    stealth_missions: int = 40
    stealth_scale: float = 1.0
    window_margin: float = 0.1
    seed: int = 1000


@dataclass
class CampaignConfig:
    missions: int = 25
    sensor_counts: tuple = (1,)
    modes: tuple = ("targeted",)
    wind_only: bool = False
    wind_speed: float = 15.0 / 3.6
    activation_range: float = 26.0
    attack_start: float = 15.0
    workers: int = 1


@dataclass
class ScenarioConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    mission: MissionConfig = field(default_factory=MissionConfig)
    wind: WindConfig | None = None
    attacks: tuple = ()
    detector: DetectorSettings = field(default_factory=DetectorSettings)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    seed: int = 0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    plan: SamplingPlan = field(default_factory=SamplingPlan)
    campaign: CampaignConfig | None = None

    def mission_spec(self, seed: int | None = None, attacks=None) -> MissionSpec:
        """Mission for ``seed`` (default: the configured seed)."""
        seed = self.seed if seed is None else int(seed)
        m = self.mission
        rng = np.random.default_rng([seed, 7])
        wp = m.waypoints if m.waypoints is not None else mission_path(m.type, rng, size=m.size)
        wind = self.wind
        if wind is None:
            wind = WindConfig(rng.uniform(0.0, 6.0), rng.uniform(-math.pi, math.pi), 1.0)
        return MissionSpec(wp, m.type, self.vehicle, m.cruise_speed, wind,
                           tuple(self.attacks if attacks is None else attacks), seed,
                           m.max_duration, m.name)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def load_config(source) -> ScenarioConfig:
    """Parse a TOML file path, TOML text or an already-parsed mapping."""
    if isinstance(source, dict):
        data = source
    else:
        text = source
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                        and "=" not in source):
            p = Path(source)
            if not p.exists():
                raise ConfigError(f"config file {p} not found", [str(p)])
            text = p.read_text()
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
    return parse_config(data)


def parse_config(data: dict) -> ScenarioConfig:
    bad = [k for k in data if k not in SECTIONS]
    if bad:
        raise ConfigError("unknown config sections", bad)
    cfg = ScenarioConfig()
    if "vehicle" in data:
        cfg.vehicle = _vehicle(data["vehicle"])
    if "mission" in data:
        cfg.mission = _mission(data["mission"])
    if "wind" in data:
        cfg.wind = _wind(data["wind"])
    if "attack" in data:
        cfg.attacks = _attacks(data["attack"])
    if "detector" in data:
        cfg.detector = _simple(DetectorSettings, data["detector"], "detector")
    if "recovery" in data:
        cfg.recovery = _recovery(data["recovery"])
    if "seed" in data:
        cfg.seed = _seed(data["seed"])
    if "noise" in data:
        cfg.noise = _simple(NoiseConfig, data["noise"], "noise")
        cfg.noise.sigma()
    if "sampling" in data:
        cfg.plan = _sampling(data["sampling"])
    if "campaign" in data:
        cfg.campaign = _campaign(data["campaign"])
    return cfg


def _check_keys(section: str, d: dict, allowed) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"[{section}] must be a table", [section])
    bad = [f"{section}.{k}" for k in d if k not in allowed]
    if bad:
        raise ConfigError(f"unknown keys in [{section}]", bad)


def _number(section: str, key: str, v, positive: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number", [f"{section}.{key}"])
    if positive and not v > 0:
        raise ConfigError(f"{section}.{key} must be positive", [f"{section}.{key}"])
    return float(v)


def _simple(cls, d: dict, section: str):
    names = {f.name: f for f in fields(cls)}
    _check_keys(section, d, names)
    values = {}
    for k, v in d.items():
        default = getattr(cls(), k)
        if isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{section}.{k} must be true or false", [f"{section}.{k}"])
            values[k] = v
        elif isinstance(default, int):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{section}.{k} must be an integer", [f"{section}.{k}"])
            values[k] = v
        else:
            values[k] = _number(section, k, v)
    return cls(**values)


def _vehicle(d: dict) -> VehicleParams:
    d = dict(d)
    _check_keys("vehicle", d, [f.name for f in fields(VehicleParams) if f.name != "max_steer"]
                + ["max_steer_deg"])
    vals = {k: _number("vehicle", k, v, positive=True) for k, v in d.items()}
    if "max_steer_deg" in vals:
        vals["max_steer"] = math.radians(vals.pop("max_steer_deg"))
    try:
        return VehicleParams(**vals)
    except ValueError as exc:
        raise ConfigError(str(exc), [f"vehicle.{k}" for k in d]) from exc


def _mission(d: dict) -> MissionConfig:
    _check_keys("mission", d, [f.name for f in fields(MissionConfig)])
    m = MissionConfig()
    if "type" in d:
        if d["type"] not in MISSION_TYPES:
            raise ConfigError(f"mission.type must be one of {MISSION_TYPES}", ["mission.type"])
        m.type = d["type"]
    if "waypoints" in d:
        wp = np.asarray(d["waypoints"], dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 3 or len(wp) < 2:
            raise ConfigError("mission.waypoints needs at least two [x, y, z] points",
                              ["mission.waypoints"])
        m.waypoints = wp
    for key in ("size", "cruise_speed", "max_duration"):
        if key in d:
            setattr(m, key, _number("mission", key, d[key], positive=True))
    if "name" in d:
        m.name = str(d["name"])
    return m


def _wind(d: dict) -> WindConfig:
    _check_keys("wind", d, ("speed", "direction_deg", "gust", "tau"))
    speed = _number("wind", "speed", d.get("speed", 0.0))
    gust = _number("wind", "gust", d.get("gust", 0.0))
    bad = [f"wind.{k}" for k, v in (("speed", speed), ("gust", gust)) if v < 0]
    if speed > 10.0:
        bad.append("wind.speed")
    if bad:
        raise ConfigError("wind speed must lie in [0, 10] m/s and gust be non-negative", bad)
    return WindConfig(speed, math.radians(_number("wind", "direction_deg", d.get("direction_deg", 0.0))),
                      gust, _number("wind", "tau", d.get("tau", 2.0), positive=True))


def _recovery(d: dict) -> RecoveryConfig:
    allowed = [f.name for f in fields(RecoveryConfig) if f.name != "lqr"] + ["lqr"]
    _check_keys("recovery", d, allowed)
    vals = {}
    for k, v in d.items():
        if k == "mode":
            if v not in MODES:
                raise ConfigError(f"recovery.mode must be one of {MODES}", ["recovery.mode"])
            vals[k] = v
        elif k == "lqr":
            vals[k] = _simple(LqrWeights, v, "recovery.lqr")
        elif k in ("agree", "suspect_evaluations"):
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"recovery.{k} must be a positive integer", [f"recovery.{k}"])
            vals[k] = v
        else:
            vals[k] = _number("recovery", k, v, positive=True)
    return RecoveryConfig(**vals)


def _seed(d) -> int:
    if isinstance(d, int) and not isinstance(d, bool):
        return d
    _check_keys("seed", d, ("base",))
    v = d.get("base", 0)
    if isinstance(v, bool) or not isinstance(v, int) or v < 0:
        raise ConfigError("seed.base must be a non-negative integer", ["seed.base"])
    return v


def _sampling(d: dict) -> SamplingPlan:
    names = {s.short: s for s in SENSORS}
    _check_keys("sampling", d, names)
    rates = SamplingPlan().rates.copy()
    for k, v in d.items():
        rates[names[k]] = _number("sampling", k, v, positive=True)
    return SamplingPlan(rates)


def _campaign(d: dict) -> CampaignConfig:
    _check_keys("campaign", d, [f.name for f in fields(CampaignConfig)])
    c = CampaignConfig()
    bad = []
    for k, v in d.items():
        if k in ("missions", "workers"):
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                bad.append(f"campaign.{k}")
            else:
                setattr(c, k, v)
        elif k == "sensor_counts":
            counts = tuple(v) if isinstance(v, list) else (v,)
            if not counts or any(isinstance(n, bool) or not isinstance(n, int) or not 1 <= n <= len(SENSORS)
                                 for n in counts):
                bad.append("campaign.sensor_counts")
            else:
                c.sensor_counts = counts
        elif k == "modes":
            modes = tuple(v) if isinstance(v, list) else (v,)
            if not modes or any(m not in MODES for m in modes):
                bad.append("campaign.modes")
            else:
                c.modes = modes
        elif k == "wind_only":
            if not isinstance(v, bool):
                bad.append("campaign.wind_only")
            c.wind_only = bool(v)
        else:
            setattr(c, k, _number("campaign", k, v, positive=k != "wind_speed"))
    if bad:
        raise ConfigError("invalid campaign settings", bad)
    return c


# ---------------------------------------------------------------------------
# Attacks
# ---------------------------------------------------------------------------


def _attacks(d: dict) -> tuple:
    if not isinstance(d, dict):
        raise ConfigError("[attack] must hold numbered sub-tables such as [attack.1]", ["attack"])
    out = []
    for name in sorted(d, key=lambda s: (not str(s).isdigit(), int(s) if str(s).isdigit() else 0, s)):
        out.append(_attack(f"attack.{name}", d[name]))
    return tuple(out)


def _attack(section: str, d: dict) -> AttackSpec:
    if not isinstance(d, dict):
        raise ConfigError(f"[{section}] must be a table", [section])
    sensor_names = {s.short for s in SENSORS} | {s.name.lower() for s in SENSORS}
    bad = [f"{section}.{k}" for k in d if k not in _ATTACK_KEYS and k not in sensor_names]
    if bad:
        raise ConfigError(f"unknown keys in [{section}]", bad)
    try:
        targets = [SensorId.parse(s) for s in d.get("sensors", [])]
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{section}.sensors: {exc}", [f"{section}.sensors"]) from exc
    if not targets:
        raise ConfigError(f"{section}.sensors must list at least one sensor", [f"{section}.sensors"])
    if "emitter" not in d:
        raise ConfigError(f"{section}.emitter is required", [f"{section}.emitter"])
    emitter = np.asarray(d["emitter"], dtype=float)
    if emitter.shape != (3,):
        raise ConfigError(f"{section}.emitter must be [x, y, z]", [f"{section}.emitter"])
    defaults = {k: d[k] for k in _PROFILE_KEYS if k in d}
    profiles = {}
    for s in targets:
        sub = dict(defaults)
        for key in (s.short, s.name.lower()):
            if key in d:
                _check_keys(f"{section}.{key}", d[key], _PROFILE_KEYS)
                sub.update(d[key])
        profiles[s] = _profile(f"{section}.{s.short}", s, sub)
    start = _number(section, "start", d.get("start", 0.0))
    end = _number(section, "end", d.get("end", math.inf))
    rng_seed = d.get("seed", 0)
    try:
        return AttackSpec(frozenset(targets), profiles, emitter,
                          _number(section, "range", d.get("range", 200.0), positive=True),
                          ((start, end),), int(rng_seed))
    except ConfigError as exc:
        raise ConfigError(f"invalid [{section}]", [f"{section}.{k}" for k in exc.keys] or [section]) from exc


def _profile(section: str, sensor: SensorId, d: dict) -> BiasProfile:
    scale = math.radians(1.0) if sensor in _DEGREE_SENSORS else 1.0

    def num(key, default=None):
        if key not in d:
            return default
        v = d[key]
        arr = np.asarray(v, dtype=float) * scale
        return float(arr) if arr.ndim == 0 else arr

    kind = d.get("profile", "stealth" if "stealth" in d else "sda")
    if kind not in ("sda", "constant", "stealth"):
        raise ConfigError(f"{section}.profile must be sda, constant or stealth", [f"{section}.profile"])
    channels = tuple(int(c) for c in d["channels"]) if "channels" in d else None
    direction = np.asarray(d["direction"], dtype=float) if "direction" in d else None
    stealth = None
    if kind == "stealth":
        sp = {"kind": d.get("stealth", "persistent"), "base": num("base", 0.0), "slope": num("slope", 0.0),
              "bound": num("bound", 0.0), "duty": float(d.get("duty", 0.5)),
              "period": float(d.get("period", 2.0)), "cap": num("cap")}
        stealth = StealthProfile(**sp)
    return BiasProfile(kind, num("magnitude", 0.0), num("low"), num("high"), direction, channels, stealth)
