"""Calibration ensembles: thresholds, error bounds, window length and recovery gain."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import state as sv
from .attacks import AttackSpec, BiasProfile, StealthProfile
from .checkpoint import calibrate_window_size
from .control import LqrWeights, RecoveryController
from .detection import DetectorConfig, calibrate_detector
from .diagnosis import DeltaProfile, DeltaValidation, calibrate_delta, validate_delta
from .dynamics import VehicleParams
from .errors import ConfigError
from .mission import (MISSION_TYPES, Calibration, MissionSpec, Scenario, WindConfig, mission_path,
                      run_mission)
from .sensing import NoiseConfig, SamplingPlan, SensorId, states_for_sensor

def standard_mission(seed: int, kind: str | None = None, wind_speed: float | None = None,
                     gust: float = 1.0, attacks=(), vehicle: VehicleParams | None = None,
                     size: float = 50.0) -> MissionSpec:
    """Seeded mission of one of the standard shapes with a random wind heading."""
    rng = np.random.default_rng([seed, 7])
    kind = kind or MISSION_TYPES[seed % len(MISSION_TYPES)]
    wp = mission_path(kind, rng, size=size)
    speed = rng.uniform(0.0, 6.0) if wind_speed is None else wind_speed
    wind = WindConfig(speed, rng.uniform(-math.pi, math.pi), gust)
    return MissionSpec(wp, kind, vehicle or VehicleParams(), wind=wind, attacks=tuple(attacks),
                       seed=seed)


def attack_free_traces(specs, plan: SamplingPlan | None = None, noise: NoiseConfig | None = None):
    """Run unprotected attack-free missions recording residuals and readings."""
    out = []
    for spec in specs:
        if spec.attacks:
            raise ConfigError("calibration missions must be attack-free", ["attack"])
        out.append(run_mission(Scenario(spec, plan=plan or SamplingPlan(), noise=noise,
                                        record_residuals=True)))
    return out


def residual_traces(traces) -> list:
    return [tr.residuals for tr in traces]


def error_traces(traces) -> list:
    return [tr.sensor_errors() for tr in traces]


def stealth_attack(sensors, detector: DetectorConfig, onset: float, emitter, scale: float = 1.0,
                   seed: int = 0, activation_range: float = 1e6) -> AttackSpec:
    """Persistent bias of ``scale`` times the CUSUM drift on every channel of the sensors.

    ``sensors`` is one sensor or a collection of them.
    """
    if isinstance(sensors, (str, SensorId)):
        sensors = [sensors]
    profiles = {}
    for sensor in sensors:
        s = SensorId.parse(sensor)
        base = scale * detector.drift[list(states_for_sensor(s))]
        profiles[s] = BiasProfile("stealth", stealth=StealthProfile("persistent", base=base))
    return AttackSpec(frozenset(profiles), profiles, emitter, activation_range, ((onset, math.inf),), seed)


def loiter_mission(seed: int, wind_speed: float | None = None, size: float = 12.0) -> MissionSpec:
    """A small square circuit flown twice, staying close to its centre."""
    rng = np.random.default_rng([seed, 11])
    h = rng.uniform(-math.pi, math.pi)
    c = np.array([size * math.cos(h), size * math.sin(h)])
    corners = [c + size * np.array([math.cos(h + math.pi + i * math.pi / 2),
                                    math.sin(h + math.pi + i * math.pi / 2)]) for i in range(1, 5)]
    wps = [(0.0, 0.0, 0.0), (0.0, 0.0, 10.0)] + [(x, y, 10.0) for x, y in corners] * 3
    speed = rng.uniform(0.0, 6.0) if wind_speed is None else wind_speed
    wind = WindConfig(speed, rng.uniform(-math.pi, math.pi), 1.0)
    return MissionSpec(np.array(wps), "P2", wind=wind, seed=seed, cruise_speed=3.0), c


def detection_delays(seeds, sensors, partial: Calibration, onset: float = 12.0,
                     scale: float = 1.0, plan: SamplingPlan | None = None) -> dict:
    """Time from stealthy-attack onset to the first alert, per target sensor."""
    out = {}
    for sensor in sensors:
        s = SensorId.parse(sensor)
        delays = []
        for seed in seeds:
            base, centre = loiter_mission(seed)
            atk = stealth_attack(s, partial.detector, onset, [*centre, 10.0], scale, seed)
            spec = MissionSpec(base.waypoints, base.mission_type, base.vehicle, base.cruise_speed,
                               base.wind, (atk,), seed)
            tr = run_mission(Scenario(spec, partial, plan=plan or SamplingPlan(), stop_on_alert=True))
            if tr.detected_at is None:
                delays.append(None)
            else:
                delays.append(max(tr.detected_at - onset, 0.0))
        out[s] = delays
    return out


@dataclass
class CalibrationReport:
    calibration: Calibration
    validation: DeltaValidation
    delays: dict
    seeds: dict = field(default_factory=dict)


def calibrate(n_calibration: int = 15, n_validation: int = 15, n_stealth: int = 40,
              seed: int = 1000, k: float = 3.0, stealth_sensors=(SensorId.GPS,),
              stealth_scale: float = 1.0, window_margin: float = 0.1,
              plan: SamplingPlan | None = None, noise: NoiseConfig | None = None,
              lqr: LqrWeights | None = None, vehicle: VehicleParams | None = None,
              progress=None) -> CalibrationReport:
    """Full calibration: attack-free ensembles, stealthy-attack ensemble, LQR gain."""
    plan = plan or SamplingPlan()
    noise = noise or NoiseConfig()
    vehicle = vehicle or VehicleParams()
    say = progress or (lambda msg: None)
    cal_seeds = list(range(seed, seed + n_calibration))
    val_seeds = list(range(seed + n_calibration, seed + n_calibration + n_validation))
    say(f"attack-free calibration missions: {len(cal_seeds)}")
    cal = attack_free_traces([standard_mission(s, vehicle=vehicle) for s in cal_seeds], plan, noise)
    say(f"attack-free validation missions: {len(val_seeds)}")
    val = attack_free_traces([standard_mission(s, vehicle=vehicle) for s in val_seeds], plan, noise)
    detector = calibrate_detector(residual_traces(cal))
    delta = calibrate_delta(error_traces(cal), k=k, min_missions=min(15, n_calibration))
    validation = validate_delta(delta, error_traces(val))
    gain = RecoveryController.synthesize(vehicle, plan.dt, lqr or LqrWeights()).K
    partial = Calibration(delta, detector, 1.0, gain, noise)
    stealth_seeds = list(range(seed + 10_000, seed + 10_000 + n_stealth))
    say(f"stealthy-attack missions: {len(stealth_seeds)} per sensor")
    delays = detection_delays(stealth_seeds, stealth_sensors, partial, scale=stealth_scale, plan=plan)
    window = calibrate_window_size(delays, window_margin, min_missions=n_stealth)
    calib = Calibration(delta, detector, window, gain, noise)
    return CalibrationReport(calib, validation, delays,
                             {"calibration": cal_seeds, "validation": val_seeds, "stealth": stealth_seeds})


# ---------------------------------------------------------------------------
# Calibration file
# ---------------------------------------------------------------------------


def calibration_to_dict(c: Calibration) -> dict:
    return {
        "delta": c.delta.to_dict(),
        "detector": c.detector.to_dict(),
        "window_s": float(c.window_s),
        "lqr_gain": None if c.lqr_gain is None else np.asarray(c.lqr_gain).tolist(),
        "noise": {k: float(v) for k, v in vars(c.noise).items()},
        "state_names": list(sv.STATE_NAMES),
    }


def calibration_from_dict(d: dict) -> Calibration:
    missing = [k for k in ("delta", "detector", "window_s") if k not in d]
    if missing:
        raise ConfigError("calibration file incomplete", missing)
    gain = d.get("lqr_gain")
    noise = NoiseConfig(**d["noise"]) if "noise" in d else NoiseConfig()
    return Calibration(DeltaProfile.from_dict(d["delta"]), DetectorConfig.from_dict(d["detector"]),
                       float(d["window_s"]), None if gain is None else np.array(gain, dtype=float),
                       noise)


def save_calibration(c: Calibration, path, extra: dict | None = None) -> None:
    d = calibration_to_dict(c)
    if extra:
        d.update(extra)
    Path(path).write_text(json.dumps(d, indent=2, default=_json_default))


def load_calibration(path) -> Calibration:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"calibration file {p} not found", ["calibration"])
    return calibration_from_dict(json.loads(p.read_text()))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, SensorId):
        return o.short
    raise TypeError(f"cannot serialise {type(o).__name__}")

