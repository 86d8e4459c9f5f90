"""Residual detector with per-state instant thresholds and CUSUM accumulation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from . import state as sv
from .errors import ConfigError, InsufficientData


@dataclass
class DetectorConfig:
    """Per-state thresholds; any state alarming raises the alert."""

    tau_inst: np.ndarray
    drift: np.ndarray
    tau_cusum: np.ndarray

    def __post_init__(self):
        for name in ("tau_inst", "drift", "tau_cusum"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(sv.N_STATES)
            if np.any(~(arr > 0)):
                raise ConfigError(f"detector {name} must be strictly positive",
                                  [sv.STATE_NAMES[i] for i in np.flatnonzero(~(arr > 0))])
            setattr(self, name, arr)

    def to_dict(self) -> dict:
        return {name: [float(v) for v in getattr(self, name)]
                for name in ("tau_inst", "drift", "tau_cusum")}

    @classmethod
    def from_dict(cls, d) -> "DetectorConfig":
        try:
            return cls(*(np.array(d[k], dtype=float) for k in ("tau_inst", "drift", "tau_cusum")))
        except KeyError as exc:
            raise ConfigError("detector section incomplete", [str(exc.args[0])]) from None


@dataclass
class DetectorState:
    S: np.ndarray = field(default_factory=lambda: np.zeros(sv.N_STATES))
    alert: bool = False
    onset: float | None = None
    instant_alarms: np.ndarray = field(default_factory=lambda: np.zeros(sv.N_STATES, dtype=bool))
    cusum_alarms: np.ndarray = field(default_factory=lambda: np.zeros(sv.N_STATES, dtype=bool))
    first_reason: str | None = None
    first_states: tuple = ()

    def reset(self) -> "DetectorState":
        return DetectorState()


def residual(model_state, sensor_state) -> np.ndarray:
    """Elementwise absolute difference with wrapped angular distance.

    NaN entries (channels without a fresh reading) propagate as NaN.
    """
    d = np.asarray(model_state, dtype=float) - np.asarray(sensor_state, dtype=float)
    d[..., sv.ANGLES] = sv.wrap_angle(d[..., sv.ANGLES])
    return np.abs(d)


def detect_step(det: DetectorState, cfg: DetectorConfig, r, t: float | None = None):
    """Update CUSUM accumulators with one residual vector; returns ``(state, alert)``.

    NaN residual entries leave the corresponding accumulator unchanged.
    """
    r = np.asarray(r, dtype=float)
    valid = ~np.isnan(r)
    rr = np.where(valid, r, 0.0)
    S = np.where(valid, np.maximum(0.0, det.S + rr - cfg.drift), det.S)
    inst = valid & (rr > cfg.tau_inst)
    cus = S > cfg.tau_cusum
    alarm = bool(inst.any() or cus.any())
    new = DetectorState(S, det.alert or alarm, det.onset, inst, cus, det.first_reason, det.first_states)
    if alarm and not det.alert:
        new.onset = t
        new.first_reason = "instant" if inst.any() else "cusum"
        new.first_states = tuple(int(i) for i in np.flatnonzero(inst | cus))
    return new, alarm


def replay(cfg: DetectorConfig, trace) -> tuple[int, np.ndarray]:
    """Run the detector over a residual trace; returns (#alarm steps, max accumulator)."""
    det = DetectorState()
    alarms = 0
    smax = np.zeros(sv.N_STATES)
    for r in np.asarray(trace, dtype=float):
        det, a = detect_step(det, cfg, r)
        alarms += int(a)
        smax = np.maximum(smax, det.S)
    return alarms, smax


@njit(cache=True)
def cusum_update(S, r, drift, tau_inst, tau_cusum, inst, cus):
    """In-place accumulator update used by the mission loop; returns True on alarm.

    Same semantics as :func:`detect_step`: NaN residuals leave their
    accumulator untouched; ``inst`` and ``cus`` receive the per-state alarms.
    """
    alarm = False
    for i in range(S.shape[0]):
        inst[i] = False
        ri = r[i]
        if ri == ri:
            s = S[i] + ri - drift[i]
            S[i] = s if s > 0.0 else 0.0
            if ri > tau_inst[i]:
                inst[i] = True
                alarm = True
        cus[i] = S[i] > tau_cusum[i]
        if cus[i]:
            alarm = True
    return alarm


@njit(cache=True)
def _cusum_max(trace, drift):
    n, m = trace.shape
    S = np.zeros(m)
    smax = np.zeros(m)
    for k in range(n):
        for i in range(m):
            ri = trace[k, i]
            if ri == ri:
                s = S[i] + ri - drift[i]
                S[i] = s if s > 0.0 else 0.0
                if S[i] > smax[i]:
                    smax[i] = S[i]
    return smax


def calibrate_detector(traces: Sequence, k: float = 3.0, inst_margin: float = 1.5,
                       drift_percentile: float = 95.0, cusum_margin: float = 1.5,
                       min_missions: int = 10, floor: float = 1e-9) -> DetectorConfig:
    """Thresholds from attack-free residual traces (arrays of shape (n, 19), NaN = not fresh).

    The instant threshold is ``median + k * stdev``, raised to ``inst_margin``
    times the largest calibration residual so that calibration traces replay
    without instant alarms. The drift is a high percentile of the residuals and
    the CUSUM threshold is ``cusum_margin`` times the largest accumulator
    reached on the calibration traces.
    """
    arrays = [np.asarray(t, dtype=float).reshape(-1, sv.N_STATES) for t in traces]
    arrays = [a for a in arrays if len(a)]
    if not arrays:
        raise InsufficientData("no residual traces")
    if len(arrays) < min_missions:
        raise InsufficientData(f"need at least {min_missions} attack-free missions, got {len(arrays)}")
    pooled = np.concatenate(arrays)
    tau = np.empty(sv.N_STATES)
    drift = np.empty(sv.N_STATES)
    for i in range(sv.N_STATES):
        col = pooled[:, i]
        col = col[~np.isnan(col)]
        if col.size == 0:
            tau[i] = drift[i] = np.inf
            continue
        tau[i] = max(np.median(col) + k * np.std(col), inst_margin * np.max(col))
        drift[i] = np.percentile(col, drift_percentile)
    tau = np.maximum(tau, floor)
    drift = np.maximum(drift, floor)
    smax = np.zeros(sv.N_STATES)
    for a in arrays:
        smax = np.maximum(smax, _cusum_max(np.ascontiguousarray(a), np.where(np.isfinite(drift), drift, 0.0)))
    tau_c = np.where(smax > 0, cusum_margin * smax, np.maximum(drift, floor))
    tau_c = np.where(np.isfinite(drift), tau_c, np.inf)
    return DetectorConfig(tau, drift, tau_c)
