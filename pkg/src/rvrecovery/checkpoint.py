"""Sliding-window checkpointing of attack-free history and state reconstruction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import dynamics as dyn
from . import state as sv
from .dynamics import VehicleParams
from .errors import CalibrationFailure, DomainError, IncompleteHistory, InsufficientData, NoSafeHistory
from .estimation import ControlLog, roll_forward
from .sensing import SENSORS, SensorId, sensor_mask


@dataclass
class CommittedWindow:
    """A full alert-free window: states and controls at steps ``start .. end - 1``."""

    states: np.ndarray
    controls: np.ndarray
    start: int
    dt: float

    @property
    def end(self) -> int:
        return self.start + len(self.states)

    @property
    def anchor(self) -> np.ndarray:
        return self.states[-1]

    @property
    def anchor_step(self) -> int:
        return self.end - 1

    @property
    def t_start(self) -> float:
        return self.start * self.dt

    @property
    def t_anchor(self) -> float:
        return self.anchor_step * self.dt


class HistoryWindow:
    """Two-window checkpoint: the committed previous window and the one being recorded.

    A window is committed once it holds ``length`` alert-free steps, replacing
    the previously committed one. An alert discards the window in progress and
    stops recording until :meth:`restart` is called.
    """

    def __init__(self, length_steps: int, dt: float, n_x: int = sv.N_STATES, n_u: int = 4):
        if length_steps < 1:
            raise DomainError("window length must be at least one step")
        self.length = int(length_steps)
        self.dt = float(dt)
        self._x = np.empty((self.length, n_x))
        self._u = np.empty((self.length, n_u))
        self._n = 0
        self.start: int | None = None
        self.committed: CommittedWindow | None = None
        self.recording = True
        self.last_step: int | None = None
        self.commits = 0
        self.discards = 0

    @classmethod
    def for_duration(cls, seconds: float, dt: float) -> "HistoryWindow":
        return cls(max(1, int(np.ceil(seconds / dt - 1e-9))), dt)

    @property
    def current_length(self) -> int:
        return self._n

    def record(self, k: int, state, control, alert: bool = False) -> CommittedWindow | None:
        """Record step ``k``; on alert return the committed window used for recovery."""
        if self.last_step is not None and k <= self.last_step:
            raise DomainError(f"step {k} is not after the last recorded step {self.last_step}")
        self.last_step = k
        if alert:
            return self.alert()
        if not self.recording:
            return None
        if self._n == 0:
            self.start = k
        elif k != self.start + self._n:
            raise IncompleteHistory(f"gap in recording at step {k}")
        self._x[self._n] = state
        self._u[self._n] = control
        self._n += 1
        if self._n == self.length:
            self.committed = CommittedWindow(self._x.copy(), self._u.copy(), self.start, self.dt)
            self.commits += 1
            self._n = 0
            self.start = None
        return None

    def alert(self) -> CommittedWindow:
        """Discard the window in progress and hand out the committed one."""
        if self._n:
            self.discards += 1
        self._n = 0
        self.start = None
        self.recording = False
        if self.committed is None:
            raise NoSafeHistory("alert raised before any attack-free window was committed")
        return self.committed

    def restart(self, k: int | None = None, state=None, control=None) -> None:
        """Resume recording with a fresh window (after recovery ends).

        When ``state`` is given it becomes a one-step committed window at step
        ``k``, so a later alert rolls forward from the end of the recovery
        rather than from the window committed before it.
        """
        self._n = 0
        self.start = None
        self.recording = True
        if state is not None:
            if k is None:
                raise DomainError("a step index is required with an anchor state")
            self.committed = CommittedWindow(np.array(state, dtype=float)[None, :],
                                             np.array(control, dtype=float)[None, :], int(k), self.dt)


def record_step(hw: HistoryWindow, state, control, t: float, alert: bool = False) -> HistoryWindow:
    """Functional form of :meth:`HistoryWindow.record` keyed by time."""
    hw.record(int(round(t / hw.dt)), state, control, alert)
    return hw


def calibrate_window_size(detection_times, margin: float = 0.1, min_missions: int = 1) -> float:
    """Window length covering the slowest stealthy-attack detection, plus a margin.

    ``detection_times`` is a sequence of detection delays (s) or a mapping from
    target sensor to such sequences; ``None`` or NaN marks an undetected attack.
    """
    groups = detection_times.values() if isinstance(detection_times, Mapping) else [detection_times]
    worst = 0.0
    count = 0
    for group in groups:
        for d in group:
            if d is None or not np.isfinite(d):
                raise CalibrationFailure("a stealthy attack went undetected during calibration")
            if d < 0:
                raise DomainError("detection delays must be non-negative")
            worst = max(worst, float(d))
            count += 1
    if count < min_missions:
        raise InsufficientData(f"need at least {min_missions} stealthy-attack missions, got {count}")
    return worst * (1.0 + margin)


# ---------------------------------------------------------------------------
# Reconstruction
# ---------------------------------------------------------------------------


@dataclass
class ReconstructedState:
    """Combined estimate: live components where ``live`` is set, rolled-forward elsewhere."""

    x: np.ndarray
    live: np.ndarray
    t_a: float
    t_s: float


def live_mask_for(malicious) -> np.ndarray:
    """Components owned by sensors outside the malicious set."""
    mal = {SensorId.parse(s) for s in malicious}
    return sensor_mask([s for s in SENSORS if s not in mal])


def reconstruct(hs: CommittedWindow, diag, live_frame, controls: ControlLog, t_a: float,
                params: VehicleParams | None = None, wind=None) -> ReconstructedState:
    """Roll the committed anchor forward to ``t_a`` and overlay uncompromised live readings.

    ``diag`` is a diagnosis result (or a set of malicious sensors); ``live_frame``
    a sensor frame or a state-layout reading vector.
    """
    params = params or VehicleParams()
    malicious = getattr(diag, "malicious_sensors", diag)
    k_a = int(round(t_a / hs.dt))
    if k_a < hs.anchor_step:
        raise DomainError("reconstruction time precedes the trusted anchor")
    x = roll_forward(hs.anchor, controls, hs.dt, params, hs.anchor_step, k_a, wind)
    live = live_mask_for(malicious)
    values = np.asarray(getattr(live_frame, "values", live_frame), dtype=float)
    x[live] = values[live]
    return ReconstructedState(x, live, k_a * hs.dt, hs.t_anchor)


class RecoveryEstimator:
    """Estimator for the reconstructed state while recovery is active.

    Each step the model is propagated with the issued control. Fresh readings
    of live sensors then correct only the components they measure, through
    per-component Kalman gains, so that no compromised reading can leak into
    other components through cross-covariances. Two substitutions cover
    isolated GPS: the measured acceleration is integrated into velocity and
    position when the accelerometer is live, and barometric height corrects
    ``z`` and ``vz`` when the barometer is live. With every sensor isolated
    this is a pure roll-forward.

    ``phase_idx`` lists, per step of the sampling period, the state indices
    with a fresh reading; ``q`` and ``r`` are per-component process and
    measurement variances.
    """

    def __init__(self, params: VehicleParams, dt: float, q: np.ndarray, r: np.ndarray,
                 phase_idx: Sequence[np.ndarray], wind=None, height_bandwidth: float = 2.0):
        self.pv = params.as_array()
        self.dt = float(dt)
        self.q = np.asarray(q, dtype=float)
        self.r = np.asarray(r, dtype=float)
        self.phase_idx = [np.asarray(ii, dtype=np.int64) for ii in phase_idx]
        self.wind = None if wind is None else np.asarray(wind, dtype=float)
        w = height_bandwidth * self.dt
        self.alpha = 1.4 * w
        self.beta = w * w / self.dt

    def step(self, x: np.ndarray, var: np.ndarray, u, reading: np.ndarray, k: int,
             live: np.ndarray):
        """Advance ``(x, var)`` from step ``k - 1`` to ``k`` using the live readings of step ``k``."""
        xn = dyn.step_fast(x, np.asarray(u, dtype=float), self.pv, self.dt, self.wind)
        var = var + self.q
        idx = self.phase_idx[k % len(self.phase_idx)]
        idx = idx[live[idx]]
        if len(idx):
            gain = var[idx] / (var[idx] + self.r[idx])
            innov = reading[idx] - xn[idx]
            ang = (idx >= sv.ROLL) & (idx <= sv.YAW)
            innov[ang] = sv.wrap_angle(innov[ang])
            xn[idx] += gain * innov
            var[idx] *= 1.0 - gain
        if live[sv.AX] and not live[sv.X]:
            v0 = x[sv.VEL]
            v1 = v0 + 0.5 * (x[sv.ACC] + xn[sv.ACC]) * self.dt
            xn[sv.VEL] = v1
            xn[sv.POS] = x[sv.POS] + 0.5 * (v0 + v1) * self.dt
        if live[sv.ALT] and not live[sv.Z]:
            nu = xn[sv.ALT] - xn[sv.Z]
            xn[sv.Z] += self.alpha * nu
            xn[sv.VZ] += self.beta * nu
        return xn, var

    def replay(self, anchor: np.ndarray, var_anchor: np.ndarray, k_from: int, k_to: int,
               controls: ControlLog, readings: np.ndarray, live: np.ndarray):
        """Run from the anchor at step ``k_from`` to ``k_to`` over logged controls and readings."""
        us = controls.controls(k_from, k_to)
        if len(readings) < k_to + 1:
            raise IncompleteHistory("reading log does not reach the reconstruction time")
        x = np.array(anchor, dtype=float)
        var = np.array(var_anchor, dtype=float)
        for j, u in enumerate(us):
            x, var = self.step(x, var, u, readings[k_from + j + 1], k_from + j + 1, live)
        return x, var
