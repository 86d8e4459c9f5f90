"""Extended Kalman filter over the quadcopter model and history roll-forward."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from . import dynamics as dyn
from . import state as sv
from .dynamics import VehicleParams
from .errors import DomainError, IncompleteHistory, NumericalDegeneracy, SimulationBlowup
from .sensing import NoiseConfig


def default_process_noise() -> np.ndarray:
    """Per-step process noise variances (diagonal)."""
    q = np.full(sv.N_STATES, 1e-4)
    q[sv.ACC] = 1e-2
    q[sv.MAG] = 1e-6
    return q


@dataclass
class EkfState:
    x: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    params: VehicleParams = field(default_factory=VehicleParams)
    K: np.ndarray = field(default_factory=lambda: np.zeros((sv.N_STATES, sv.N_STATES)))
    wind: np.ndarray | None = None

    @classmethod
    def create(cls, x0, params: VehicleParams | None = None, P0=None, Q=None, R=None,
               noise: NoiseConfig | None = None, wind=None) -> "EkfState":
        """Filter with diagonal defaults; ``R`` defaults to the sensor noise variances."""
        params = params or VehicleParams()
        n = sv.N_STATES
        x = np.array(x0, dtype=float)
        if x.shape != (n,) or not np.all(np.isfinite(x)):
            raise DomainError("initial estimate must be a finite state vector")
        if R is None:
            R = (noise or NoiseConfig()).sigma() ** 2
        R = np.asarray(R, dtype=float)
        Q = default_process_noise() if Q is None else np.asarray(Q, dtype=float)
        Q = np.diag(Q) if Q.ndim == 1 else Q
        if P0 is None:
            P0 = np.diag(np.maximum(R, 1e-6))
        P0 = np.asarray(P0, dtype=float)
        P0 = np.diag(P0) if P0.ndim == 1 else P0.copy()
        w = None if wind is None else np.asarray(wind, dtype=float)
        return cls(x, P0, Q, R, params, np.zeros((n, n)), w)

    def copy(self) -> "EkfState":
        return replace(self, x=self.x.copy(), P=self.P.copy(), K=self.K.copy())


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _predict(x, P, u, pv, Q, dt, wind, use_wind, earth):
    F = dyn._step_jacobian(x, u, pv, wind, use_wind, dt, earth)
    xn = dyn._rk4_step(x, u, pv, wind, use_wind, dt, earth)
    Pn = F @ P @ F.T + Q
    Pn = 0.5 * (Pn + Pn.T)
    return xn, Pn


@njit(cache=True)
def _cholesky_solve(S, B):
    """Solve S X = B for symmetric positive-definite S; returns (X, ok)."""
    m = S.shape[0]
    L = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1):
            acc = S[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            if i == j:
                if not acc > 1e-300:
                    return B * 0.0, False
                L[i, i] = np.sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    X = B.copy()
    ncol = B.shape[1]
    for c in range(ncol):
        for i in range(m):
            acc = X[i, c]
            for k in range(i):
                acc -= L[i, k] * X[k, c]
            X[i, c] = acc / L[i, i]
        for i in range(m - 1, -1, -1):
            acc = X[i, c]
            for k in range(i + 1, m):
                acc -= L[k, i] * X[k, c]
            X[i, c] = acc / L[i, i]
    return X, True


@njit(cache=True)
def _correct(x, P, z, idx, rvar):
    """Joseph-form update with a selection measurement on ``idx``."""
    n = x.shape[0]
    m = idx.shape[0]
    innov = np.empty(m)
    for a in range(m):
        d = z[a] - x[idx[a]]
        if 9 <= idx[a] <= 11:
            d = (d + np.pi) % (2.0 * np.pi) - np.pi
        innov[a] = d
    S = np.empty((m, m))
    for a in range(m):
        for b in range(m):
            S[a, b] = P[idx[a], idx[b]]
        S[a, a] += rvar[a]
    PHt = np.empty((n, m))
    for i in range(n):
        for a in range(m):
            PHt[i, a] = P[i, idx[a]]
    # K = P H^T S^-1  ->  solve S K^T = H P
    KT, ok = _cholesky_solve(S, PHt.T.copy())
    if not ok:
        return x, P, np.zeros((n, m)), False
    K = KT.T.copy()
    xn = x + K @ innov
    for i in range(9, 12):
        w = (xn[i] + np.pi) % (2.0 * np.pi) - np.pi
        if w <= -np.pi:
            w += 2.0 * np.pi
        xn[i] = w
    A = np.eye(n)
    for i in range(n):
        for a in range(m):
            A[i, idx[a]] -= K[i, a]
    Pn = A @ P @ A.T
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for a in range(m):
                acc += K[i, a] * rvar[a] * K[j, a]
            Pn[i, j] += acc
    Pn = 0.5 * (Pn + Pn.T)
    return xn, Pn, K, True


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def _wind_pair(w):
    return (dyn._ZERO_WIND, False) if w is None else (w, True)


def ekf_predict(ekf: EkfState, u, dt: float) -> EkfState:
    """Propagate the estimate through the model and the covariance through its Jacobian."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    w, use = _wind_pair(ekf.wind)
    x, P = _predict(ekf.x, ekf.P, np.asarray(u, dtype=float), ekf.params.as_array(), ekf.Q,
                    float(dt), w, use, dyn._EARTH)
    if not dyn._max_abs(x) <= dyn.BLOWUP_LIMIT:
        raise SimulationBlowup("estimate diverged during prediction")
    return replace(ekf, x=x, P=P)


def ekf_correct(ekf: EkfState, measured, measured_indices) -> EkfState:
    """Correct with measurements of the listed state components.

    ``measured`` holds one value per index. Channels with infinite measurement
    variance are uninformative and skipped (their gain column is zero).
    """
    idx = np.asarray(measured_indices, dtype=np.int64).ravel()
    z = np.asarray(measured, dtype=float).ravel()
    if idx.size == 0:
        raise DomainError("no measured indices")
    if z.size != idx.size:
        raise DomainError("one measurement per index is required")
    rvar = ekf.R[idx]
    keep = np.isfinite(rvar)
    n = sv.N_STATES
    K_full = np.zeros((n, n))
    if not np.any(keep):
        return replace(ekf, K=K_full)
    idx_k, z_k, r_k = idx[keep], z[keep], rvar[keep]
    x, P, K, ok = _correct(ekf.x, ekf.P, z_k, idx_k, r_k)
    if not ok:
        raise NumericalDegeneracy("innovation covariance is singular")
    K_full[:, idx_k] = K
    return replace(ekf, x=x, P=P, K=K_full)


# ---------------------------------------------------------------------------
# Control history and roll-forward
# ---------------------------------------------------------------------------


class ControlLog:
    """Controls issued at consecutive grid steps (growable array)."""

    def __init__(self, start_step: int = 0, capacity: int = 1024, n_u: int = 4):
        self.start = int(start_step)
        self._u = np.empty((capacity, n_u))
        self._n = 0

    def __len__(self):
        return self._n

    @property
    def end(self) -> int:
        """One past the last logged step."""
        return self.start + self._n

    def append(self, step_index: int, u) -> None:
        if step_index != self.end:
            raise IncompleteHistory(f"control for step {step_index} logged out of order (expected {self.end})")
        if self._n == len(self._u):
            self._u = np.concatenate([self._u, np.empty_like(self._u)])
        self._u[self._n] = u
        self._n += 1

    def controls(self, k_from: int, k_to: int) -> np.ndarray:
        """Controls applied at steps ``k_from .. k_to - 1``."""
        if k_to < k_from:
            raise DomainError("interval ends before it starts")
        if k_from < self.start or k_to > self.end:
            raise IncompleteHistory(f"controls cover steps [{self.start}, {self.end}); "
                                    f"requested [{k_from}, {k_to})")
        return self._u[k_from - self.start:k_to - self.start]

    @classmethod
    def from_array(cls, start_step: int, controls) -> "ControlLog":
        arr = np.asarray(controls, dtype=float)
        log = cls(start_step, max(len(arr), 1), arr.shape[1] if arr.ndim == 2 else 4)
        for i, u in enumerate(arr):
            log.append(start_step + i, u)
        return log


def roll_forward(trusted, controls, dt: float, params: VehicleParams, k_from: int | None = None,
                 k_to: int | None = None, wind=None) -> np.ndarray:
    """Iterate the model from a trusted state through logged controls, without corrections.

    ``controls`` is either a :class:`ControlLog` (then ``k_from``/``k_to`` select
    the step interval) or an array of per-step controls.
    """
    x = np.array(trusted, dtype=float)
    if isinstance(controls, ControlLog):
        if k_from is None or k_to is None:
            raise DomainError("a step interval is required with a control log")
        us = controls.controls(k_from, k_to)
    else:
        us = np.asarray(controls, dtype=float).reshape(-1, 4)
        if k_from is not None and k_to is not None and len(us) != k_to - k_from:
            raise IncompleteHistory("control history does not cover the interval")
    pv = params.as_array()
    w = None if wind is None else np.asarray(wind, dtype=float)
    for u in us:
        x = dyn.step_fast(x, u, pv, dt, w)
    return x


def predict_fast(x, P, u, pv, Q, dt, wind):
    """Unvalidated predict used by the mission loop; returns ``(x, P)``."""
    w, use = _wind_pair(wind)
    xn, Pn = _predict(x, P, u, pv, Q, dt, w, use, dyn._EARTH)
    if not dyn._max_abs(xn) <= dyn.BLOWUP_LIMIT:
        raise SimulationBlowup("estimate diverged during prediction")
    return xn, Pn


def correct_fast(x, P, z, idx, rvar):
    """Unvalidated correction used by the mission loop; returns ``(x, P)``."""
    xn, Pn, _, ok = _correct(x, P, z, idx, rvar)
    if not ok:
        raise NumericalDegeneracy("innovation covariance is singular")
    return xn, Pn
