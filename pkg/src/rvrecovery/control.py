"""Flight controllers: cascaded PID for normal operation, LQR for recovery."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dynamics as dyn
from . import state as sv
from .dynamics import VehicleParams
from .errors import DomainError, NonStabilizable

CORE = np.array([sv.X, sv.Y, sv.Z, sv.VX, sv.VY, sv.VZ, sv.ROLL, sv.PITCH, sv.YAW, sv.P, sv.Q, sv.R])
N_CORE = len(CORE)
N_U = 4


# ---------------------------------------------------------------------------
# LQR
# ---------------------------------------------------------------------------


def lqr_gain(A, B, Q, R, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Discrete LQR gain from the Riccati recursion iterated to a fixed point."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n, m = B.shape
    if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (m, m):
        raise DomainError("inconsistent LQR matrix shapes")
    if np.min(np.linalg.eigvalsh(0.5 * (R + R.T))) <= 0:
        raise DomainError("R must be positive definite")
    if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -1e-12:
        raise DomainError("Q must be positive semi-definite")
    P = Q.copy()
    At = A.T
    with np.errstate(over="ignore", invalid="ignore"):
        return _riccati_fixed_point(A, At, B, Q, R, P, tol, max_iter)


def _riccati_fixed_point(A, At, B, Q, R, P, tol, max_iter):
    for _ in range(max_iter):
        BtP = B.T @ P
        G = R + BtP @ B
        K = np.linalg.solve(G, BtP @ A)
        P_next = Q + At @ P @ A - At @ P @ B @ K
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            break
        delta = np.max(np.abs(P_next - P))
        P = P_next
        if delta <= tol * max(1.0, np.max(np.abs(P))):
            K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            rho = np.max(np.abs(np.linalg.eigvals(A - B @ K)))
            if rho >= 1.0:
                raise NonStabilizable(f"closed loop spectral radius {rho:.6f} >= 1")
            return K
    raise NonStabilizable("Riccati iteration did not converge")


def linearize(f, x0, u0, eps: float = 1e-6):
    """Central-difference Jacobians of ``f(x, u)`` about ``(x0, u0)``."""
    x0 = np.asarray(x0, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    fx = np.asarray(f(x0, u0))
    A = np.empty((fx.size, x0.size))
    B = np.empty((fx.size, u0.size))
    for j in range(x0.size):
        h = eps * max(1.0, abs(x0[j]))
        d = np.zeros_like(x0)
        d[j] = h
        A[:, j] = (np.asarray(f(x0 + d, u0)) - np.asarray(f(x0 - d, u0))) / (2 * h)
    for j in range(u0.size):
        h = eps * max(1.0, abs(u0[j]))
        d = np.zeros_like(u0)
        d[j] = h
        B[:, j] = (np.asarray(f(x0, u0 + d)) - np.asarray(f(x0, u0 - d))) / (2 * h)
    return A, B


def hover_linearization(p: VehicleParams, dt: float, model_wind=None):
    """Discrete (A, B) of the quadcopter core about hover."""
    x_h = dyn.hover_state(p, (0.0, 0.0, 10.0))
    u_h = dyn.hover_control(p)
    pv = p.as_array()
    w = None if model_wind is None else np.asarray(model_wind, dtype=float)

    def f(xc, u):
        x = x_h.copy()
        x[CORE] = xc
        return dyn.step_fast(x, u, pv, dt, w)[CORE]

    return linearize(f, x_h[CORE], u_h)


@dataclass
class LqrWeights:
    position: float = 2.0
    velocity: float = 1.0
    angle: float = 50.0
    rate: float = 5.0
    thrust: float = 1.0
    torque: float = 20.0

    def matrices(self):
        q = np.r_[[self.position] * 3, [self.velocity] * 3, [self.angle] * 3, [self.rate] * 3]
        return np.diag(q), np.diag([self.thrust, self.torque, self.torque, self.torque])


@dataclass
class RecoveryController:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    K: np.ndarray
    u_trim: np.ndarray
    params: VehicleParams
    mode: str = "targeted"

    @classmethod
    def synthesize(cls, p: VehicleParams, dt: float, weights: LqrWeights | None = None,
                   mode: str = "targeted", model_wind=None) -> "RecoveryController":
        if mode not in ("targeted", "worst-case"):
            raise DomainError(f"unknown recovery mode {mode!r}")
        A, B = hover_linearization(p, dt, model_wind)
        Q, R = (weights or LqrWeights()).matrices()
        K = lqr_gain(A, B, Q, R)
        return cls(A, B, Q, R, K, dyn.hover_control(p), p, mode)

    @classmethod
    def from_gain(cls, K, p: VehicleParams, mode: str = "targeted") -> "RecoveryController":
        z = np.zeros((N_CORE, N_CORE))
        return cls(z, np.zeros((N_CORE, N_U)), z, np.eye(N_U), np.asarray(K, dtype=float),
                   dyn.hover_control(p), p, mode)

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A - self.B @ self.K))))

    def action(self, x, target) -> np.ndarray:
        """``u_trim - K (x - target)`` on the core states, saturated.

        ``x`` and ``target`` are either full state vectors or core vectors.
        """
        x = np.asarray(x, dtype=float)
        target = np.asarray(target, dtype=float)
        if x.size == sv.N_STATES:
            x = x[CORE]
        if target.size == sv.N_STATES:
            target = target[CORE]
        err = x - target
        err[6:9] = sv.wrap_angle(err[6:9])
        u = self.u_trim - self.K @ err
        return saturate(u, self.params)


def recovery_action(rc: RecoveryController, x, target) -> np.ndarray:
    return rc.action(x, target)


def saturate(u, p: VehicleParams) -> np.ndarray:
    out = np.array(u, dtype=float)
    out[0] = min(max(out[0], 0.0), p.max_thrust)
    out[1:] = np.clip(out[1:], -p.max_torque, p.max_torque)
    return out


# ---------------------------------------------------------------------------
# Cascaded PID
# ---------------------------------------------------------------------------


def _clip(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


def _wrap(a: float) -> float:
    w = (a + math.pi) % (2.0 * math.pi) - math.pi
    return w + 2.0 * math.pi if w <= -math.pi else w


@dataclass
class Pid:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    i_limit: float = math.inf
    integral: float = 0.0
    prev_error: float | None = None

    def __call__(self, error: float, dt: float) -> float:
        self.integral = _clip(self.integral + error * dt, -self.i_limit, self.i_limit)
        deriv = 0.0 if self.prev_error is None or self.kd == 0 else (error - self.prev_error) / dt
        self.prev_error = error
        return self.kp * error + self.ki * self.integral + self.kd * deriv

    def reset(self):
        self.integral = 0.0
        self.prev_error = None


@dataclass
class PidGains:
    pos_xy: float = 0.9
    pos_z: float = 1.2
    vel_xy: float = 1.8
    vel_xy_i: float = 0.3
    vel_z: float = 3.0
    vel_z_i: float = 1.0
    att: float = 8.0
    rate: float = 20.0
    max_speed_xy: float = 6.0
    max_speed_z: float = 2.5
    max_accel_xy: float = 4.0
    max_tilt: float = math.radians(30.0)


class CascadePid:
    """Position -> velocity -> attitude -> rate cascade producing thrust and torques."""

    def __init__(self, p: VehicleParams, gains: PidGains | None = None):
        self.p = p
        self.g = gains or PidGains()
        g = self.g
        self.vx = Pid(g.vel_xy, g.vel_xy_i, i_limit=2.0)
        self.vy = Pid(g.vel_xy, g.vel_xy_i, i_limit=2.0)
        self.vz = Pid(g.vel_z, g.vel_z_i, i_limit=3.0)

    def reset(self):
        for c in (self.vx, self.vy, self.vz):
            c.reset()

    def __call__(self, x, pos_ref, vel_ff, yaw_ref: float, dt: float,
                 speed_limit: float | None = None) -> np.ndarray:
        g, p = self.g, self.p
        xs = x.tolist()
        vmax = g.max_speed_xy if speed_limit is None else speed_limit
        vcx = vel_ff[0] + g.pos_xy * (pos_ref[0] - xs[sv.X])
        vcy = vel_ff[1] + g.pos_xy * (pos_ref[1] - xs[sv.Y])
        vcz = vel_ff[2] + g.pos_z * (pos_ref[2] - xs[sv.Z])
        h = math.hypot(vcx, vcy)
        if h > vmax:
            vcx, vcy = vcx * vmax / h, vcy * vmax / h
        vcz = _clip(vcz, -g.max_speed_z, g.max_speed_z)
        drag = p.drag / p.mass
        ax = self.vx(vcx - xs[sv.VX], dt) + drag * xs[sv.VX]
        ay = self.vy(vcy - xs[sv.VY], dt) + drag * xs[sv.VY]
        az = self.vz(vcz - xs[sv.VZ], dt) + drag * xs[sv.VZ]
        ha = math.hypot(ax, ay)
        if ha > g.max_accel_xy:
            ax, ay = ax * g.max_accel_xy / ha, ay * g.max_accel_xy / ha
        psi = xs[sv.YAW]
        c, s = math.cos(psi), math.sin(psi)
        pitch_d = _clip((ax * c + ay * s) / p.gravity, -g.max_tilt, g.max_tilt)
        roll_d = _clip((ax * s - ay * c) / p.gravity, -g.max_tilt, g.max_tilt)
        tilt = max(math.cos(xs[sv.ROLL]) * math.cos(xs[sv.PITCH]), 0.5)
        thrust = _clip(p.mass * (p.gravity + az) / tilt, 0.0, p.max_thrust)
        k = g.att
        tx = p.ixx * g.rate * (k * _wrap(roll_d - xs[sv.ROLL]) - xs[sv.P])
        ty = p.iyy * g.rate * (k * _wrap(pitch_d - xs[sv.PITCH]) - xs[sv.Q])
        tz = p.izz * g.rate * (k * _wrap(yaw_ref - xs[sv.YAW]) - xs[sv.R])
        m = p.max_torque
        return np.array([thrust, _clip(tx, -m, m), _clip(ty, -m, m), _clip(tz, -m, m)])
