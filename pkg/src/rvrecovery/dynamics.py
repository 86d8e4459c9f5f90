"""Quadcopter and ground-rover models, RK4 integration, wind and identification.

The quadcopter core follows the standard rigid-body model with ZYX Euler
angles: thrust acts along the body z axis, torques drive the body rates, and
gyroscopic coupling enters through the inertia differences. Wind, when given,
adds a drag force proportional to the air velocity relative to the vehicle.

Hot paths (derivative, RK4 step, finite-difference Jacobian) are compiled with
numba; the public wrappers validate inputs and convert dataclasses to the flat
arrays the kernels expect.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit
from scipy.optimize import least_squares

from . import state as sv
from .errors import DomainError, IllConditionedData, InsufficientData, SimulationBlowup

BLOWUP_LIMIT = 1e9
MAX_DT = 0.01
NEAR_SINGULAR_PITCH = np.radians(85.0)


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants of the simulated vehicle.

    ``drag`` (N per m/s of relative air speed) is only used when a wind vector is
    supplied to the dynamics. The actuator limits are used by the controllers.
    """

    mass: float = 1.5
    gravity: float = 9.81
    ixx: float = 0.03
    iyy: float = 0.03
    izz: float = 0.06
    front_axle: float = 0.2
    rear_axle: float = 0.2
    drag: float = 0.08
    max_thrust: float = 30.0
    max_torque: float = 1.0
    max_steer: float = np.radians(35.0)

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not np.isfinite(value) or value <= 0.0:
                raise DomainError(f"vehicle parameter {name} must be positive and finite, got {value}")

    def as_array(self) -> np.ndarray:
        """Flat layout used by the compiled kernels: m, g, Ix, Iy, Iz, drag."""
        return np.array([self.mass, self.gravity, self.ixx, self.iyy, self.izz, self.drag])

    def hover_thrust(self) -> float:
        return self.mass * self.gravity

    def replace(self, **changes) -> "VehicleParams":
        d = asdict(self)
        d.update(changes)
        return VehicleParams(**d)


# ---------------------------------------------------------------------------
# Compiled quadcopter kernels
# ---------------------------------------------------------------------------

_EARTH = sv.EARTH_FIELD.copy()


@njit(cache=True)
def _core_derivative(x, u, pv, wind, use_wind, out):
    m, g, ix, iy, iz, kd = pv[0], pv[1], pv[2], pv[3], pv[4], pv[5]
    phi, th, psi = x[9], x[10], x[11]
    p, q, r = x[12], x[13], x[14]
    cphi, sphi = np.cos(phi), np.sin(phi)
    cth, sth = np.cos(th), np.sin(th)
    cpsi, spsi = np.cos(psi), np.sin(psi)
    ut = u[0] / m
    ax = ut * (cphi * sth * cpsi + sphi * spsi)
    ay = ut * (cphi * sth * spsi - sphi * cpsi)
    az = ut * cphi * cth - g
    if use_wind:
        ax += kd * (wind[0] - x[3]) / m
        ay += kd * (wind[1] - x[4]) / m
        az += kd * (wind[2] - x[5]) / m
    for i in range(19):
        out[i] = 0.0
    out[0] = x[3]
    out[1] = x[4]
    out[2] = x[5]
    out[3] = ax
    out[4] = ay
    out[5] = az
    out[9] = p
    out[10] = q
    out[11] = r
    out[12] = u[1] / ix + q * r * (iy - iz) / ix
    out[13] = u[2] / iy + p * r * (iz - ix) / iy
    out[14] = u[3] / iz + p * q * (ix - iy) / iz
    out[18] = x[5]


@njit(cache=True)
def _wrap(a):
    w = (a + np.pi) % (2.0 * np.pi) - np.pi
    if w <= -np.pi:
        w += 2.0 * np.pi
    return w


@njit(cache=True)
def _refresh_algebraic(x, u, pv, wind, use_wind, earth):
    """Fill acceleration, magnetic field and altitude from the core states."""
    for i in range(9, 12):
        x[i] = _wrap(x[i])
    d = np.empty(19)
    _core_derivative(x, u, pv, wind, use_wind, d)
    x[6] = d[3]
    x[7] = d[4]
    x[8] = d[5]
    phi, th, psi = x[9], x[10], x[11]
    cr, sr = np.cos(phi), np.sin(phi)
    cp, sp = np.cos(th), np.sin(th)
    cy, sy = np.cos(psi), np.sin(psi)
    # Columns of the body-to-world rotation; the body field is R^T b.
    r00, r10, r20 = cy * cp, sy * cp, -sp
    r01, r11, r21 = cy * sp * sr - sy * cr, sy * sp * sr + cy * cr, cp * sr
    r02, r12, r22 = cy * sp * cr + sy * sr, sy * sp * cr - cy * sr, cp * cr
    x[15] = r00 * earth[0] + r10 * earth[1] + r20 * earth[2]
    x[16] = r01 * earth[0] + r11 * earth[1] + r21 * earth[2]
    x[17] = r02 * earth[0] + r12 * earth[1] + r22 * earth[2]
    x[18] = x[2]


@njit(cache=True)
def _rk4_step(x, u, pv, wind, use_wind, dt, earth):
    n = 19
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    _core_derivative(x, u, pv, wind, use_wind, k1)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * dt * k1[i]
    _core_derivative(tmp, u, pv, wind, use_wind, k2)
    for i in range(n):
        tmp[i] = x[i] + 0.5 * dt * k2[i]
    _core_derivative(tmp, u, pv, wind, use_wind, k3)
    for i in range(n):
        tmp[i] = x[i] + dt * k3[i]
    _core_derivative(tmp, u, pv, wind, use_wind, k4)
    out = np.empty(n)
    for i in range(n):
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    _refresh_algebraic(out, u, pv, wind, use_wind, earth)
    return out


@njit(cache=True)
def _step_jacobian(x, u, pv, wind, use_wind, dt, earth):
    """Central-difference Jacobian of the discrete step, angle rows wrapped."""
    n = 19
    jac = np.zeros((n, n))
    xp = x.copy()
    for j in range(n):
        # Acceleration, field and altitude are recomputed by the step, so the
        # output does not depend on them and their columns are exactly zero.
        if (6 <= j <= 8) or (15 <= j <= 18):
            continue
        h = 1e-5 * max(1.0, abs(x[j]))
        xp[j] = x[j] + h
        fp = _rk4_step(xp, u, pv, wind, use_wind, dt, earth)
        xp[j] = x[j] - h
        fm = _rk4_step(xp, u, pv, wind, use_wind, dt, earth)
        xp[j] = x[j]
        for i in range(n):
            d = fp[i] - fm[i]
            if 9 <= i <= 11:
                d = _wrap(d)
            jac[i, j] = d / (2.0 * h)
    return jac


@njit(cache=True)
def _max_abs(x):
    m = 0.0
    for v in x:
        a = abs(v)
        if not a <= 1e300:
            return np.inf
        if a > m:
            m = a
    return m


# ---------------------------------------------------------------------------
# Public quadcopter interface
# ---------------------------------------------------------------------------

_ZERO_WIND = np.zeros(3)


def _wind_args(wind):
    if wind is None:
        return _ZERO_WIND, False
    w = np.asarray(wind, dtype=float)
    if w.shape != (3,) or not np.all(np.isfinite(w)):
        raise DomainError("wind must be a finite 3-vector")
    return w, True


def _check_inputs(state, u, n_u):
    x = np.asarray(state, dtype=float)
    uu = np.asarray(u, dtype=float)
    if x.shape != (sv.N_STATES,):
        raise DomainError(f"state must have {sv.N_STATES} components, got shape {x.shape}")
    if uu.shape != (n_u,):
        raise DomainError(f"control must have {n_u} components, got shape {uu.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(uu))):
        raise DomainError("non-finite state or control")
    return x, uu


def near_singular_attitude(state) -> bool:
    """True when pitch is close enough to +-90 degrees that Euler rates degrade."""
    return bool(abs(state[sv.PITCH]) > NEAR_SINGULAR_PITCH)


def quad_derivatives(state, u, p: VehicleParams, wind=None) -> np.ndarray:
    """Time derivative of the quadcopter state.

    ``u`` is ``[thrust, roll_torque, pitch_torque, yaw_torque]``. Acceleration
    and magnetic-field slots are algebraic (no jerk model) and return zero;
    the altitude slot tracks the vertical velocity.
    """
    x, uu = _check_inputs(state, u, 4)
    w, use = _wind_args(wind)
    out = np.empty(sv.N_STATES)
    _core_derivative(x, uu, p.as_array(), w, use, out)
    return out


def step(state, u, p: VehicleParams, dt: float, wind=None) -> np.ndarray:
    """Advance the quadcopter by one RK4 step of length ``dt``."""
    if not (0.0 < dt <= MAX_DT):
        raise DomainError(f"dt must lie in (0, {MAX_DT}], got {dt}")
    x, uu = _check_inputs(state, u, 4)
    w, use = _wind_args(wind)
    out = _rk4_step(x, uu, p.as_array(), w, use, dt, _EARTH)
    if not _max_abs(out) <= BLOWUP_LIMIT:
        raise SimulationBlowup("state diverged during integration")
    return out


def step_fast(x: np.ndarray, u: np.ndarray, pv: np.ndarray, dt: float,
              wind: np.ndarray | None = None) -> np.ndarray:
    """Unvalidated step for inner loops; ``pv`` comes from :meth:`VehicleParams.as_array`."""
    if wind is None:
        out = _rk4_step(x, u, pv, _ZERO_WIND, False, dt, _EARTH)
    else:
        out = _rk4_step(x, u, pv, wind, True, dt, _EARTH)
    if not _max_abs(out) <= BLOWUP_LIMIT:
        raise SimulationBlowup("state diverged during integration")
    return out


def step_jacobian(state, u, p: VehicleParams | np.ndarray, dt: float, wind=None) -> np.ndarray:
    """Finite-difference Jacobian of :func:`step` with respect to the state."""
    pv = p.as_array() if isinstance(p, VehicleParams) else np.asarray(p, dtype=float)
    w, use = _wind_args(wind)
    return _step_jacobian(np.asarray(state, dtype=float), np.asarray(u, dtype=float),
                          pv, w, use, dt, _EARTH)


def complete_state(state, u, p: VehicleParams, wind=None) -> np.ndarray:
    """Return a copy with acceleration, field and altitude consistent with the core."""
    x, uu = _check_inputs(state, u, 4)
    w, use = _wind_args(wind)
    out = x.copy()
    _refresh_algebraic(out, uu, p.as_array(), w, use, _EARTH)
    return out


def hover_state(p: VehicleParams, position=(0.0, 0.0, 0.0), yaw: float = 0.0) -> np.ndarray:
    x = sv.zeros()
    x[sv.POS] = position
    x[sv.YAW] = yaw
    return complete_state(x, hover_control(p), p)


def hover_control(p: VehicleParams) -> np.ndarray:
    return np.array([p.hover_thrust(), 0.0, 0.0, 0.0])


def rk4(f, x, dt):
    """Generic RK4 step of ``x' = f(x)`` (used for reference checks)."""
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


# ---------------------------------------------------------------------------
# Ground rover (kinematic bicycle)
# ---------------------------------------------------------------------------


class RoverRates(NamedTuple):
    x_dot: float
    y_dot: float
    yaw_dot: float
    speed_dot: float
    slip: float


def rover_speed(state) -> float:
    """Forward speed carried by the velocity components (forward driving only)."""
    return float(np.hypot(state[sv.VX], state[sv.VY]))


def _slip(delta, p: VehicleParams):
    if abs(abs(delta) - np.pi / 2) < 1e-12 or abs(delta) > np.pi / 2:
        raise DomainError("steering angle must satisfy |delta| < pi/2")
    return np.arctan(p.rear_axle / (p.front_axle + p.rear_axle) * np.tan(delta))


def rover_derivatives(state, u, p: VehicleParams) -> RoverRates:
    """Kinematic bicycle rates; ``u`` is ``[acceleration, steering]``."""
    x, uu = _check_inputs(state, u, 2)
    beta = _slip(uu[1], p)
    v = rover_speed(x)
    psi = x[sv.YAW]
    return RoverRates(
        x_dot=v * np.cos(psi + beta),
        y_dot=v * np.sin(psi + beta),
        yaw_dot=v / p.rear_axle * np.sin(beta),
        speed_dot=float(uu[0]),
        slip=float(beta),
    )


def _rover_core_rates(core, a, beta, lr):
    _, _, psi, v = core
    return np.array([v * np.cos(psi + beta), v * np.sin(psi + beta), v / lr * np.sin(beta), a])


def rover_step(state, u, p: VehicleParams, dt: float) -> np.ndarray:
    """RK4 step of the rover on its (x, y, yaw, speed) core, re-deriving the rest."""
    if not (0.0 < dt <= MAX_DT):
        raise DomainError(f"dt must lie in (0, {MAX_DT}], got {dt}")
    x, uu = _check_inputs(state, u, 2)
    if abs(uu[1]) > p.max_steer + 1e-12:
        raise DomainError("steering exceeds the configured maximum")
    beta = _slip(uu[1], p)
    core = np.array([x[sv.X], x[sv.Y], x[sv.YAW], rover_speed(x)])
    new = rk4(lambda c: _rover_core_rates(c, uu[0], beta, p.rear_axle), core, dt)
    return _rover_expand(x, new, uu[0], beta, p)


def _rover_expand(prev, core, a, beta, p):
    out = np.array(prev, dtype=float)
    px, py, psi, v = core
    psi = sv.wrap_angle(psi)
    heading = psi + beta
    yaw_rate = v / p.rear_axle * np.sin(beta)
    out[sv.X], out[sv.Y], out[sv.Z] = px, py, 0.0
    out[sv.VX], out[sv.VY], out[sv.VZ] = v * np.cos(heading), v * np.sin(heading), 0.0
    out[sv.AX] = a * np.cos(heading) - v * yaw_rate * np.sin(heading)
    out[sv.AY] = a * np.sin(heading) + v * yaw_rate * np.cos(heading)
    out[sv.AZ] = 0.0
    out[sv.ROLL], out[sv.PITCH], out[sv.YAW] = 0.0, 0.0, psi
    out[sv.P], out[sv.Q], out[sv.R] = 0.0, 0.0, yaw_rate
    out[sv.MAG] = sv.magnetic_field(0.0, 0.0, psi)
    out[sv.ALT] = 0.0
    if not np.all(np.abs(out) <= BLOWUP_LIMIT):
        raise SimulationBlowup("rover state diverged")
    return out


def rover_state(x=0.0, y=0.0, yaw=0.0, speed=0.0) -> np.ndarray:
    s = sv.zeros()
    s[sv.X], s[sv.Y], s[sv.YAW] = x, y, sv.wrap_angle(yaw)
    s[sv.VX], s[sv.VY] = speed * np.cos(yaw), speed * np.sin(yaw)
    s[sv.R] = 0.0
    s[sv.MAG] = sv.magnetic_field(0.0, 0.0, yaw)
    return s


# ---------------------------------------------------------------------------
# Wind
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindField:
    """Mean wind plus first-order low-pass Gaussian gusts.

    ``direction`` is the heading the wind blows towards (radians). Gusts are
    generated per axis with standard deviation ``gust_amplitude`` (vertical
    gusts at ``vertical_ratio`` of that) and correlation time ``gust_tau``.
    """

    mean_speed: float = 0.0
    direction: float = 0.0
    gust_amplitude: float = 0.0
    gust_tau: float = 2.0
    seed: int = 0
    vertical_ratio: float = 0.3

    def __post_init__(self):
        if not (0.0 <= self.mean_speed <= 10.0):
            raise DomainError("mean wind speed must lie in [0, 10] m/s")
        if self.gust_amplitude < 0 or self.gust_tau <= 0:
            raise DomainError("gust amplitude must be >= 0 and correlation time > 0")

    def mean_vector(self) -> np.ndarray:
        return np.array([self.mean_speed * np.cos(self.direction),
                         self.mean_speed * np.sin(self.direction), 0.0])

    def sample(self, n_steps: int, dt: float) -> np.ndarray:
        """Wind velocity at each of ``n_steps`` grid instants, shape (n, 3)."""
        rng = np.random.default_rng(self.seed)
        out = np.empty((n_steps, 3))
        out[:] = self.mean_vector()
        if self.gust_amplitude > 0.0 and n_steps > 0:
            a = np.exp(-dt / self.gust_tau)
            scale = self.gust_amplitude * np.sqrt(1.0 - a * a)
            sig = np.array([1.0, 1.0, self.vertical_ratio])
            white = rng.standard_normal((n_steps, 3))
            gust = _ar1(white * scale, a, rng.standard_normal(3) * self.gust_amplitude)
            out += gust * sig
        return out


@njit(cache=True)
def _ar1(innov, a, g0):
    n = innov.shape[0]
    out = np.empty_like(innov)
    g = g0.copy()
    for k in range(n):
        for j in range(3):
            g[j] = a * g[j] + innov[k, j]
            out[k, j] = g[j]
    return out


# ---------------------------------------------------------------------------
# Parameter identification
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    params: VehicleParams
    residual: float
    singular_values: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


_QUAD_FREE = ("mass", "ixx", "iyy", "izz")
_ROVER_FREE = ("front_axle", "rear_axle")
_CORE = np.r_[sv.POS, sv.VEL, sv.ANGLES, sv.RATES]


def fit_params(traces: Sequence, dt: float, vehicle: str = "quad",
               initial: VehicleParams | None = None, wind=None,
               cond_limit: float = 1e10) -> FitResult:
    """Least-squares identification from ``(state, control, next_state)`` triples.

    Quadcopter fits mass and the three inertias; rover fits the axle distances.
    Other constants are taken from ``initial``.
    """
    if vehicle not in ("quad", "rover"):
        raise DomainError(f"unknown vehicle {vehicle!r}")
    names = _QUAD_FREE if vehicle == "quad" else _ROVER_FREE
    triples = [tuple(np.asarray(a, dtype=float) for a in t) for t in traces]
    n_res_per = len(_CORE) if vehicle == "quad" else 4
    if len(triples) * n_res_per < 10 * len(names) or len(triples) < 10 * len(names):
        raise InsufficientData(f"need at least {10 * len(names)} samples for {len(names)} parameters")
    xs = np.array([t[0] for t in triples])
    us = np.array([t[1] for t in triples])
    ys = np.array([t[2] for t in triples])
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(us)) and np.all(np.isfinite(ys))):
        raise DomainError("non-finite regression data")
    if np.all(np.ptp(us, axis=0) == 0.0):
        raise IllConditionedData("controls are constant; the data are not persistently exciting")
    base = initial or VehicleParams()
    theta0 = np.log([getattr(base, n) for n in names])

    if vehicle == "quad":
        w, use = _wind_args(wind)
        target = ys[:, _CORE]
        scale = np.maximum(np.std(target - xs[:, _CORE], axis=0), 1e-12)

        def residuals(theta):
            p = base.replace(**dict(zip(names, np.exp(theta))))
            pv = p.as_array()
            pred = np.array([_rk4_step(x, u, pv, w, use, dt, _EARTH) for x, u in zip(xs, us)])
            d = pred[:, _CORE] - target
            d[:, 6:9] = sv.wrap_angle(d[:, 6:9])
            return (d / scale).ravel()
    else:
        target = np.column_stack([ys[:, sv.X], ys[:, sv.Y], ys[:, sv.YAW],
                                  np.hypot(ys[:, sv.VX], ys[:, sv.VY])])
        scale = np.maximum(np.std(target - np.column_stack(
            [xs[:, sv.X], xs[:, sv.Y], xs[:, sv.YAW], np.hypot(xs[:, sv.VX], xs[:, sv.VY])]), axis=0), 1e-12)

        def residuals(theta):
            p = base.replace(**dict(zip(names, np.exp(theta))))
            pred = np.array([_rover_core_after(x, u, p, dt) for x, u in zip(xs, us)])
            d = pred - target
            d[:, 2] = sv.wrap_angle(d[:, 2])
            return (d / scale).ravel()

    sol = least_squares(residuals, theta0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        max_nfev=2000)
    sing = np.linalg.svd(sol.jac, compute_uv=False)
    if sing[-1] <= 0.0 or sing[0] / sing[-1] > cond_limit:
        raise IllConditionedData("regression matrix is rank deficient")
    fitted = base.replace(**dict(zip(names, np.exp(sol.x))))
    raw = residuals(sol.x) * np.tile(scale, len(xs))
    return FitResult(fitted, float(np.sum(raw ** 2)), sing)


def _rover_core_after(x, u, p, dt):
    beta = np.arctan(p.rear_axle / (p.front_axle + p.rear_axle) * np.tan(u[1]))
    core = np.array([x[sv.X], x[sv.Y], x[sv.YAW], np.hypot(x[sv.VX], x[sv.VY])])
    return rk4(lambda c: _rover_core_rates(c, u[0], beta, p.rear_axle), core, dt)
