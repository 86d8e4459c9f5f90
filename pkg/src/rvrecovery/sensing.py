"""Five-sensor suite: state-to-sensor mapping, multi-rate sampling, alignment.

A :class:`SensorFrame` stores every sensor's latest reading in a single
19-component array laid out like the state vector. The sensors' index sets are
disjoint, so the frame is simply the stacked per-sensor projections; the GPS
height and the barometric altitude live in separate slots.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import state as sv
from .errors import ConfigError, DomainError, MissingBootstrap


class SensorId(enum.IntEnum):
    GPS = 0
    GYROSCOPE = 1
    ACCELEROMETER = 2
    MAGNETOMETER = 3
    BAROMETER = 4

    @classmethod
    def parse(cls, name) -> "SensorId":
        if isinstance(name, SensorId):
            return name
        key = str(name).strip().upper()
        aliases = {"GYRO": "GYROSCOPE", "ACCEL": "ACCELEROMETER", "MAG": "MAGNETOMETER",
                   "BARO": "BAROMETER"}
        key = aliases.get(key, key)
        try:
            return cls[key]
        except KeyError:
            raise ConfigError(f"unknown sensor {name!r}") from None

    @property
    def short(self) -> str:
        return {0: "gps", 1: "gyro", 2: "accel", 3: "mag", 4: "baro"}[int(self)]


SENSORS = tuple(SensorId)
N_SENSORS = len(SENSORS)

_STATES = {
    SensorId.GPS: (sv.X, sv.Y, sv.Z, sv.VX, sv.VY, sv.VZ),
    SensorId.GYROSCOPE: (sv.ROLL, sv.PITCH, sv.YAW, sv.P, sv.Q, sv.R),
    SensorId.ACCELEROMETER: (sv.AX, sv.AY, sv.AZ),
    SensorId.MAGNETOMETER: (sv.MX, sv.MY, sv.MZ),
    SensorId.BAROMETER: (sv.ALT,),
}

# Owner sensor of every state component.
STATE_OWNER = np.empty(sv.N_STATES, dtype=np.int64)
for _s, _idx in _STATES.items():
    STATE_OWNER[list(_idx)] = int(_s)


def states_for_sensor(sensor) -> tuple[int, ...]:
    """State-vector indices measured by ``sensor``."""
    return _STATES[SensorId.parse(sensor)]


def sensor_mask(sensors) -> np.ndarray:
    """Boolean mask over state components covered by a set of sensors."""
    mask = np.zeros(sv.N_STATES, dtype=bool)
    for s in sensors:
        mask[list(states_for_sensor(s))] = True
    return mask


def sensors_of_states(state_indices) -> frozenset:
    """Inverse mapping: the set of sensors owning any of the given states."""
    return frozenset(SensorId(int(STATE_OWNER[i])) for i in state_indices)


def format_sensors(sensors) -> str:
    return "+".join(s.short for s in sorted(SensorId.parse(x) for x in sensors)) or "none"


def parse_sensor_set(text) -> frozenset:
    if isinstance(text, str):
        parts = [p for p in text.replace(",", "+").split("+") if p.strip() and p.strip() != "none"]
    else:
        parts = list(text)
    return frozenset(SensorId.parse(p) for p in parts)


# ---------------------------------------------------------------------------
# Sampling configuration
# ---------------------------------------------------------------------------

DEFAULT_RATES = {
    SensorId.GPS: 10.0,
    SensorId.GYROSCOPE: 400.0,
    SensorId.ACCELEROMETER: 400.0,
    SensorId.MAGNETOMETER: 100.0,
    SensorId.BAROMETER: 100.0,
}


@dataclass(frozen=True)
class SamplingPlan:
    rates: Mapping = field(default_factory=lambda: dict(DEFAULT_RATES))

    def __post_init__(self):
        rates = {SensorId.parse(k): float(v) for k, v in dict(self.rates).items()}
        missing = [s.short for s in SENSORS if s not in rates]
        if missing:
            raise ConfigError("sampling plan lacks rates", missing)
        if any(not np.isfinite(r) or r <= 0 for r in rates.values()):
            raise ConfigError("sampling rates must be positive")
        target = max(rates.values())
        bad = [s.short for s, r in rates.items() if abs(target / r - round(target / r)) > 1e-9]
        if bad:
            raise ConfigError("rates must divide the target frequency evenly", bad)
        object.__setattr__(self, "rates", rates)

    @property
    def target_hz(self) -> float:
        return max(self.rates.values())

    @property
    def dt(self) -> float:
        return 1.0 / self.target_hz

    def decimation(self, sensor) -> int:
        return int(round(self.target_hz / self.rates[SensorId.parse(sensor)]))

    def decimations(self) -> np.ndarray:
        return np.array([self.decimation(s) for s in SENSORS], dtype=np.int64)

    def slowest(self) -> SensorId:
        return min(SENSORS, key=lambda s: self.rates[s])

    def step_index(self, t: float) -> int:
        k = round(t * self.target_hz)
        if abs(t * self.target_hz - k) > 1e-6:
            raise DomainError(f"t={t} is not on the {self.target_hz} Hz grid")
        return int(k)

    def due(self, sensor, k: int) -> bool:
        return k % self.decimation(sensor) == 0


@dataclass(frozen=True)
class NoiseConfig:
    """Per-state Gaussian noise standard deviations (state units)."""

    gps_position: float = 1.0
    gps_velocity: float = 0.1
    gyro_angle: float = 0.005
    gyro_rate: float = 0.01
    accel: float = 0.05
    mag: float = 0.01
    baro: float = 0.1

    def sigma(self) -> np.ndarray:
        s = np.empty(sv.N_STATES)
        s[sv.POS] = self.gps_position
        s[sv.VEL] = self.gps_velocity
        s[sv.ANGLES] = self.gyro_angle
        s[sv.RATES] = self.gyro_rate
        s[sv.ACC] = self.accel
        s[sv.MAG] = self.mag
        s[sv.ALT] = self.baro
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ConfigError("noise standard deviations must be finite and non-negative")
        return s

    @classmethod
    def zero(cls) -> "NoiseConfig":
        return cls(0, 0, 0, 0, 0, 0, 0)


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------


@dataclass
class SensorFrame:
    """Latest readings of all sensors at one grid instant."""

    t: float
    values: np.ndarray
    timestamps: np.ndarray
    fresh: np.ndarray
    noise: np.ndarray

    def reading(self, sensor) -> np.ndarray:
        return self.values[list(states_for_sensor(sensor))]

    def fresh_mask(self) -> np.ndarray:
        """Per-state mask of channels refreshed at this instant."""
        return self.fresh[STATE_OWNER]

    def copy(self) -> "SensorFrame":
        return SensorFrame(self.t, self.values.copy(), self.timestamps.copy(),
                           self.fresh.copy(), self.noise.copy())


def sample_sensors(true_state, t: float, plan: SamplingPlan, noise: NoiseConfig,
                   rng: np.random.Generator, previous: SensorFrame | None = None) -> SensorFrame:
    """Sample every sensor due at ``t``; the others hold ``previous`` readings."""
    x = np.asarray(true_state, dtype=float)
    k = plan.step_index(t)
    sigma = noise.sigma()
    eps = rng.standard_normal(sv.N_STATES) * sigma
    fresh = np.array([plan.due(s, k) for s in SENSORS])
    if previous is None:
        values = np.full(sv.N_STATES, np.nan)
        stamps = np.full(N_SENSORS, -np.inf)
    else:
        values = previous.values.copy()
        stamps = previous.timestamps.copy()
    mask = fresh[STATE_OWNER]
    values[mask] = x[mask] + eps[mask]
    stamps[fresh] = t
    eps[~mask] = 0.0
    return SensorFrame(t, values, stamps, fresh, eps)


def align_streams(streams: Mapping, t0: float, n_steps: int, target_hz: float):
    """Align per-sensor fresh samples onto a regular grid by holding the last value.

    ``streams`` maps each sensor to a sequence of ``(timestamp, reading)`` pairs
    in time order. Returns ``(values, fresh)`` with shapes ``(n_steps, 19)`` and
    ``(n_steps, 5)``; ``fresh[k, s]`` marks instants where sensor ``s`` delivered
    a new sample since the previous grid instant.
    """
    values = np.empty((n_steps, sv.N_STATES))
    fresh = np.zeros((n_steps, N_SENSORS), dtype=bool)
    grid = t0 + np.arange(n_steps) / target_hz
    tol = 1e-9
    for s in SENSORS:
        samples = list(streams.get(s, []))
        idx = list(states_for_sensor(s))
        if not samples or (n_steps and samples[0][0] > grid[0] + tol):
            raise MissingBootstrap(f"{s.name} has no sample before the first aligned instant")
        times = np.array([ts for ts, _ in samples])
        if np.any(np.diff(times) < 0):
            raise DomainError(f"{s.name} timestamps decrease")
        readings = np.array([np.asarray(r, dtype=float).reshape(len(idx)) for _, r in samples])
        pos = np.searchsorted(times, grid + tol, side="right") - 1
        values[:, idx] = readings[pos]
        prev = np.r_[-1, pos[:-1]]
        fresh[:, int(s)] = pos != prev
        if n_steps:
            fresh[0, int(s)] = times[pos[0]] > grid[0] - 1.0 / target_hz + tol
    return values, fresh


class SensorSuite:
    """Per-mission sampler with pre-generated noise for the closed loop.

    Noise for step ``k`` is drawn up front from the mission's generator, so a
    mission is reproducible from its seed regardless of which steps execute.
    """

    def __init__(self, plan: SamplingPlan, noise: NoiseConfig, rng: np.random.Generator,
                 n_steps: int):
        self.plan = plan
        self.sigma = noise.sigma()
        self.decimations = plan.decimations()
        self.n_steps = n_steps
        self._eps = rng.standard_normal((n_steps, sv.N_STATES)) * self.sigma
        self.values = np.full(sv.N_STATES, np.nan)
        self.timestamps = np.full(N_SENSORS, -np.inf)
        period = int(np.lcm.reduce(self.decimations))
        ks = np.arange(period)[:, None]
        self._fresh_table = (ks % self.decimations[None, :]) == 0
        self._mask_table = self._fresh_table[:, STATE_OWNER]
        self._period = period

    def fresh_at(self, k: int) -> np.ndarray:
        return self._fresh_table[k % self._period]

    def sample(self, true_state: np.ndarray, k: int) -> SensorFrame:
        if k >= self.n_steps:
            raise DomainError("sensor suite ran past its pre-generated horizon")
        fresh = self._fresh_table[k % self._period]
        mask = self._mask_table[k % self._period]
        eps = np.where(mask, self._eps[k], 0.0)
        self.values = np.where(mask, true_state + eps, self.values)
        t = k * self.plan.dt
        self.timestamps = np.where(fresh, t, self.timestamps)
        return SensorFrame(t, self.values, self.timestamps, fresh, eps)


def scatter(readings: Mapping) -> np.ndarray:
    """Embed per-sensor readings into a state-layout vector (NaN elsewhere)."""
    out = np.full(sv.N_STATES, np.nan)
    for s, r in readings.items():
        out[list(states_for_sensor(s))] = r
    return out
