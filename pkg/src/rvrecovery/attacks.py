"""Sensor deception attacks: additive biases on transmitted sensor readings.

An :class:`AttackSpec` targets a set of sensors. Each targeted sensor has a
:class:`BiasProfile`; the bias is added to fresh readings (after sensor noise)
while the attack window is open and the vehicle is within range of the emitter.

Profiles:

* ``constant``: a fixed bias.
* ``sda``: a spoofing bias whose magnitude is redrawn on every fresh sample,
  alternating between the lower and upper thirds of ``[low, high]`` so that
  successive samples jump by at least a third of the range.
* ``stealth``: one of the low-amplitude profiles of :class:`StealthProfile`.

Magnetometer magnitudes are heading rotations in degrees applied to the
measured field vector; all other magnitudes are in the units of the biased
state components.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .sensing import SensorFrame, SensorId, states_for_sensor

# Largest bias the attack model allows per sensor (state units; magnetometer in degrees).
BIAS_LIMITS = {
    SensorId.GPS: 50.0,
    SensorId.GYROSCOPE: 9.47,
    SensorId.ACCELEROMETER: 6.2,
    SensorId.MAGNETOMETER: 180.0,
    SensorId.BAROMETER: 8.5,  # 0.1 kPa at roughly 8.5 m per 0.1 kPa near sea level
}
# Largest distance at which each sensor can be spoofed (m).
MAX_RANGE = {
    SensorId.GPS: 200.0,
    SensorId.GYROSCOPE: 100.0,
    SensorId.ACCELEROMETER: 26.0,
    SensorId.MAGNETOMETER: np.inf,
    SensorId.BAROMETER: np.inf,
}
# Default spoofing magnitude bands for the sda profile.
SDA_BANDS = {
    SensorId.GPS: (5.0, 50.0),
    SensorId.GYROSCOPE: (0.5, 9.47),
    SensorId.ACCELEROMETER: (0.5, 6.2),
    SensorId.MAGNETOMETER: (30.0, 180.0),
    SensorId.BAROMETER: (1.0, 8.5),
}
# Channels (offsets within the sensor's readings) biased by magnitude-style profiles.
DEFAULT_CHANNELS = {
    SensorId.GPS: (0, 1, 2),
    SensorId.GYROSCOPE: (3, 4, 5),
    SensorId.ACCELEROMETER: (0, 1, 2),
    SensorId.MAGNETOMETER: (0, 1, 2),
    SensorId.BAROMETER: (0,),
}
DEFAULT_RANGE = 200.0
STEALTH_KINDS = ("persistent", "A1", "A2", "A3")
_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class StealthProfile:
    """Low-amplitude bias evolving in time from ``onset``.

    ``base`` and ``slope`` broadcast over the sensor's channels. A2 ramps are
    clipped at ``cap`` when given.
    """

    kind: str = "persistent"
    base: np.ndarray | float = 0.0
    slope: np.ndarray | float = 0.0
    bound: np.ndarray | float = 0.0
    duty: float = 0.5
    period: float = 2.0
    onset: float = 0.0
    cap: np.ndarray | float | None = None

    def __post_init__(self):
        if self.kind not in STEALTH_KINDS:
            raise ConfigError(f"unknown stealth profile {self.kind!r}")
        if not (0.0 <= self.duty <= 1.0) or self.period <= 0:
            raise ConfigError("stealth duty must lie in [0, 1] and period be positive")
        for name in ("base", "slope", "bound"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.cap is not None:
            object.__setattr__(self, "cap", np.asarray(self.cap, dtype=float))
        if self.kind == "A2" and np.any(self.slope < 0):
            raise ConfigError("A2 slope must be non-negative")

    def value(self, t: float, uniforms=None) -> np.ndarray:
        """Bias at ``t``; ``uniforms`` in [0, 1) drive the A1 profile."""
        dt = t - self.onset
        if self.kind == "persistent":
            return np.array(self.base, dtype=float)
        if self.kind == "A1":
            u = np.asarray(uniforms, dtype=float)
            return self.bound * (2.0 * u - 1.0)
        if self.kind == "A2":
            ramp = self.base + self.slope * max(dt, 0.0)
            if self.cap is not None:
                ramp = np.minimum(ramp, self.cap)
            return np.array(ramp, dtype=float)
        on = (dt % self.period) < self.duty * self.period
        return np.array(self.base if on else 0.0 * self.base, dtype=float)

    def peak(self, duration: float) -> float:
        """Largest absolute bias over ``duration`` seconds after onset."""
        if self.kind == "A1":
            return float(np.max(np.abs(self.bound)))
        if self.kind == "A2":
            top = np.abs(self.base) + np.abs(self.slope) * duration
            if self.cap is not None:
                top = np.minimum(top, np.abs(self.cap))
            return float(np.max(top))
        return float(np.max(np.abs(self.base)))


def stealth_bias(profile: StealthProfile, t: float, rng: np.random.Generator) -> np.ndarray:
    """Evaluate a stealth profile; A1 draws its per-step amplitude from ``rng``."""
    n = max(np.size(profile.bound), 1)
    u = rng.random(n) if profile.kind == "A1" else None
    return profile.value(t, u)


@dataclass(frozen=True, eq=False)
class BiasProfile:
    kind: str = "sda"
    magnitude: float = 0.0
    low: float | None = None
    high: float | None = None
    direction: np.ndarray | None = None
    channels: tuple | None = None
    stealth: StealthProfile | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "sda", "stealth"):
            raise ConfigError(f"unknown bias profile {self.kind!r}")
        if self.kind == "stealth" and self.stealth is None:
            raise ConfigError("stealth bias profile needs a StealthProfile")
        if self.direction is not None:
            object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float))


@dataclass(frozen=True, eq=False)
class AttackSpec:
    targets: frozenset = frozenset()
    profiles: Mapping = field(default_factory=dict)
    emitter: np.ndarray = field(default_factory=lambda: np.zeros(3))
    activation_range: float = DEFAULT_RANGE
    windows: tuple = ((0.0, np.inf),)
    seed: int = 0

    def __post_init__(self):
        targets = frozenset(SensorId.parse(s) for s in self.targets)
        object.__setattr__(self, "targets", targets)
        profiles = {SensorId.parse(k): v for k, v in dict(self.profiles).items()}
        for s in targets:
            profiles.setdefault(s, BiasProfile("sda"))
        object.__setattr__(self, "profiles", profiles)
        object.__setattr__(self, "emitter", np.asarray(self.emitter, dtype=float).reshape(3))
        windows = tuple((float(a), float(b)) for a, b in self.windows)
        if any(b < a for a, b in windows):
            raise ConfigError("attack window ends before it starts")
        object.__setattr__(self, "windows", windows)
        if not self.activation_range > 0:
            raise ConfigError("activation range must be positive")
        self._validate()
        object.__setattr__(self, "_cache", {})

    # -- construction-time checks -------------------------------------------
    def _validate(self):
        bad = []
        duration = max((b - a for a, b in self.windows), default=0.0)
        for s in self.targets:
            prof = self.profiles[s]
            limit = BIAS_LIMITS[s]
            if prof.kind == "constant":
                mag = abs(prof.magnitude) if prof.direction is None or s == SensorId.MAGNETOMETER \
                    else float(np.max(np.abs(prof.magnitude * _unit(prof.direction))))
                peak = mag
            elif prof.kind == "sda":
                lo, hi = self.sda_band(s)
                if not (0 <= lo < hi):
                    bad.append(f"{s.short}.band")
                peak = hi
            else:
                if not np.isfinite(duration) and prof.stealth.kind == "A2" and prof.stealth.cap is None:
                    bad.append(f"{s.short}.cap")
                    continue
                peak = prof.stealth.peak(duration)
            if peak > limit + 1e-9:
                bad.append(f"{s.short}.bias")
        if bad:
            raise ConfigError("attack bias exceeds the per-sensor limits", bad)

    def sda_band(self, sensor) -> tuple[float, float]:
        prof = self.profiles[sensor]
        lo, hi = SDA_BANDS[sensor]
        return (lo if prof.low is None else prof.low, hi if prof.high is None else prof.high)

    # -- runtime ----------------------------------------------------------
    def effective_range(self, sensor) -> float:
        return min(self.activation_range, MAX_RANGE[SensorId.parse(sensor)])

    def in_window(self, t: float) -> bool:
        return any(a <= t <= b for a, b in self.windows)

    def onset(self) -> float:
        return min(a for a, _ in self.windows) if self.windows else 0.0

    def active(self, sensor, t: float, rv_position) -> bool:
        if sensor not in self.targets or not self.in_window(t):
            return False
        d = float(np.linalg.norm(np.asarray(rv_position, dtype=float) - self.emitter))
        return d <= self.effective_range(sensor)

    def _uniforms(self, sensor: SensorId, j: int, n: int) -> np.ndarray:
        chunk, off = divmod(j, _CHUNK)
        key = (int(sensor), chunk)
        table = self._cache.get(key)
        if table is None:
            rng = np.random.default_rng([self.seed, int(sensor), chunk])
            table = rng.random((_CHUNK, 6))
            self._cache[key] = table
        return table[off, :n]

    def _direction(self, sensor: SensorId, n: int) -> np.ndarray:
        prof = self.profiles[sensor]
        if prof.direction is not None:
            return _unit(prof.direction)
        key = ("dir", int(sensor))
        d = self._cache.get(key)
        if d is None:
            rng = np.random.default_rng([self.seed, int(sensor), 999_983])
            d = _unit(rng.standard_normal(n))
            self._cache[key] = d
        return d

    def bias(self, sensor, t: float, reading: np.ndarray, sample_index: int) -> np.ndarray:
        """Bias vector over the sensor's readings for fresh sample ``sample_index``."""
        s = SensorId.parse(sensor)
        prof = self.profiles[s]
        n_read = len(states_for_sensor(s))
        chans = list(prof.channels or DEFAULT_CHANNELS[s])
        out = np.zeros(n_read)
        if prof.kind == "stealth":
            sp = prof.stealth
            if sp.onset == 0.0 and self.onset() != 0.0:
                sp = _with_onset(sp, self.onset())
            u = self._uniforms(s, sample_index, n_read) if sp.kind == "A1" else None
            val = np.ravel(sp.value(t, u))
            if val.size == n_read and n_read > 1:
                return val.copy()
            if val.size == len(chans) and val.size > 1:
                out[chans] = val
                return out
            mag = float(val[0])
            if s == SensorId.MAGNETOMETER:
                return _heading_rotation(reading, mag)
            out[chans] = mag * self._direction(s, len(chans))
            return out
        if prof.kind == "constant":
            mag = prof.magnitude
        else:
            lo, hi = self.sda_band(s)
            third = (hi - lo) / 3.0
            u = self._uniforms(s, sample_index, 1)[0]
            mag = (lo + u * third) if sample_index % 2 == 0 else (hi - third + u * third)
        if s == SensorId.MAGNETOMETER:
            return _heading_rotation(reading, mag)
        out[chans] = mag * self._direction(s, len(chans))
        return out


def _with_onset(sp: StealthProfile, onset: float) -> StealthProfile:
    return StealthProfile(sp.kind, sp.base, sp.slope, sp.bound, sp.duty, sp.period, onset, sp.cap)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ConfigError("bias direction must be non-zero")
    return v / n


def _heading_rotation(field_reading: np.ndarray, degrees: float) -> np.ndarray:
    """Additive bias equivalent to rotating the measured field about body z."""
    a = np.radians(degrees)
    c, s = np.cos(a), np.sin(a)
    m = np.asarray(field_reading, dtype=float)
    rotated = np.array([c * m[0] - s * m[1], s * m[0] + c * m[1], m[2]])
    return rotated - m


def apply_attack(frame: SensorFrame, spec: AttackSpec | Sequence[AttackSpec], t: float,
                 rv_position, plan=None) -> SensorFrame:
    """Return a copy of ``frame`` with active biases added to fresh readings.

    Held (non-fresh) readings are left untouched: they already carry whatever
    bias was applied when they were fresh. ``plan`` (a sampling plan) numbers
    the fresh samples so that per-sample random draws are reproducible.
    """
    specs = [spec] if isinstance(spec, AttackSpec) else list(spec)
    out = frame.copy()
    k = None if plan is None else plan.step_index(t)
    for sp in specs:
        for s in sp.targets:
            if not frame.fresh[int(s)] or not sp.active(s, t, rv_position):
                continue
            idx = list(states_for_sensor(s))
            j = int(round(t * 1000.0)) if k is None else k // plan.decimation(s)
            out.values[idx] = out.values[idx] + sp.bias(s, t, out.values[idx], j)
    return out
