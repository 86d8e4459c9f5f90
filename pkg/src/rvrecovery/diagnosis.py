"""Factor-graph attack diagnosis over per-state error inflation.

Each state ``i`` carries a binary variable ``s_i`` (benign / malicious). Its
factor looks at two non-overlapping consecutive-sample errors taken from the
last four readings of the state: the state is malicious when both exceed the
calibrated threshold ``delta_i``. Sensors are blamed through the
state-to-sensor mapping.

Two independent routes compute the posterior: :func:`infer` runs sum-product
message passing on the factor graph, :func:`brute_force_posterior` enumerates
every joint assignment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from . import state as sv
from .errors import ConfigError, DomainError, InsufficientData
from .sensing import N_SENSORS, SENSORS, sensors_of_states, states_for_sensor

BENIGN, MALICIOUS = 0, 1
MAX_BRUTE_FORCE_STATES = 20


@dataclass
class DeltaProfile:
    delta: np.ndarray
    k: float = 3.0

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float).ravel()
        if np.any(~(self.delta > 0)):
            raise ConfigError("delta thresholds must be strictly positive",
                              [str(i) for i in np.flatnonzero(~(self.delta > 0))])

    def to_dict(self) -> dict:
        per_sensor = {s.short: {sv.STATE_NAMES[i]: float(self.delta[i]) for i in states_for_sensor(s)}
                      for s in SENSORS} if self.delta.size == sv.N_STATES else {}
        return {"k": self.k, "delta": [float(v) for v in self.delta], "per_sensor": per_sensor}

    @classmethod
    def from_dict(cls, d) -> "DeltaProfile":
        try:
            return cls(np.array(d["delta"], dtype=float), float(d.get("k", 3.0)))
        except KeyError:
            raise ConfigError("delta section incomplete", ["delta"]) from None


@dataclass
class ErrorWindow:
    """Current and previous non-overlapping errors per state."""

    e_cur: np.ndarray
    e_prev: np.ndarray

    def __post_init__(self):
        self.e_cur = np.asarray(self.e_cur, dtype=float).ravel()
        self.e_prev = np.asarray(self.e_prev, dtype=float).ravel()
        if self.e_cur.shape != self.e_prev.shape:
            raise DomainError("error pairs must have the same length")

    @classmethod
    def from_states(cls, s0, s1, s2, s3) -> "ErrorWindow":
        """Window from four consecutive samples, oldest first."""
        return cls(_abs_diff(s3, s2), _abs_diff(s1, s0))

    @property
    def n(self) -> int:
        return self.e_cur.size


def _abs_diff(a, b):
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if d.size == sv.N_STATES:
        d[sv.ANGLES] = sv.wrap_angle(d[sv.ANGLES])
    return np.abs(d)


@dataclass
class DiagnosisResult:
    posterior: np.ndarray
    malicious_states: tuple
    malicious_sensors: frozenset
    t: float | None = None

    @property
    def empty(self) -> bool:
        return not self.malicious_sensors


# ---------------------------------------------------------------------------
# Factor evaluation and calibration
# ---------------------------------------------------------------------------


def factor_eval(e_prev: float, e_cur: float, s: int, delta: float) -> int:
    """1 when the outcome ``s`` agrees with the error evidence, else 0."""
    if e_prev < 0 or e_cur < 0:
        raise DomainError("errors must be non-negative")
    inflated = e_cur > delta and e_prev > delta
    if s == MALICIOUS:
        return int(inflated)
    if s == BENIGN:
        return int(not inflated)
    raise DomainError("outcome must be 0 (benign) or 1 (malicious)")


def factor_table(e_prev, e_cur, delta) -> np.ndarray:
    """Vectorised factor values, shape (n, 2) indexed by outcome."""
    inflated = (np.asarray(e_cur) > delta) & (np.asarray(e_prev) > delta)
    return np.stack([~inflated, inflated], axis=-1).astype(float)


@dataclass
class DeltaValidation:
    coverage: np.ndarray
    max_ratio: np.ndarray
    samples: np.ndarray


def _pooled_columns(traces):
    arrays = [np.asarray(t, dtype=float) for t in traces]
    arrays = [a.reshape(-1, a.shape[-1]) for a in arrays if a.size]
    if not arrays:
        raise InsufficientData("no error traces")
    return arrays, np.concatenate(arrays)


def calibrate_delta(traces: Sequence, k: float = 3.0, min_samples: int = 1000,
                    min_missions: int = 15, floor: float = 1e-12) -> DeltaProfile:
    """``delta = median(e) + k * stdev(e)`` per state over pooled attack-free errors.

    Traces are arrays of shape (n, n_states); NaN marks instants without a
    fresh error sample for that state.
    """
    arrays, pooled = _pooled_columns(traces)
    if len(arrays) < min_missions:
        raise InsufficientData(f"need at least {min_missions} attack-free missions, got {len(arrays)}")
    delta = np.empty(pooled.shape[1])
    short = []
    for i in range(pooled.shape[1]):
        col = pooled[:, i]
        col = col[~np.isnan(col)]
        if col.size < min_samples:
            short.append(i)
            continue
        delta[i] = np.median(col) + k * np.std(col)
    if short:
        names = [sv.STATE_NAMES[i] if pooled.shape[1] == sv.N_STATES else str(i) for i in short]
        raise InsufficientData(f"fewer than {min_samples} error samples for states {', '.join(names)}")
    return DeltaProfile(np.maximum(delta, floor), k)


def validate_delta(profile: DeltaProfile, traces: Sequence) -> DeltaValidation:
    """Per-state share of held-out errors strictly below delta, and max e/delta."""
    _, pooled = _pooled_columns(traces)
    cov = np.empty(pooled.shape[1])
    ratio = np.empty(pooled.shape[1])
    count = np.empty(pooled.shape[1], dtype=np.int64)
    for i in range(pooled.shape[1]):
        col = pooled[:, i]
        col = col[~np.isnan(col)]
        count[i] = col.size
        cov[i] = np.mean(col < profile.delta[i]) if col.size else np.nan
        ratio[i] = np.max(col) / profile.delta[i] if col.size else np.nan
    return DeltaValidation(cov, ratio, count)


# ---------------------------------------------------------------------------
# Generic discrete factor graph with sum-product on forests
# ---------------------------------------------------------------------------


class FactorGraph:
    """Discrete factor graph; exact marginals by sum-product when acyclic."""

    def __init__(self, n_vars: int, card: int = 2):
        self.n_vars = n_vars
        self.card = card
        self.factors: list[tuple[tuple[int, ...], np.ndarray]] = []
        self._var_factors: list[list[int]] = [[] for _ in range(n_vars)]

    def add_factor(self, variables, table) -> None:
        variables = tuple(int(v) for v in variables)
        table = np.asarray(table, dtype=float)
        if table.shape != (self.card,) * len(variables):
            raise DomainError("factor table shape does not match its variables")
        if np.any(table < 0):
            raise DomainError("factor values must be non-negative")
        self.factors.append((variables, table))
        for v in variables:
            self._var_factors[v].append(len(self.factors) - 1)

    def is_forest(self) -> bool:
        edges = sum(len(v) for v, _ in self.factors)
        nodes = self.n_vars + len(self.factors)
        parent = list(range(nodes))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        comps = nodes
        for fi, (vs, _) in enumerate(self.factors):
            for v in vs:
                a, b = find(v), find(self.n_vars + fi)
                if a != b:
                    parent[a] = b
                    comps -= 1
        return edges == nodes - comps

    def joint(self, assignment) -> float:
        a = tuple(int(x) for x in assignment)
        p = 1.0
        for vs, table in self.factors:
            p *= table[tuple(a[v] for v in vs)]
        return p

    def marginals(self) -> np.ndarray:
        """Normalised per-variable marginals (NaN rows when all mass is zero)."""
        if not self.is_forest():
            raise DomainError("sum-product here requires an acyclic factor graph")
        f2v: dict[tuple[int, int], np.ndarray] = {}
        v2f: dict[tuple[int, int], np.ndarray] = {}

        def msg_v2f(v, f):
            key = (v, f)
            if key not in v2f:
                m = np.ones(self.card)
                for g in self._var_factors[v]:
                    if g != f:
                        m = m * msg_f2v(g, v)
                v2f[key] = m
            return v2f[key]

        def msg_f2v(f, v):
            key = (f, v)
            if key not in f2v:
                vs, table = self.factors[f]
                t = table
                for axis, u in enumerate(vs):
                    if u == v:
                        continue
                    shape = [1] * len(vs)
                    shape[axis] = self.card
                    t = t * msg_v2f(u, f).reshape(shape)
                axes = tuple(i for i, u in enumerate(vs) if u != v)
                f2v[key] = t.sum(axis=axes) if axes else t
            return f2v[key]

        out = np.empty((self.n_vars, self.card))
        for v in range(self.n_vars):
            b = np.ones(self.card)
            for f in self._var_factors[v]:
                b = b * msg_f2v(f, v)
            z = b.sum()
            out[v] = b / z if z > 0 else np.nan
        return out


def build_factor_graph(window: ErrorWindow, profile: DeltaProfile,
                       prior: float = 0.5) -> FactorGraph:
    """One binary variable per state with a prior factor and an evidence factor."""
    if profile.delta.size != window.n:
        raise DomainError("window and delta profile sizes differ")
    g = FactorGraph(window.n)
    table = factor_table(window.e_prev, window.e_cur, profile.delta)
    for i in range(window.n):
        g.add_factor((i,), [1.0 - prior, prior])
        g.add_factor((i,), table[i])
    return g


def _result(post: np.ndarray, t) -> DiagnosisResult:
    mal = tuple(int(i) for i in np.flatnonzero(post > 0.5))
    sensors = sensors_of_states(mal) if post.size == sv.N_STATES else frozenset()
    return DiagnosisResult(post, mal, sensors, t)


def infer(window: ErrorWindow, profile: DeltaProfile, t: float | None = None) -> DiagnosisResult:
    """Posterior of maliciousness per state by message passing, then sensor attribution."""
    if np.any(np.isnan(window.e_cur)) or np.any(np.isnan(window.e_prev)):
        raise DomainError("incomplete error window")
    post = build_factor_graph(window, profile).marginals()[:, MALICIOUS]
    return _result(post, t)


# ---------------------------------------------------------------------------
# Exhaustive enumeration oracle
# ---------------------------------------------------------------------------


@njit(cache=True)
def _enumerate(tables, priors, n):
    """Exhaustive depth-first enumeration of all 2**n assignments.

    ``tables`` has shape (n, 2, W) with 0/1 factor values for W windows packed
    as independent columns. Returns unnormalised marginal mass (n, 2, W).
    """
    W = tables.shape[2]
    mass = np.zeros((n, 2, W))
    # partial[d] holds the joint over the first d variables for every window.
    partial = np.ones((n + 1, W))
    weight = np.ones(n + 1)
    assign = np.zeros(n, dtype=np.int64)
    depth = 0
    choice = np.full(n + 1, -1, dtype=np.int64)
    while depth >= 0:
        if depth == n:
            w = weight[n]
            for c in range(W):
                j = partial[n, c] * w
                if j != 0.0:
                    for v in range(n):
                        mass[v, assign[v], c] += j
            depth -= 1
            continue
        choice[depth] += 1
        if choice[depth] > 1:
            choice[depth] = -1
            depth -= 1
            continue
        b = choice[depth]
        assign[depth] = b
        weight[depth + 1] = weight[depth] * priors[depth, b]
        for c in range(W):
            partial[depth + 1, c] = partial[depth, c] * tables[depth, b, c]
        depth += 1
    return mass


@njit(cache=True)
def _enumerate_packed(bits, priors, n, W):
    """Same enumeration for 0/1 factors, with windows packed 64 per machine word."""
    n_words = bits.shape[2]
    mass = np.zeros((n, 2, W))
    partial = np.empty((n + 1, n_words), dtype=np.uint64)
    partial[0, :] = ~np.uint64(0)
    weight = np.ones(n + 1)
    assign = np.zeros(n, dtype=np.int64)
    choice = np.full(n + 1, -1, dtype=np.int64)
    depth = 0
    while depth >= 0:
        if depth == n:
            w = weight[n]
            for c in range(n_words):
                word = partial[n, c]
                while word != 0:
                    low = word & (~word + np.uint64(1))
                    pos = 0
                    tmp = low
                    while tmp > np.uint64(1):
                        tmp >>= np.uint64(1)
                        pos += 1
                    col = c * 64 + pos
                    if col < W:
                        for v in range(n):
                            mass[v, assign[v], col] += w
                    word ^= low
            depth -= 1
            continue
        choice[depth] += 1
        if choice[depth] > 1:
            choice[depth] = -1
            depth -= 1
            continue
        b = choice[depth]
        assign[depth] = b
        weight[depth + 1] = weight[depth] * priors[depth, b]
        for c in range(n_words):
            partial[depth + 1, c] = partial[depth, c] & bits[depth, b, c]
        depth += 1
    return mass


def _pack(tables):
    """Pack 0/1 tables (n, 2, W) into uint64 words along the window axis."""
    n, _, W = tables.shape
    n_words = (W + 63) // 64
    padded = np.zeros((n, 2, n_words * 64), dtype=np.uint8)
    padded[:, :, :W] = tables
    as_bytes = np.packbits(padded.reshape(n, 2, n_words, 64)[..., ::-1], axis=-1)
    return as_bytes.view(">u8").reshape(n, 2, n_words).astype(np.uint64)


def brute_force_posterior_batch(windows: Sequence[ErrorWindow], profile: DeltaProfile,
                                prior: float = 0.5) -> np.ndarray:
    """Posterior P(malicious) for many windows by full joint enumeration, shape (W, n)."""
    if not windows:
        return np.zeros((0, profile.delta.size))
    n = windows[0].n
    if n > MAX_BRUTE_FORCE_STATES:
        raise DomainError(f"enumeration limited to {MAX_BRUTE_FORCE_STATES} states, got {n}")
    tables = np.stack([factor_table(w.e_prev, w.e_cur, profile.delta) for w in windows], axis=-1)
    priors = np.tile([1.0 - prior, prior], (n, 1))
    if np.all((tables == 0.0) | (tables == 1.0)):
        mass = _enumerate_packed(_pack(tables.astype(np.uint8)), priors, n, tables.shape[2])
    else:
        mass = _enumerate(np.ascontiguousarray(tables), priors, n)
    z = mass.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        post = np.where(z > 0, mass[:, MALICIOUS, :] / z, np.nan)
    return post.T


def brute_force_posterior(window: ErrorWindow, profile: DeltaProfile, prior: float = 0.5) -> np.ndarray:
    """Per-state posterior by enumerating every binary outcome assignment."""
    return brute_force_posterior_batch([window], profile, prior)[0]


# ---------------------------------------------------------------------------
# Streaming diagnosis for the closed loop
# ---------------------------------------------------------------------------


class Diagnoser:
    """Keeps the last four fresh readings per sensor and latches verdicts.

    Evaluations happen every ``period`` steps (the slowest sensor's sampling
    interval). A verdict latches after ``agree`` consecutive identical
    malicious-sensor sets, counting only evaluations whose windows consist
    entirely of samples taken at or after the evaluation episode started.
    """

    def __init__(self, profile: DeltaProfile, period: int, agree: int = 4):
        self.profile = profile
        self.period = int(period)
        self.agree = int(agree)
        self._buf = np.full((4, sv.N_STATES), np.nan)
        self._stamp = np.full((4, N_SENSORS), -np.inf)
        self._owner_cols = [list(states_for_sensor(s)) for s in SENSORS]
        self.reset_episode(-np.inf)

    def push(self, values: np.ndarray, fresh: np.ndarray, t: float) -> None:
        """Record fresh readings (state layout) of the sensors flagged in ``fresh``."""
        for s in np.flatnonzero(fresh):
            cols = self._owner_cols[s]
            self._buf[:3, cols] = self._buf[1:, cols]
            self._buf[3, cols] = values[cols]
            self._stamp[:3, s] = self._stamp[1:, s]
            self._stamp[3, s] = t

    def window(self) -> ErrorWindow:
        b = self._buf
        return ErrorWindow.from_states(b[0], b[1], b[2], b[3])

    def complete(self) -> bool:
        return bool(np.all(np.isfinite(self._buf)))

    def mature(self) -> bool:
        """All four samples of every sensor were taken inside the current episode."""
        return bool(np.all(self._stamp[0] >= self._episode_start))

    def evaluate(self, t: float | None = None) -> DiagnosisResult | None:
        if not self.complete():
            return None
        return infer(self.window(), self.profile, t)

    def reset_episode(self, t_start: float) -> None:
        self._episode_start = t_start
        self._streak = 0
        self._last: frozenset | None = None
        self.latched: DiagnosisResult | None = None
        self.history: list[DiagnosisResult] = []

    def step_episode(self, k: int, t: float) -> DiagnosisResult | None:
        """Evaluate on the cadence grid; returns the latched verdict once available."""
        if self.latched is not None:
            return self.latched
        if k % self.period != 0 or not self.mature():
            return None
        res = self.evaluate(t)
        if res is None:
            return None
        self.history.append(res)
        if res.malicious_sensors == self._last:
            self._streak += 1
        else:
            self._last = res.malicious_sensors
            self._streak = 1
        if self._streak >= self.agree:
            self.latched = res
        return self.latched
