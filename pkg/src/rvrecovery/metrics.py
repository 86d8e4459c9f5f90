"""Mission outcome, attitude RMSD and percentage mission delay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import state as sv
from .errors import DegenerateEnsemble, DomainError, NoBaseline
from .mission import CRASH, FAIL, STALL, SUCCESS, SUCCESS_RADIUS, MissionSpec, MissionTrace

OUTCOMES = (SUCCESS, FAIL, CRASH, STALL)


@dataclass
class MetricsReport:
    outcome: str
    final_deviation: float
    rmsd: float | None = None
    nrmsd: float | None = None
    t_recovery: float | None = None
    t_ground_truth: float | None = None
    t_baseline: float | None = None
    pmd: float | None = None
    diagnosis: dict = field(default_factory=dict)


def mission_outcome(trace: MissionTrace, spec: MissionSpec | None = None) -> tuple[str, float]:
    """Outcome label and final horizontal-plus-vertical deviation from the destination (m).

    The crash and stall rules are applied by the simulator, which records them
    as the trace's terminal state. A mission that lands or is stopped is a
    success when it ends within the success radius of the destination.
    """
    spec = spec or trace.spec
    dest = trace.destination if spec is None else np.array([*spec.waypoints[-1][:2], 0.0])
    dev = float(np.linalg.norm(np.asarray(trace.final_position) - dest))
    if trace.terminal in (CRASH, STALL):
        return trace.terminal, dev
    if trace.terminal == "abort":
        return FAIL, dev
    return (SUCCESS if dev < SUCCESS_RADIUS else FAIL), dev


def rmsd(recovery, ground_truth) -> float:
    """Root-mean-square attitude deviation (degrees) over the common horizon.

    Arguments are traces or arrays of true states; roll, pitch and yaw errors
    are wrapped and averaged together, so a constant offset ``d`` on all three
    angles gives ``d``.
    """
    a = np.asarray(getattr(recovery, "true", recovery), dtype=float)
    b = np.asarray(getattr(ground_truth, "true", ground_truth), dtype=float)
    n = min(len(a), len(b))
    if n == 0:
        raise DomainError("RMSD needs at least one common sample")
    if a.shape[1] == sv.N_STATES:
        a = a[:n, sv.ANGLES]
        b = b[:n, sv.ANGLES]
    else:
        a, b = a[:n], b[:n]
    d = np.degrees(sv.wrap_angle(a - b))
    return float(math.sqrt(np.mean(d * d)))


def normalize_rmsd(value: float, lo: float, hi: float) -> float:
    """Min-max normalisation clamped to [0, 1]."""
    if not hi > lo:
        raise DegenerateEnsemble(f"RMSD ensemble has no spread (min {lo}, max {hi})")
    return float(min(max((value - lo) / (hi - lo), 0.0), 1.0))


def normalize_ensemble(values) -> list:
    """Normalise a set of RMSD values against their own minimum and maximum."""
    vals = [float(v) for v in values]
    return [normalize_rmsd(v, min(vals), max(vals)) for v in vals]


def baseline_time(attack_free_times) -> float:
    """Midpoint of the fastest and slowest attack-free completion times."""
    times = [float(t) for t in attack_free_times if t is not None and np.isfinite(t)]
    if len(times) < 2:
        raise NoBaseline("need at least two attack-free completion times")
    return 0.5 * (min(times) + max(times))


def mission_delay(t_recovery: float, t_ground_truth: float, attack_free_times) -> float:
    """Percentage mission delay relative to the campaign baseline time."""
    return (float(t_recovery) - float(t_ground_truth)) / baseline_time(attack_free_times) * 100.0


def completion_time(trace: MissionTrace) -> float:
    """Completion time used for delay; missions that never land are charged their horizon."""
    if trace.terminal == "landed" and trace.completion_time is not None:
        return float(trace.completion_time)
    spec = trace.spec
    return float(spec.horizon()) if spec is not None else float(trace.t[-1] + trace.dt)


def diagnosis_tally(verdict, targets) -> dict:
    """Exact-set TP, partial match and FP flags for one diagnosis verdict."""
    v = frozenset(verdict or ())
    tg = frozenset(targets)
    return {"tp": bool(tg) and v == tg, "partial": bool(v & tg) and v != tg,
            "fp": bool(v - tg)}


def mission_report(trace: MissionTrace, twin: MissionTrace | None = None,
                   attack_free_times=None) -> MetricsReport:
    """Metrics for one mission against its attack-free twin, when given."""
    outcome, dev = mission_outcome(trace)
    rep = MetricsReport(outcome, dev)
    if twin is not None:
        rep.rmsd = rmsd(trace, twin)
        rep.t_recovery = completion_time(trace)
        rep.t_ground_truth = completion_time(twin)
        if attack_free_times is not None:
            rep.t_baseline = baseline_time(attack_free_times)
            rep.pmd = (rep.t_recovery - rep.t_ground_truth) / rep.t_baseline * 100.0
    if trace.spec is not None:
        rep.diagnosis = diagnosis_tally(trace.first_verdict, trace.spec.targets)
    return rep
