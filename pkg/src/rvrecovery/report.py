"""Trace files and plot-ready report series.

A trace file is a CSV with one row per control step. Its columns, in order:

* ``t`` (s)
* ``true_<state>``, ``est_<state>``, ``read_<state>`` for the 19 state
  components in state-vector order (SI units, angles in radians)
* ``u_thrust``, ``u_roll``, ``u_pitch``, ``u_yaw`` (N, N m)
* ``recovering`` (0/1), ``isolated`` (sensor set, ``none`` when not recovering),
  ``phase`` (takeoff/cruise/land)
* ``attack_<sensor>`` (0/1) for each sensor, set while its bias is applied

The report series keeps altitude (true, estimated, reported), deviation from
the attack-free twin when one is given, the recovery flag and attack bands.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import state as sv
from .errors import ConfigError
from .mission import PHASE_NAMES, MissionTrace, bits_to_sensors
from .sensing import SENSORS, format_sensors

CONTROL_NAMES = ("u_thrust", "u_roll", "u_pitch", "u_yaw")


def trace_columns() -> list:
    cols = ["t"]
    for prefix in ("true", "est", "read"):
        cols += [f"{prefix}_{n}" for n in sv.STATE_NAMES]
    cols += list(CONTROL_NAMES) + ["recovering", "isolated", "phase"]
    cols += [f"attack_{s.short}" for s in SENSORS]
    return cols


def attack_bands(trace: MissionTrace) -> np.ndarray:
    """Boolean (steps x sensors) array: bias applied to each sensor at each step."""
    out = np.zeros((trace.n, len(SENSORS)), dtype=bool)
    spec = trace.spec
    if spec is None:
        return out
    for a in spec.attacks:
        for s in a.targets:
            col = out[:, int(s)]
            for k in range(trace.n):
                col[k] |= a.active(s, float(trace.t[k]), trace.true[k, sv.POS])
    return out


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trace_csv(trace: MissionTrace, path) -> None:
    bands = attack_bands(trace)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trace_columns())
        for k in range(trace.n):
            iso = format_sensors(bits_to_sensors(int(trace.isolated[k]))) if trace.recovering[k] else "none"
            row = [_fmt(trace.t[k])]
            row += [_fmt(v) for v in trace.true[k]]
            row += [_fmt(v) for v in trace.estimate[k]]
            row += [_fmt(v) for v in trace.readings[k]]
            row += [_fmt(v) for v in trace.control[k]]
            row += [int(trace.recovering[k]), iso, PHASE_NAMES[int(trace.phase[k])]]
            row += [int(b) for b in bands[k]]
            w.writerow(row)


def read_trace_csv(path) -> dict:
    """Columns of a trace file as arrays (strings for ``isolated`` and ``phase``)."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"trace file {p} not found", [str(p)])
    with open(p, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != trace_columns():
        raise ConfigError(f"{p} is not a trace file", [str(p)])
    cols = rows[0]
    data = list(zip(*rows[1:])) if len(rows) > 1 else [()] * len(cols)
    out = {}
    for name, values in zip(cols, data):
        if name in ("isolated", "phase"):
            out[name] = np.array(values, dtype=object)
        else:
            out[name] = np.array([float(v) for v in values])
    return out


def report_series(trace: dict, twin: dict | None = None) -> dict:
    """Plot-ready altitude and attack-band series from a parsed trace file."""
    out = {
        "t": trace["t"],
        "alt_true": trace["true_z"],
        "alt_estimated": trace["est_z"],
        "alt_reported": trace["read_alt"],
        "recovering": trace["recovering"],
    }
    if twin is not None:
        n = min(len(trace["t"]), len(twin["t"]))
        dev = np.full(len(trace["t"]), np.nan)
        d = np.stack([trace[f"true_{c}"][:n] - twin[f"true_{c}"][:n] for c in ("x", "y", "z")])
        dev[:n] = np.linalg.norm(d, axis=0)
        out["deviation_from_twin"] = dev
    for s in SENSORS:
        out[f"attack_{s.short}"] = trace[f"attack_{s.short}"]
    return out


def write_series_csv(series: dict, path) -> None:
    names = list(series)
    n = len(series["t"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for k in range(n):
            w.writerow([_fmt(series[c][k]) if series[c].dtype.kind == "f" else series[c][k] for c in names])
