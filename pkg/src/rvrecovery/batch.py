"""Seeded campaigns of attacked missions, their attack-free twins and CSV output.

Each attacked mission is paired with an unprotected, attack-free run of the
same seed (its twin) for attitude RMSD and mission delay. Missions run
independently, optionally in worker processes; results are collected in job
order, so the CSV does not depend on the worker count.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import state as sv
from .attacks import AttackSpec
from .errors import ConfigError, DegenerateEnsemble, NoBaseline
from .metrics import (baseline_time, completion_time, diagnosis_tally, mission_outcome,
                      normalize_rmsd, rmsd)
from .mission import (MISSION_TYPES, SUCCESS, Calibration, MissionSpec, RecoveryConfig, Scenario,
                      WindConfig, mission_path, run_mission)
from .sensing import SENSORS, NoiseConfig, SamplingPlan, format_sensors

CSV_COLUMNS = ("mission_id", "seed", "sensors_targeted", "detected_at", "diagnosed_set", "outcome",
               "final_dev_m", "rmsd", "nrmsd", "pmd_pct")
CAMPAIGN_WIND = 15.0 / 3.6  # m/s
MIN_START_DISTANCE = 40.0


# ---------------------------------------------------------------------------
# Campaign construction
# ---------------------------------------------------------------------------


def point_along(waypoints: np.ndarray, fraction: float) -> np.ndarray:
    """Point at ``fraction`` of the path length along the waypoint polyline."""
    wp = np.asarray(waypoints, dtype=float)
    seg = np.diff(wp, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    cum = np.r_[0.0, np.cumsum(lengths)]
    s = fraction * cum[-1]
    i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(lengths) - 1)
    return wp[i] + seg[i] * (s - cum[i]) / max(lengths[i], 1e-9)


def campaign_mission(seed: int, wind_speed: float = CAMPAIGN_WIND, kind: str | None = None,
                     vehicle=None, size: float = 50.0) -> MissionSpec:
    """Attack-free mission of a standard shape, with gusty wind of a random heading."""
    rng = np.random.default_rng([seed, 7])
    kind = kind or MISSION_TYPES[seed % len(MISSION_TYPES)]
    wp = mission_path(kind, rng, size=size)
    wind = WindConfig(wind_speed, rng.uniform(-math.pi, math.pi), 1.0)
    kw = {} if vehicle is None else {"vehicle": vehicle}
    return MissionSpec(wp, kind, wind=wind, seed=seed, **kw)


def sda_mission(seed: int, n_sensors: int, wind_speed: float = CAMPAIGN_WIND,
                activation_range: float = 26.0, start: float = 15.0, profiles=None,
                vehicle=None) -> MissionSpec:
    """Mission with a spoofing attack on ``n_sensors`` randomly chosen sensors.

    The emitter sits near the path between 30% and 75% of its length, off to
    the side by up to 8 m and at least 40 m from the start.
    """
    if not 1 <= n_sensors <= len(SENSORS):
        raise ConfigError(f"sensor count must lie in 1..{len(SENSORS)}", ["campaign.sensor_counts"])
    base = campaign_mission(seed, wind_speed, vehicle=vehicle)
    rng = np.random.default_rng([seed, 5])
    wp = base.waypoints
    emitter = None
    for _ in range(50):
        e = point_along(wp, rng.uniform(0.3, 0.75))
        e[:2] += rng.uniform(-8.0, 8.0, 2)
        e[2] = 0.0
        if np.linalg.norm(e - wp[0]) > MIN_START_DISTANCE:
            emitter = e
            break
    if emitter is None:
        emitter = e
    targets = frozenset(SENSORS[i] for i in rng.choice(len(SENSORS), n_sensors, replace=False))
    atk = AttackSpec(targets, dict(profiles or {}), emitter, activation_range, ((start, math.inf),), seed)
    return MissionSpec(wp, base.mission_type, base.vehicle, base.cruise_speed, base.wind, (atk,), seed)


@dataclass
class CampaignEntry:
    mission_id: str
    spec: MissionSpec
    n_sensors: int


def sda_campaign(n_missions: int, sensor_counts=(1,), seed: int = 0, **kw) -> list:
    """Missions ``seed .. seed + n_missions - 1`` for each sensor count."""
    out = []
    for n in sensor_counts:
        for s in range(seed, seed + n_missions):
            out.append(CampaignEntry(f"{n}:{s:04d}", sda_mission(s, n, **kw), n))
    return out


def wind_only_campaign(n_missions: int, seed: int = 0, wind_speed: float = CAMPAIGN_WIND) -> list:
    return [CampaignEntry(f"0:{s:04d}", campaign_mission(s, wind_speed), 0)
            for s in range(seed, seed + n_missions)]


def campaign_from_config(cfg) -> list:
    """Campaign entries for a parsed :class:`~rvrecovery.config.ScenarioConfig`."""
    c = cfg.campaign
    if c is None:
        raise ConfigError("batch runs need a [campaign] section", ["campaign"])
    if c.wind_only:
        return wind_only_campaign(c.missions, cfg.seed, c.wind_speed)
    return sda_campaign(c.missions, c.sensor_counts, cfg.seed, wind_speed=c.wind_speed,
                        activation_range=c.activation_range, start=c.attack_start, vehicle=cfg.vehicle)


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


@dataclass
class MissionResult:
    """What the aggregation needs from one flown mission."""

    mission_id: str
    seed: int
    mode: str
    targets: frozenset
    terminal: str
    outcome: str
    final_dev: float
    detected_at: float | None
    verdict: frozenset | None
    verdicts: list
    alarms: int
    completion: float
    attitude: np.ndarray


@dataclass
class BatchSettings:
    calibration: Calibration
    modes: tuple = ("targeted",)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    plan: SamplingPlan = field(default_factory=SamplingPlan)
    noise: NoiseConfig | None = None
    trace_dir: str | None = None
    twins: bool = True


def _fly(job) -> MissionResult:
    mission_id, spec, mode, settings = job
    if mode == "twin":
        scen = Scenario(spec.attack_free(), None, plan=settings.plan, noise=settings.noise)
    else:
        rc = RecoveryConfig(**{**vars(settings.recovery), "mode": mode})
        scen = Scenario(spec, settings.calibration, rc, plan=settings.plan, noise=settings.noise)
    tr = run_mission(scen)
    if settings.trace_dir is not None:
        from .report import write_trace_csv

        safe = mission_id.replace(":", "_")
        write_trace_csv(tr, Path(settings.trace_dir) / f"{safe}_{mode}.csv")
    outcome, dev = mission_outcome(tr)
    return MissionResult(mission_id, spec.seed, mode, spec.targets, tr.terminal, outcome, dev,
                         tr.detected_at, tr.first_verdict, [v for _, v in tr.verdicts], tr.alarms,
                         completion_time(tr), tr.true[:, sv.ANGLES].copy())


def fly_all(jobs, workers: int = 1) -> list:
    """Run jobs in order; results come back in job order whatever the worker count."""
    if workers <= 1:
        return [_fly(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_fly, jobs, chunksize=1))


@dataclass
class Row:
    mission_id: str
    seed: str
    sensors_targeted: str
    detected_at: str
    diagnosed_set: str
    outcome: str
    final_dev_m: str
    rmsd: str
    nrmsd: str
    pmd_pct: str

    def values(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass
class ModeSummary:
    """Per-mode, per-sensor-count campaign statistics."""

    mode: str
    n_sensors: int
    missions: int
    successes: int
    detected: int
    tp: int
    partial: int
    fp: int
    alarms: int
    fp_verdicts: int
    mean_rmsd: float
    mean_pmd: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.missions if self.missions else float("nan")

    @property
    def tp_rate(self) -> float:
        return self.tp / self.missions if self.missions else float("nan")


@dataclass
class BatchResult:
    rows: list
    summaries: list
    results: dict
    twins: dict

    def summary(self, mode: str, n_sensors: int) -> ModeSummary:
        for s in self.summaries:
            if s.mode == mode and s.n_sensors == n_sensors:
                return s
        raise KeyError((mode, n_sensors))

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(r.values())
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.csv_text())


def _num(v, fmt: str = ".6f") -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ""
    return format(float(v), fmt)


def run_batch(entries, settings: BatchSettings, workers: int = 1) -> BatchResult:
    """Fly every entry in every mode plus its twin, then build rows and aggregates.

    Without twins (``settings.twins`` false) the RMSD and delay columns stay blank.
    """
    entries = list(entries)
    if settings.trace_dir is not None:
        Path(settings.trace_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(e.mission_id, e.spec, "twin", settings) for e in entries] if settings.twins else []
    n_twins = len(jobs)
    jobs += [(e.mission_id, e.spec, m, settings) for m in settings.modes for e in entries]
    flown = fly_all(jobs, workers)
    twins = {r.mission_id: r for r in flown[:n_twins]}
    results = {(r.mode, r.mission_id): r for r in flown[n_twins:]}
    twin_times = [t.completion for t in twins.values() if t.terminal == "landed"]
    try:
        t_base = baseline_time(twin_times)
    except NoBaseline:
        t_base = None

    rows, summaries = [], []
    for mode in settings.modes:
        metrics = {}
        for e in entries:
            r, tw = results[(mode, e.mission_id)], twins.get(e.mission_id)
            dev = None if tw is None else rmsd(r.attitude, tw.attitude)
            pmd = None if tw is None or t_base is None else (r.completion - tw.completion) / t_base * 100.0
            metrics[e.mission_id] = (dev, pmd)
        devs = [m[0] for m in metrics.values() if m[0] is not None]
        for n in sorted({e.n_sensors for e in entries}):
            group = [e for e in entries if e.n_sensors == n]
            tally = {"tp": 0, "partial": 0, "fp": 0}
            succ = det = fp_verdicts = alarms = 0
            for e in group:
                r = results[(mode, e.mission_id)]
                dev, pmd = metrics[e.mission_id]
                try:
                    ndev = None if dev is None else normalize_rmsd(dev, min(devs), max(devs))
                except DegenerateEnsemble:
                    ndev = None
                rows.append(Row(f"{mode}:{e.mission_id}", str(r.seed), format_sensors(r.targets),
                                _num(r.detected_at, ".4f"),
                                "" if r.verdict is None else format_sensors(r.verdict),
                                r.outcome, _num(r.final_dev, ".3f"), _num(dev), _num(ndev), _num(pmd, ".3f")))
                succ += r.outcome == SUCCESS
                det += r.detected_at is not None
                alarms += r.alarms
                fp_verdicts += sum(1 for v in r.verdicts if v - r.targets)
                if r.targets:
                    for k, flag in diagnosis_tally(r.verdict, r.targets).items():
                        tally[k] += flag
            g_rmsd = [metrics[e.mission_id][0] for e in group if metrics[e.mission_id][0] is not None]
            g_pmd = [metrics[e.mission_id][1] for e in group if metrics[e.mission_id][1] is not None]
            s = ModeSummary(mode, n, len(group), succ, det, tally["tp"], tally["partial"], tally["fp"],
                            alarms, fp_verdicts, float(np.mean(g_rmsd)) if g_rmsd else float("nan"),
                            float(np.mean(g_pmd)) if g_pmd else float("nan"))
            summaries.append(s)
            diag = (f"tp={s.tp}/{s.missions} partial={s.partial} fp={s.fp}" if n
                    else f"fp_verdicts={s.fp_verdicts}/alarms={s.alarms}")
            rows.append(Row(f"{mode}:{n}:all", "", str(n), f"{det}/{len(group)}", diag,
                            f"success={succ}/{len(group)}",
                            _num(np.mean([results[(mode, e.mission_id)].final_dev for e in group]), ".3f"),
                            _num(s.mean_rmsd), "", _num(s.mean_pmd, ".3f")))
    return BatchResult(rows, summaries, results, twins)
