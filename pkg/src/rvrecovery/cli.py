"""Command-line interface: calibrate, run, batch and report."""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from .errors import RVRecoveryError


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _config(path):
    from .config import ScenarioConfig, load_config

    return load_config(path) if path else ScenarioConfig()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    from .calibration import calibrate, save_calibration

    cfg = _config(args.config)
    d = cfg.detector
    t0 = time.time()
    rep = calibrate(
        n_calibration=args.missions or d.calibration_missions,
        n_validation=args.missions or d.validation_missions,
        n_stealth=args.stealth or d.stealth_missions,
        seed=d.seed if args.seed is None else args.seed,
        k=d.k, stealth_scale=d.stealth_scale, window_margin=d.window_margin,
        plan=cfg.plan, noise=cfg.noise, lqr=cfg.recovery.lqr, vehicle=cfg.vehicle, progress=_log)
    v = rep.validation
    extra = {"delta_coverage": [float(c) for c in v.coverage], "seeds": rep.seeds,
             "stealth_delays": {s.short: list(ds) for s, ds in rep.delays.items()}}
    save_calibration(rep.calibration, args.out, extra)
    _log(f"window {rep.calibration.window_s:.2f} s, worst per-state delta coverage "
         f"{float(np.nanmin(v.coverage)):.4f}, {time.time() - t0:.0f} s")
    print(args.out)
    return 0


def cmd_run(args) -> int:
    from .calibration import load_calibration
    from .metrics import mission_report
    from .mission import Scenario, run_mission
    from .report import write_trace_csv
    from .sensing import format_sensors

    cfg = _config(args.config)
    cal = load_calibration(args.calibration) if args.calibration else None
    rc = cfg.recovery
    if args.mode:
        rc = type(rc)(**{**vars(rc), "mode": args.mode})
    spec = cfg.mission_spec(args.seed)
    tr = run_mission(Scenario(spec, cal, rc, plan=cfg.plan, noise=cfg.noise))
    twin = run_mission(Scenario(spec.attack_free(), None, plan=cfg.plan, noise=cfg.noise))
    rep = mission_report(tr, twin)
    if args.trace:
        write_trace_csv(tr, args.trace)
    if args.twin_trace:
        write_trace_csv(twin, args.twin_trace)
    out = {
        "seed": spec.seed, "mode": tr.mode, "sensors_targeted": format_sensors(spec.targets),
        "outcome": rep.outcome, "final_dev_m": round(rep.final_deviation, 3),
        "detected_at": tr.detected_at,
        "diagnosed_set": None if tr.first_verdict is None else format_sensors(tr.first_verdict),
        "rmsd_deg": round(rep.rmsd, 4), "t_recovery": rep.t_recovery, "t_ground_truth": rep.t_ground_truth,
        "events": [[round(e.t, 3), e.kind, e.detail] for e in tr.events],
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_batch(args) -> int:
    from .batch import BatchSettings, campaign_from_config, run_batch
    from .calibration import load_calibration

    cfg = _config(args.config)
    entries = campaign_from_config(cfg)
    modes = tuple(args.modes) if args.modes else cfg.campaign.modes
    settings = BatchSettings(load_calibration(args.calibration), modes, cfg.recovery, cfg.plan, cfg.noise,
                             args.traces, twins=not args.no_twins)
    workers = args.workers or cfg.campaign.workers
    twins = "" if args.no_twins else " (+ twins)"
    _log(f"{len(entries)} missions x {len(modes)} modes{twins}, {workers} worker(s)")
    res = run_batch(entries, settings, workers)
    res.write_csv(args.out)
    for s in res.summaries:
        _log(f"{s.mode:10s} sensors={s.n_sensors} success={s.successes}/{s.missions} "
             f"tp={s.tp}/{s.missions} rmsd={s.mean_rmsd:.3f} pmd={s.mean_pmd:.2f}")
    print(args.out)
    return 0


def cmd_report(args) -> int:
    from .report import read_trace_csv, report_series, write_series_csv

    trace = read_trace_csv(args.trace)
    twin = read_trace_csv(args.twin) if args.twin else None
    write_series_csv(report_series(trace, twin), args.out)
    print(args.out)
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rvrecovery",
                                 description="Sensor-attack detection, diagnosis and recovery simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="derive thresholds, error bounds, window and gain")
    p.add_argument("--config", help="scenario config (vehicle, noise, sampling, detector settings)")
    p.add_argument("--out", default="calibration.json")
    p.add_argument("--missions", type=int, help="calibration and validation missions each")
    p.add_argument("--stealth", type=int, help="stealthy-attack missions")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", help="fly one scenario and print its report")
    p.add_argument("--config", required=True)
    p.add_argument("--calibration", help="calibration file; omit to fly unprotected")
    p.add_argument("--mode", choices=("targeted", "worst-case"))
    p.add_argument("--seed", type=int)
    p.add_argument("--trace", help="write the mission trace CSV here")
    p.add_argument("--twin-trace", help="write the attack-free twin's trace CSV here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="fly a campaign and write the results CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--out", default="results.csv")
    p.add_argument("--workers", type=int)
    p.add_argument("--modes", nargs="+", choices=("targeted", "worst-case"))
    p.add_argument("--traces", help="directory for per-mission trace CSVs")
    p.add_argument("--no-twins", action="store_true",
                   help="skip the attack-free twins (leaves RMSD and delay blank)")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("report", help="turn a trace CSV into a plot-ready series CSV")
    p.add_argument("--trace", required=True)
    p.add_argument("--twin", help="attack-free twin trace for the deviation column")
    p.add_argument("--out", default="report.csv")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RVRecoveryError as exc:
        _log(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
