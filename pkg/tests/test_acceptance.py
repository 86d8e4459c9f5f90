"""End-to-end acceptance criteria.

Each test prints one ``C<n> PASS|FAIL`` line (also collected in the terminal
summary) with the measured figures and the wall time against its budget.
The whole module takes about 30 minutes on one core.
"""

from __future__ import annotations

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from rvrecovery import state as sv
from rvrecovery.attacks import AttackSpec, BiasProfile, StealthProfile
from rvrecovery.batch import (BatchSettings, CampaignEntry, campaign_mission, point_along, run_batch,
                              sda_campaign, wind_only_campaign)
from rvrecovery.calibration import calibrate, detection_delays, loiter_mission, stealth_attack
from rvrecovery.control import lqr_gain
from rvrecovery.diagnosis import DeltaProfile, ErrorWindow, brute_force_posterior_batch, infer
from rvrecovery.dynamics import (VehicleParams, fit_params, hover_control, hover_state,
                                 rover_derivatives, rover_state, rover_step, step, step_jacobian)
from rvrecovery.estimation import EkfState, ekf_correct, ekf_predict
from rvrecovery.metrics import mission_outcome
from rvrecovery.mission import SUCCESS, MissionSpec, RecoveryConfig, Scenario, run_mission
from rvrecovery.sensing import SENSORS, SensorId

pytestmark = pytest.mark.acceptance

P = VehicleParams()
DT = 0.0025
MODES = ("targeted", "worst-case")


class Verdict:
    def __init__(self):
        self.ok = False
        self.detail = ""
        self.extra_time = 0.0


@contextmanager
def criterion(number: int, title: str, budget: float | None):
    """Time a criterion and record its PASS/FAIL line, even if the body raises."""
    v = Verdict()
    t0 = time.perf_counter()
    try:
        yield v
    except Exception as exc:
        v.ok = False
        v.detail = f"raised {type(exc).__name__}: {exc}"
        raise
    finally:
        elapsed = time.perf_counter() - t0 + v.extra_time
        in_budget = budget is None or elapsed < budget
        timing = f"{elapsed:.1f} s" + ("" if budget is None else f" / {budget:.0f} s")
        line = f"C{number} {'PASS' if v.ok and in_budget else 'FAIL'} {title}: {v.detail} ({timing})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        v.in_budget = in_budget


# ---------------------------------------------------------------------------
# Shared fixtures
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def fresh_calibration():
    """Run the default calibration and note when the attack-free part finished."""
    marks = {}
    t0 = time.perf_counter()

    def progress(msg):
        if msg.startswith("stealthy-attack"):
            marks["attack_free"] = time.perf_counter() - t0

    rep = calibrate(progress=progress)
    return rep, marks["attack_free"]


@pytest.fixture(scope="module")
def low_count_campaign(fresh_calibration):
    """1- and 2-sensor SDA campaigns in both modes with twins, and their wall time."""
    cal = fresh_calibration[0].calibration
    t0 = time.perf_counter()
    res = run_batch(sda_campaign(25, (1, 2)), BatchSettings(cal, MODES))
    return res, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# C1 oracle equivalence
# ---------------------------------------------------------------------------


def test_c1_factor_graph_matches_enumeration():
    rng = np.random.default_rng(2024)
    n = sv.N_STATES
    profile = DeltaProfile(rng.uniform(0.2, 1.5, n))
    scale = 2.0 * profile.delta
    windows = [ErrorWindow(rng.uniform(0, 1, n) * scale, rng.uniform(0, 1, n) * scale)
               for _ in range(10_000)]
    with criterion(1, "factor graph equals enumeration", 10.0) as v:
        fg = np.array([infer(w, profile).posterior for w in windows])
        bf = brute_force_posterior_batch(windows, profile)
        mismatches = int(np.sum(np.any(fg != bf, axis=1)))
        v.ok = mismatches == 0
        v.detail = f"{mismatches} mismatching windows of {len(windows)} over {n} states"
    assert v.ok and v.in_budget


# ---------------------------------------------------------------------------
# C2 error-bound coverage
# ---------------------------------------------------------------------------


def test_c2_delta_coverage(fresh_calibration):
    rep, attack_free_time = fresh_calibration
    with criterion(2, "delta coverage on held-out missions", 300.0) as v:
        v.extra_time = attack_free_time
        cov = rep.validation.coverage
        worst = int(np.nanargmin(cov))
        v.ok = bool(np.all(cov >= 0.99))
        v.detail = (f"worst state {sv.STATE_NAMES[worst]} {cov[worst]:.4f}, "
                    f"{int(np.sum(cov < 0.99))}/{cov.size} states below 0.99 "
                    f"(15 calibration + 15 validation missions)")
    assert v.ok and v.in_budget


# ---------------------------------------------------------------------------
# C3 diagnosis accuracy
# ---------------------------------------------------------------------------


def test_c3_diagnosis_accuracy(fresh_calibration):
    cal = fresh_calibration[0].calibration
    with criterion(3, "diagnosis accuracy", 900.0) as v:
        sda = run_batch(sda_campaign(25, (1, 2, 3, 4)), BatchSettings(cal, ("targeted",), twins=False))
        wind = run_batch(wind_only_campaign(20, seed=500), BatchSettings(cal, ("targeted",), twins=False))
        tp = sum(sda.summary("targeted", n).tp for n in (1, 2, 3, 4))
        missions = sum(sda.summary("targeted", n).missions for n in (1, 2, 3, 4))
        w = wind.summary("targeted", 0)
        fp_missions = sum(1 for r in wind.results.values() if r.verdicts)
        fp_ok = w.fp_verdicts <= 0.1 * w.alarms if w.alarms else w.fp_verdicts == 0
        v.ok = tp / missions >= 0.9 and fp_ok
        v.detail = (f"exact-set TP {tp}/{missions} = {tp / missions:.2%}; wind-only: "
                    f"{w.fp_verdicts} FP verdicts per {w.alarms} false alarms, "
                    f"{fp_missions}/{w.missions} missions with an FP verdict")
    assert v.ok and v.in_budget


# ---------------------------------------------------------------------------
# C4 targeted vs worst-case recovery
# ---------------------------------------------------------------------------


def test_c4_targeted_beats_worst_case(fresh_calibration, low_count_campaign):
    cal = fresh_calibration[0].calibration
    res, shared_time = low_count_campaign
    with criterion(4, "targeted vs worst-case recovery", 1800.0) as v:
        v.extra_time = shared_time
        parts, ok = [], True
        for n in (1, 2):
            t, w = res.summary("targeted", n), res.summary("worst-case", n)
            r_ratio, p_ratio = t.mean_rmsd / w.mean_rmsd, t.mean_pmd / w.mean_pmd
            ok &= t.missions >= 25 and r_ratio <= 0.5 and p_ratio <= 0.5
            parts.append(f"{n} sensor(s): RMSD {t.mean_rmsd:.2f}/{w.mean_rmsd:.2f} deg = {r_ratio:.2f}x, "
                         f"PMD {t.mean_pmd:.1f}/{w.mean_pmd:.1f}% = {p_ratio:.2f}x")
        same = 0
        five = sda_campaign(3, (5,), seed=700)
        for e in five:
            a, b = (run_mission(Scenario(e.spec, cal, RecoveryConfig(mode=m))) for m in MODES)
            same += (a.n == b.n and np.array_equal(a.true, b.true) and np.array_equal(a.control, b.control)
                     and np.array_equal(a.estimate, b.estimate))
        ok &= same == len(five)
        parts.append(f"5 sensors: {same}/{len(five)} identical trace pairs")
        v.ok = bool(ok)
        v.detail = "; ".join(parts)
    assert v.ok and v.in_budget


# ---------------------------------------------------------------------------
# C5 mission success
# ---------------------------------------------------------------------------


def test_c5_mission_success(fresh_calibration, low_count_campaign):
    cal = fresh_calibration[0].calibration
    res, shared_time = low_count_campaign
    with criterion(5, "mission success", 1800.0) as v:
        v.extra_time = shared_time
        three = run_batch(sda_campaign(25, (3,)), BatchSettings(cal, MODES, twins=False))
        parts, ok = [], True
        for n, src in ((1, res), (2, res), (3, three)):
            t, w = src.summary("targeted", n), src.summary("worst-case", n)
            ok &= t.success_rate >= 0.9 and t.success_rate > w.success_rate
            parts.append(f"{n}: {t.successes}/{t.missions} vs {w.successes}/{w.missions}")
        v.ok = bool(ok)
        v.detail = "targeted vs worst-case successes " + ", ".join(parts)
    assert v.ok and v.in_budget


# ---------------------------------------------------------------------------
# C6 stealthy attacks
# ---------------------------------------------------------------------------


def _loiter_with(seed: int, attack_for) -> MissionSpec:
    base, centre = loiter_mission(seed)
    atk = attack_for([*centre, 10.0])
    return MissionSpec(base.waypoints, base.mission_type, base.vehicle, base.cruise_speed, base.wind,
                       (atk,), seed)


def _campaign_stealth(seed: int, profile: StealthProfile) -> MissionSpec:
    base = campaign_mission(seed)
    e = point_along(base.waypoints, 0.5)
    e[2] = 0.0
    atk = AttackSpec({"gps"}, {"gps": BiasProfile("stealth", stealth=profile)}, e, 200.0,
                     ((15.0, math.inf),), seed)
    return MissionSpec(base.waypoints, base.mission_type, base.vehicle, base.cruise_speed, base.wind,
                       (atk,), seed)


def test_c6_stealthy_attacks(fresh_calibration):
    cal = fresh_calibration[0].calibration
    with criterion(6, "stealthy attacks", None) as v:
        onset = 12.0
        all_delays = []
        for seed in range(20_000, 20_010):
            spec = _loiter_with(seed, lambda e, s=seed: stealth_attack(SENSORS, cal.detector, onset, e, 1.0, s))
            tr = run_mission(Scenario(spec, cal, stop_on_alert=True))
            all_delays.append(math.inf if tr.detected_at is None else max(tr.detected_at - onset, 0.0))
        all_ok = max(all_delays) <= 5.0

        gps = detection_delays(range(21_000, 21_020), [SensorId.GPS], cal)[SensorId.GPS]
        gps_ok = all(d is not None and d <= cal.window_s for d in gps)
        worst_gps = max(math.inf if d is None else d for d in gps)

        kinds = {"A2": StealthProfile("A2", 0.0, 0.5, cap=50.0),
                 "A3": StealthProfile("A3", 3.0, duty=0.5, period=2.0)}
        parts, stealth_ok = [], True
        for name, prof in kinds.items():
            small = wins = 0
            for seed in range(30_000, 30_006):
                spec = _campaign_stealth(seed, prof)
                tr = run_mission(Scenario(spec, cal))
                twin = run_mission(Scenario(spec.attack_free()))
                k = min(tr.n, twin.n) if tr.detected_at is None else int(round(tr.detected_at / tr.dt))
                corruption = float(np.max(np.linalg.norm(tr.true[:k, sv.POS] - twin.true[:k, sv.POS], axis=1)))
                if corruption <= 5.0:
                    small += 1
                    wins += mission_outcome(tr)[0] == SUCCESS
            stealth_ok &= small >= 4 and wins == small
            parts.append(f"{name} {wins}/{small} successes with corruption <= 5 m")
        v.ok = bool(all_ok and gps_ok and stealth_ok)
        v.detail = (f"all-sensor worst delay {max(all_delays):.2f} s; GPS {sum(d is not None and d <= cal.window_s for d in gps)}"
                    f"/20 within {cal.window_s:.2f} s (worst {worst_gps:.2f} s); " + ", ".join(parts))
    assert v.ok


# ---------------------------------------------------------------------------
# C7 numerical foundations
# ---------------------------------------------------------------------------


def _hover_drift() -> float:
    x = hover_state(P, (1.0, -2.0, 10.0))
    worst = 0.0
    for _ in range(4000):
        nxt = step(x, hover_control(P), P, DT)
        worst = max(worst, float(np.max(np.abs(nxt - x))))
        x = nxt
    return worst


def _rover_radius_spread() -> float:
    delta, speed, h = 0.3, 2.0, 0.01
    x = rover_state(speed=speed)
    beta = rover_derivatives(x, [0.0, delta], P).slip
    radius = P.rear_axle / np.sin(beta)
    centre = np.array([-radius * np.sin(beta), radius * np.cos(beta)])
    pts = []
    for _ in range(int(2 * np.pi * radius / speed / h) + 1):
        x = rover_step(x, [0.0, delta], P, h)
        pts.append(x[[sv.X, sv.Y]])
    r = np.linalg.norm(np.array(pts) - centre, axis=1)
    return float(np.max(np.abs(r / radius - 1.0)))


def _ekf_min_eigenvalue() -> float:
    rng = np.random.default_rng(0)
    x = hover_state(P, (0.0, 0.0, 10.0))
    ekf = EkfState.create(x, P)
    worst = math.inf
    for k in range(10_000):
        u = hover_control(P) + rng.normal(0, 0.05, 4)
        x = step(x, u, P, DT)
        ekf = ekf_predict(ekf, u, DT)
        idx = np.arange(9, 15) if k % 40 else np.arange(sv.N_STATES)
        ekf = ekf_correct(ekf, x[idx] + rng.normal(0, 0.01, idx.size), idx)
        if k % 50 == 0:
            sym = float(np.max(np.abs(ekf.P - ekf.P.T)))
            worst = min(worst, float(np.min(np.linalg.eigvalsh(ekf.P))) - sym)
    return worst


def _jacobian_errors() -> list:
    rng = np.random.default_rng(5)
    core = np.r_[sv.POS, sv.VEL, sv.ANGLES, sv.RATES]
    x = hover_state(P, (0.0, 0.0, 10.0))
    x[core] += np.r_[np.zeros(3), rng.normal(0, 1, 3), rng.normal(0, 0.2, 6)]
    u = hover_control(P) + rng.normal(0, 0.1, 4)
    J = step_jacobian(x, u, P, DT)
    v = np.zeros(sv.N_STATES)
    v[core] = rng.normal(0, 1, core.size)
    out = []
    for h in (1e-2, 1e-3, 1e-4):
        fd = (step(x + h * v, u, P, DT) - step(x, u, P, DT)) / h
        out.append((h, float(np.max(np.abs(fd[core] - (J @ v)[core])))))
    return out


def _dare_error() -> float:
    p = 1.0
    for _ in range(10_000):
        p = 1.0 + p - p * p / (1.0 + p)
    return abs(lqr_gain([[1.0]], [[1.0]], [[1.0]], [[1.0]])[0, 0] - p / (1.0 + p))


def _fit_error() -> float:
    truth = P.replace(mass=1.8, ixx=0.025, iyy=0.035, izz=0.07)
    rng = np.random.default_rng(0)
    x = hover_state(truth, (0.0, 0.0, 10.0))
    traces = []
    for _ in range(80):
        u = hover_control(truth) + np.r_[rng.normal(0, 2.0), rng.normal(0, 0.05, 3)]
        nxt = step(x, u, truth, DT)
        traces.append((x, u, nxt))
        x = nxt
    fit = fit_params(traces, DT, initial=P).params
    return max(abs(getattr(fit, n) / getattr(truth, n) - 1.0) for n in ("mass", "ixx", "iyy", "izz"))


def test_c7_numerical_foundations():
    with criterion(7, "numerical foundations", 120.0) as v:
        drift = _hover_drift()
        spread = _rover_radius_spread()
        min_eig = _ekf_min_eigenvalue()
        jac = _jacobian_errors()
        dare = _dare_error()
        fit = _fit_error()
        # Forward differences converge linearly: the error per unit step stays
        # bounded and shrinks by about the step ratio.
        jac_ok = all(err <= 10.0 * h for h, err in jac) and jac[1][1] < 0.2 * jac[0][1]
        v.ok = drift < 1e-9 and spread < 1e-3 and min_eig >= 0.0 and jac_ok and dare < 1e-8 and fit < 1e-6
        v.detail = (f"hover drift {drift:.1e}/step, rover radius spread {spread:.1e}, "
                    f"EKF min eigenvalue {min_eig:.1e} over 1e4 cycles, Jacobian FD error "
                    + "/".join(f"{e:.1e}" for _, e in jac) + " at h=1e-2/1e-3/1e-4, "
                    f"DARE gain error {dare:.1e}, fit relative error {fit:.1e}")
    assert v.ok and v.in_budget


# ---------------------------------------------------------------------------
# C8 determinism
# ---------------------------------------------------------------------------


def test_c8_rerun_is_bit_identical(fresh_calibration):
    cal = fresh_calibration[0].calibration
    entries = sda_campaign(2, (1, 3), seed=900) + [CampaignEntry("0:0900", campaign_mission(900), 0)]
    settings = BatchSettings(cal, MODES)
    with criterion(8, "determinism", None) as v:
        texts = [run_batch(entries, settings, workers=w).csv_text() for w in (1, 2, 1)]
        v.ok = texts[0] == texts[1] == texts[2]
        v.detail = (f"{len(texts[0].splitlines()) - 1} CSV rows; workers 1/2/1 runs "
                    f"{'identical' if v.ok else 'differ'}")
    assert v.ok
