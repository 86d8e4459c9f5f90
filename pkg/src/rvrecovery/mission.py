"""Closed-loop mission simulation with detection, diagnosis and recovery.

Each control step runs: sense -> attack -> estimate and detect -> (on alert:
stop recording, diagnose, reconstruct, recover with LQR) -> act -> integrate
the true vehicle. The same loop, with detection switched off, produces the
attack-free traces used for calibration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from . import state as sv
from .attacks import apply_attack
from .checkpoint import HistoryWindow, RecoveryEstimator, live_mask_for
from .control import CascadePid, LqrWeights, PidGains, RecoveryController
from .detection import DetectorConfig, cusum_update
from .diagnosis import DeltaProfile, Diagnoser
from .dynamics import VehicleParams, WindField
from .errors import ConfigError, NoSafeHistory, SimulationBlowup
from .estimation import ControlLog, correct_fast, default_process_noise, predict_fast
from .sensing import (N_SENSORS, SENSORS, STATE_OWNER, NoiseConfig, SamplingPlan, SensorId,
                      SensorSuite, sensors_of_states)

ALL_SENSORS = frozenset(SENSORS)
MODES = ("targeted", "worst-case")

# Outcome labels.
SUCCESS, FAIL, CRASH, STALL, ABORT = "success", "fail", "crash", "stall", "abort"

CRASH_SPEED = 2.0
CRASH_ANGLE = math.radians(75.0)
CRASH_ANGLE_TIME = 0.5
STALL_TIME = 30.0
SUCCESS_RADIUS = 10.0
WIND_TAU = 2.0
MAX_WIND_ESTIMATE = 15.0
# Residuals are ignored while the filter and wind estimate settle after start-up.
DETECTOR_WARMUP = 5.0


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindConfig:
    """Wind at the configuration boundary: speed (m/s) and heading (radians)."""

    mean_speed: float = 0.0
    direction: float = 0.0
    gust: float = 0.0
    tau: float = 2.0

    def field(self, seed: int) -> WindField:
        return WindField(self.mean_speed, self.direction, self.gust, self.tau, seed)


@dataclass(frozen=True, eq=False)
class MissionSpec:
    waypoints: np.ndarray
    mission_type: str = "S"
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    cruise_speed: float = 5.0
    wind: WindConfig = field(default_factory=WindConfig)
    attacks: tuple = ()
    seed: int = 0
    max_duration: float | None = None
    name: str = ""

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 3 or len(wp) < 2:
            raise ConfigError("a mission needs at least two 3-D waypoints", ["mission.waypoints"])
        if not np.all(np.isfinite(wp)):
            raise ConfigError("waypoints must be finite", ["mission.waypoints"])
        wp = wp.copy()
        wp[0, 2] = 0.0
        object.__setattr__(self, "waypoints", wp)
        if not self.cruise_speed > 0:
            raise ConfigError("cruise speed must be positive", ["mission.cruise_speed"])
        attacks = tuple(self.attacks)
        object.__setattr__(self, "attacks", attacks)
        for i, a in enumerate(attacks):
            d = float(np.linalg.norm(wp[0] - a.emitter))
            if any(d <= a.effective_range(s) for s in a.targets) and a.in_window(0.0):
                raise ConfigError("the mission start must be outside every attack's range",
                                  [f"attack.{i}.emitter"])

    @property
    def targets(self) -> frozenset:
        out = set()
        for a in self.attacks:
            out |= set(a.targets)
        return frozenset(out)

    def path_length(self) -> float:
        wp = self.waypoints
        return float(np.sum(np.linalg.norm(np.diff(wp, axis=0), axis=1)))

    def nominal_duration(self) -> float:
        wp = self.waypoints
        climb = wp[1, 2]
        return climb / 2.0 + self.path_length() / self.cruise_speed + wp[-1, 2] / 0.8 + 10.0

    def horizon(self) -> float:
        return self.max_duration if self.max_duration else 2.0 * self.nominal_duration() + 60.0

    def attack_free(self) -> "MissionSpec":
        """Same mission, wind and seed without attacks (the ground-truth twin)."""
        return MissionSpec(self.waypoints, self.mission_type, self.vehicle, self.cruise_speed,
                           self.wind, (), self.seed, self.max_duration, self.name)


@dataclass
class Calibration:
    """Everything derived from calibration ensembles that a protected mission needs."""

    delta: DeltaProfile
    detector: DetectorConfig
    window_s: float
    lqr_gain: np.ndarray | None = None
    noise: NoiseConfig = field(default_factory=NoiseConfig)


@dataclass
class RecoveryConfig:
    mode: str = "targeted"
    clear_hold: float = 2.0
    agree: int = 4
    suspect_evaluations: int = 10
    max_target_xy: float = 3.0
    max_target_z: float = 2.0
    max_velocity_error: float = 2.0
    blind_descent: float = 0.4
    lqr: LqrWeights = field(default_factory=LqrWeights)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"recovery mode must be one of {MODES}", ["recovery.mode"])


@dataclass
class Scenario:
    spec: MissionSpec
    calibration: Calibration | None = None
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    plan: SamplingPlan = field(default_factory=SamplingPlan)
    noise: NoiseConfig | None = None
    pid: PidGains = field(default_factory=PidGains)
    record_residuals: bool = False
    stop_on_alert: bool = False

    @property
    def protected(self) -> bool:
        return self.calibration is not None

    def sensor_noise(self) -> NoiseConfig:
        if self.noise is not None:
            return self.noise
        return self.calibration.noise if self.calibration is not None else NoiseConfig()


MISSION_TYPES = ("S", "MW", "C", "P1", "P2", "P3")


def mission_path(kind: str, rng: np.random.Generator, altitude: float = 10.0,
                 size: float = 50.0) -> np.ndarray:
    """Waypoints (start on the ground first) for one of the standard path shapes.

    S is a straight line, MW a few random waypoints, C a circle through eight
    points, and P1/P2/P3 a triangle, square and pentagon.
    """
    heading = rng.uniform(-math.pi, math.pi)
    if kind == "S":
        L = size * rng.uniform(1.2, 2.0)
        pts = [(L * math.cos(heading), L * math.sin(heading))]
    elif kind == "MW":
        pts, pos, h = [], np.zeros(2), heading
        for _ in range(int(rng.integers(2, 4))):
            h += rng.uniform(-1.2, 1.2)
            pos = pos + size * rng.uniform(0.6, 1.0) * np.array([math.cos(h), math.sin(h)])
            pts.append(tuple(pos))
    elif kind in ("C", "P1", "P2", "P3"):
        n = {"C": 8, "P1": 3, "P2": 4, "P3": 5}[kind]
        radius = size * (0.5 if kind == "C" else 0.6)
        centre = radius * np.array([math.cos(heading), math.sin(heading)])
        a0 = heading + math.pi
        pts = [tuple(centre + radius * np.array([math.cos(a0 + 2 * math.pi * i / n),
                                                  math.sin(a0 + 2 * math.pi * i / n)]))
               for i in range(1, n + 1)]
    else:
        raise ConfigError(f"unknown mission type {kind!r}", ["mission.type"])
    wps = [(0.0, 0.0, 0.0), (0.0, 0.0, altitude)] if kind in ("C", "P1", "P2", "P3") else [(0.0, 0.0, 0.0)]
    wps += [(x, y, altitude) for x, y in pts]
    return np.array(wps)


# ---------------------------------------------------------------------------
# Guidance
# ---------------------------------------------------------------------------

TAKEOFF, CRUISE, LAND = 0, 1, 2
PHASE_NAMES = ("takeoff", "cruise", "land")


class Guidance:
    """Waypoint follower: climb over the start, carrot-chase segments, land on the last."""

    def __init__(self, waypoints: np.ndarray, speed: float, lookahead: float = 3.0,
                 accept: float = 1.5, descent: float = 0.8, land_radius: float = 2.0):
        self.wp = np.asarray(waypoints, dtype=float)
        self.speed = speed
        self.lookahead = lookahead
        self.accept = accept
        self.descent = descent
        self.land_radius = land_radius
        self.phase = TAKEOFF
        self.index = 1

    def goal(self) -> np.ndarray:
        """True-world point the vehicle is currently heading for."""
        if self.phase == LAND:
            return self.wp[-1]
        return self.wp[self.index] if self.phase == CRUISE else \
            np.array([self.wp[0, 0], self.wp[0, 1], self.wp[1, 2]])

    def reference(self, pos: np.ndarray, descent: float | None = None):
        """Position reference and velocity feed-forward for the estimated position."""
        wp = self.wp
        if self.phase == TAKEOFF:
            h = wp[1, 2]
            if pos[2] > h - 0.5:
                self.phase = CRUISE
            else:
                return np.array([wp[0, 0], wp[0, 1], h]), np.zeros(3)
        if self.phase == CRUISE:
            b = wp[self.index]
            if np.linalg.norm(b - pos) < self.accept:
                self.index += 1
                if self.index >= len(wp):
                    self.phase = LAND
                    self.index = len(wp) - 1
        if self.phase == CRUISE:
            a, b = wp[self.index - 1], wp[self.index]
            if self.index == 1:
                a = np.array([a[0], a[1], b[2]])
            ab = b - a
            L = float(np.linalg.norm(ab))
            if L < 1e-9:
                return b.copy(), np.zeros(3)
            d = ab / L
            s = min(max(float(np.dot(pos - a, d)), 0.0) + self.lookahead, L)
            remaining = float(np.linalg.norm(b - pos))
            return a + s * d, d * self.speed * min(1.0, remaining / 6.0)
        # landing: hold altitude until above the destination, then descend
        f = wp[-1]
        rate = self.descent if descent is None else descent
        horiz = math.hypot(f[0] - pos[0], f[1] - pos[1])
        if horiz > self.land_radius:
            return np.array([f[0], f[1], pos[2]]), np.zeros(3)
        if pos[2] < 2.0:
            rate = min(rate, 0.5)
        return np.array([f[0], f[1], pos[2]]), np.array([0.0, 0.0, -rate])


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------


@dataclass
class Event:
    t: float
    kind: str
    detail: str = ""


@dataclass
class MissionTrace:
    """Per-step time series plus mission-level bookkeeping."""

    dt: float
    t: np.ndarray
    true: np.ndarray
    estimate: np.ndarray
    readings: np.ndarray
    control: np.ndarray
    recovering: np.ndarray
    isolated: np.ndarray
    phase: np.ndarray
    residuals: np.ndarray | None
    fresh_sensors: np.ndarray
    events: list
    mode: str
    terminal: str
    completion_time: float | None
    final_position: np.ndarray
    destination: np.ndarray
    impact_speed: float | None = None
    detected_at: float | None = None
    verdicts: list = field(default_factory=list)
    masked_alarms: int = 0
    alarms: int = 0
    spec: MissionSpec | None = None

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def first_verdict(self):
        return self.verdicts[0][1] if self.verdicts else None

    def sensor_errors(self) -> np.ndarray:
        """Consecutive-sample reading differences per state (NaN where not fresh)."""
        return sensor_errors(self.readings, self.fresh_sensors)


def sensor_errors(readings: np.ndarray, fresh_sensors: np.ndarray) -> np.ndarray:
    out = np.full(readings.shape, np.nan)
    for s in SENSORS:
        cols = np.flatnonzero(STATE_OWNER == int(s))
        ks = np.flatnonzero(fresh_sensors[:, int(s)])
        if len(ks) < 2:
            continue
        d = readings[ks[1:]][:, cols] - readings[ks[:-1]][:, cols]
        if s == SensorId.GYROSCOPE:
            d[:, :3] = sv.wrap_angle(d[:, :3])
        out[np.ix_(ks[1:], cols)] = np.abs(d)
    return out


def _isolated_bits(sensors) -> int:
    return sum(1 << int(s) for s in sensors)


def bits_to_sensors(bits: int) -> frozenset:
    return frozenset(s for s in SENSORS if bits >> int(s) & 1)


# ---------------------------------------------------------------------------
# Mission loop
# ---------------------------------------------------------------------------


def _phase_tables(suite: SensorSuite, R: np.ndarray):
    """Per-phase fresh channel index arrays for the measurement update."""
    period = suite._period
    idx, rv = [], []
    for k in range(period):
        m = suite._mask_table[k]
        ii = np.flatnonzero(m).astype(np.int64)
        idx.append(ii)
        rv.append(R[ii])
    return period, idx, rv


def run_mission(scenario: Scenario) -> MissionTrace:
    """Fly one mission; deterministic given the scenario (including its seed)."""
    spec = scenario.spec
    p = spec.vehicle
    pv = p.as_array()
    plan = scenario.plan
    dt = plan.dt
    n_max = int(math.ceil(spec.horizon() / dt))
    seed = spec.seed
    noise = scenario.sensor_noise()
    sensor_rng = np.random.default_rng([seed, 1])
    suite = SensorSuite(plan, noise, sensor_rng, n_max + 1)
    wind = spec.wind.field(int(np.random.default_rng([seed, 2]).integers(2**31))).sample(n_max + 1, dt)
    attacks = list(spec.attacks)

    sigma = noise.sigma()
    R = np.maximum(sigma ** 2, 1e-8)
    Q = np.diag(default_process_noise())
    period, idx_tab, r_tab = _phase_tables(suite, R)
    warmup_steps = int(round(DETECTOR_WARMUP / dt))
    # running wind estimate used by the filter's model; recovery freezes the last trusted value
    wind_hat = np.zeros(3)
    wind_gain = dt / WIND_TAU * p.mass / p.drag if p.drag > 0 else 0.0

    protected = scenario.protected
    rc_cfg = scenario.recovery
    mode = rc_cfg.mode
    cal = scenario.calibration
    if protected:
        det_cfg = cal.detector
        tau_i, drift, tau_c = det_cfg.tau_inst, det_cfg.drift, det_cfg.tau_cusum
        hw = HistoryWindow.for_duration(cal.window_s, dt)
        hold_steps = int(round(rc_cfg.clear_hold / dt))
        diag_period = plan.decimation(plan.slowest())
        diagnoser = Diagnoser(cal.delta, diag_period, rc_cfg.agree)
        if cal.lqr_gain is not None:
            lqr = RecoveryController.from_gain(cal.lqr_gain, p, mode)
        else:
            lqr = RecoveryController.synthesize(p, dt, rc_cfg.lqr, mode)
        rec_est = RecoveryEstimator(p, dt, np.diag(Q), R, idx_tab)
    S = np.zeros(sv.N_STATES)
    inst = np.zeros(sv.N_STATES, dtype=bool)
    cus = np.zeros(sv.N_STATES, dtype=bool)

    guidance = Guidance(spec.waypoints, spec.cruise_speed)
    pid = CascadePid(p, scenario.pid)
    log = ControlLog(0, n_max + 1)

    # trace buffers
    T_true = np.empty((n_max + 1, sv.N_STATES))
    T_est = np.empty((n_max + 1, sv.N_STATES))
    T_read = np.empty((n_max + 1, sv.N_STATES))
    T_u = np.empty((n_max + 1, 4))
    T_rec = np.zeros(n_max + 1, dtype=bool)
    T_iso = np.zeros(n_max + 1, dtype=np.int8)
    T_phase = np.zeros(n_max + 1, dtype=np.int8)
    T_fresh = np.zeros((n_max + 1, N_SENSORS), dtype=bool)
    T_res = np.full((n_max + 1, sv.N_STATES), np.nan) if scenario.record_residuals else None
    events: list[Event] = []
    verdicts: list = []

    x_true = dyn.hover_state(p, spec.waypoints[0])
    x_true[sv.VEL] = 0.0
    reported = np.full(sv.N_STATES, np.nan)
    x_est = None
    P = None
    u_prev = dyn.hover_control(p)
    airborne = False
    terminal = None
    completion = None
    impact = None
    tilt_time = 0.0
    best_dist = np.inf
    best_k = 0
    goal_key = None
    detected_at = None
    masked = 0
    alarms = 0

    recovering = False
    hs = None
    x_rec = None
    P_rec = None
    P_anchor = None
    n_commits = 0
    live = np.zeros(sv.N_STATES, dtype=bool)
    isolated = ALL_SENSORS
    quiet_since = 0
    inflation_k = 0
    suspect_streak = 0
    first_reason = None
    first_states = ()
    verdict_done = False
    n_stored = 0

    for k in range(n_max + 1):
        t = k * dt
        # -- sense and attack ---------------------------------------------
        frame = suite.sample(x_true, k)
        if attacks:
            frame = apply_attack(frame, attacks, t, x_true[sv.POS], plan)
        fm = suite._mask_table[k % period]
        reported[fm] = frame.values[fm]
        T_read[k] = reported
        T_fresh[k] = frame.fresh
        if protected:
            diagnoser.push(reported, frame.fresh, t)

        # -- estimate and detect ------------------------------------------
        idx = idx_tab[k % period]
        if x_est is None:
            x_pred = _initial_estimate(reported)
            P_pred = np.diag(R)
        else:
            x_pred, P_pred = predict_fast(x_est, P, u_prev, pv, Q, dt, wind_hat)
        r = np.full(sv.N_STATES, np.nan)
        d = x_pred[idx] - reported[idx]
        r[idx] = np.abs(d)
        ang = (idx >= sv.ROLL) & (idx <= sv.YAW)
        if ang.any():
            r[idx[ang]] = np.abs(sv.wrap_angle(d[ang]))
        if k < warmup_steps:
            r[:] = np.nan
        if T_res is not None:
            T_res[k] = r
        alarm = False
        if protected and k > 0:
            alarm = cusum_update(S, r, drift, tau_i, tau_c, inst, cus)
        x_est, P = correct_fast(x_pred, P_pred, reported[idx], idx, r_tab[k % period])
        if wind_gain and not recovering and not alarm:
            wind_hat += wind_gain * (reported[sv.ACC] - x_pred[sv.ACC])
            speed = float(np.linalg.norm(wind_hat))
            if speed > MAX_WIND_ESTIMATE:
                wind_hat *= MAX_WIND_ESTIMATE / speed

        # -- mode logic ---------------------------------------------------
        if protected and not recovering and alarm:
            alarms += 1
            if detected_at is None:
                detected_at = t
            first_reason = "instant" if inst.any() else "cusum"
            first_states = tuple(int(i) for i in np.flatnonzero(inst | cus))
            events.append(Event(t, "alert", f"{first_reason}:" + ",".join(sv.STATE_NAMES[i] for i in first_states)))
            if scenario.stop_on_alert:
                _store(k, T_true, T_est, T_read, T_u, x_true, x_est, reported, u_prev)
                n_stored = k + 1
                terminal = "stopped"
                break
            try:
                hs = hw.alert()
            except NoSafeHistory:
                events.append(Event(t, "abort", "no committed history"))
                terminal = ABORT
                _store(k, T_true, T_est, T_read, T_u, x_true, x_est, reported, u_prev)
                n_stored = k + 1
                break
            recovering = True
            isolated = ALL_SENSORS
            live = np.zeros(sv.N_STATES, dtype=bool)
            rec_est.wind = wind_hat.copy()
            x_rec, P_rec = rec_est.replay(hs.anchor, P_anchor, hs.anchor_step, k, log, T_read, live)
            diagnoser.reset_episode(t)
            verdict_done = False
            S[:] = 0.0
            quiet_since = k
            inflation_k = k
            suspect_streak = 0
        elif recovering:
            x_rec, P_rec = rec_est.step(x_rec, P_rec, u_prev, reported, k, live)
            if alarm:
                # the running filter follows the raw readings; restart it on every alarm
                x_est = _initial_estimate(reported)
                P = np.diag(R)
                S[:] = 0.0
                quiet_since = k
            if k % diag_period == 0:
                res = diagnoser.step_episode(k, t)
                if res is not None and not verdict_done:
                    verdict_done = True
                    verdicts.append((t, res.malicious_sensors))
                    events.append(Event(t, "verdict", _fmt(res.malicious_sensors)))
                    chosen = res.malicious_sensors
                    if not chosen:
                        if first_reason == "instant" and mode == "targeted":
                            masked += 1
                            events.append(Event(t, "masked", "no sensor shows error inflation"))
                            recovering = False
                            hw.restart()
                            S[:] = 0.0
                            pid.reset()
                        else:
                            chosen = sensors_of_states(first_states)
                    if recovering and mode == "targeted" and chosen != isolated:
                        isolated = frozenset(chosen)
                        live = live_mask_for(isolated)
                        x_rec, P_rec = rec_est.replay(hs.anchor, P_anchor, hs.anchor_step, k, log,
                                                      T_read, live)
                if recovering:
                    # isolated sensors stay suspect while inflation persists over consecutive windows
                    cur = diagnoser.evaluate(t)
                    if cur is not None and cur.malicious_sensors & isolated:
                        suspect_streak += 1
                        if suspect_streak >= rc_cfg.suspect_evaluations:
                            inflation_k = k
                    else:
                        suspect_streak = 0
            if recovering and k - quiet_since >= hold_steps and k - inflation_k >= hold_steps:
                events.append(Event(t, "cleared", ""))
                recovering = False
                # the reconstructed state anchors any alert raised before a new window commits
                hw.restart(k, x_rec, u_prev)
                P_anchor = P_rec.copy()
                S[:] = 0.0
                pid.reset()

        # -- control ------------------------------------------------------
        if recovering:
            x_ctl = x_rec
            blind = not (live[sv.Z] or live[sv.ALT])
            pos_ref, vel_ff = guidance.reference(x_ctl[sv.POS], rc_cfg.blind_descent if blind else None)
            tgt = np.zeros(12)
            dxy = pos_ref[:2] - x_ctl[sv.POS][:2]
            nxy = math.hypot(dxy[0], dxy[1])
            if nxy > rc_cfg.max_target_xy:
                dxy *= rc_cfg.max_target_xy / nxy
            tgt[0:2] = x_ctl[sv.POS][:2] + dxy
            tgt[2] = x_ctl[sv.Z] + np.clip(pos_ref[2] - x_ctl[sv.Z], -rc_cfg.max_target_z, rc_cfg.max_target_z)
            dv = vel_ff - x_ctl[sv.VEL]
            nv = float(np.linalg.norm(dv))
            if nv > rc_cfg.max_velocity_error:
                dv *= rc_cfg.max_velocity_error / nv
            tgt[3:6] = x_ctl[sv.VEL] + dv
            u = lqr.action(x_ctl, tgt)
        else:
            x_ctl = x_est
            pos_ref, vel_ff = guidance.reference(x_ctl[sv.POS])
            u = pid(x_ctl, pos_ref, vel_ff, 0.0, dt)
            if protected and hw.recording:
                hw.record(k, x_est, u)
                if hw.commits != n_commits:
                    n_commits = hw.commits
                    P_anchor = np.diag(P).copy()
        log.append(k, u)
        T_true[k] = x_true
        T_est[k] = x_ctl
        T_u[k] = u
        T_rec[k] = recovering
        T_iso[k] = _isolated_bits(isolated) if recovering else 0
        T_phase[k] = guidance.phase
        n_stored = k + 1

        # -- integrate the true vehicle -----------------------------------
        try:
            x_true = dyn.step_fast(x_true, u, pv, dt, wind[k])
        except SimulationBlowup:
            terminal = CRASH
            events.append(Event(t, "crash", "simulation blow-up"))
            break
        u_prev = u
        if not airborne:
            if x_true[sv.Z] > 0.5:
                airborne = True
            elif x_true[sv.Z] < 0.0:
                x_true[sv.Z] = 0.0
                x_true[sv.ALT] = 0.0
                x_true[sv.VZ] = max(x_true[sv.VZ], 0.0)
        else:
            if x_true[sv.Z] <= 0.0:
                impact = abs(float(x_true[sv.VZ]))
                completion = (k + 1) * dt
                terminal = CRASH if impact > CRASH_SPEED else "landed"
                events.append(Event(completion, "touchdown", f"{impact:.2f} m/s"))
                break
        if abs(x_true[sv.ROLL]) > CRASH_ANGLE or abs(x_true[sv.PITCH]) > CRASH_ANGLE:
            tilt_time += dt
            if tilt_time >= CRASH_ANGLE_TIME:
                terminal = CRASH
                events.append(Event(t, "crash", "attitude limit exceeded"))
                break
        else:
            tilt_time = 0.0
        key = (guidance.phase, guidance.index)
        if key != goal_key:
            goal_key = key
            best_dist = np.inf
            best_k = k
        goal = guidance.goal()
        if guidance.phase == LAND:
            goal = np.array([goal[0], goal[1], 0.0])
        dist = float(np.linalg.norm(x_true[sv.POS] - goal))
        if dist < best_dist - 0.05:
            best_dist = dist
            best_k = k
        elif (k - best_k) * dt > STALL_TIME:
            terminal = STALL
            events.append(Event(t, "stall", f"no progress towards waypoint for {STALL_TIME:.0f} s"))
            break
    else:
        terminal = STALL
        events.append(Event(n_max * dt, "timeout", ""))

    n = n_stored
    final = x_true[sv.POS].copy()
    trace = MissionTrace(
        dt=dt, t=np.arange(n) * dt, true=T_true[:n], estimate=T_est[:n], readings=T_read[:n],
        control=T_u[:n], recovering=T_rec[:n], isolated=T_iso[:n], phase=T_phase[:n],
        residuals=None if T_res is None else T_res[:n], fresh_sensors=T_fresh[:n], events=events,
        mode=mode if protected else "unprotected", terminal=terminal, completion_time=completion,
        final_position=final, destination=np.array([*spec.waypoints[-1][:2], 0.0]),
        impact_speed=impact, detected_at=detected_at, verdicts=verdicts, masked_alarms=masked,
        alarms=alarms, spec=spec)
    return trace


def _initial_estimate(reading: np.ndarray) -> np.ndarray:
    """Full state from one reading vector, taking height from the barometer."""
    x = reading.copy()
    x[sv.Z] = reading[sv.ALT]
    return x


def _store(k, T_true, T_est, T_read, T_u, x_true, x_est, reported, u):
    T_true[k] = x_true
    T_est[k] = x_est
    T_read[k] = reported
    T_u[k] = u


def _fmt(sensors) -> str:
    return "+".join(s.short for s in sorted(sensors)) or "none"
