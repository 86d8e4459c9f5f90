from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import short_mission
from rvrecovery import state as sv
from rvrecovery.attacks import AttackSpec, BiasProfile
from rvrecovery.batch import sda_mission
from rvrecovery.errors import ConfigError
from rvrecovery.metrics import mission_outcome
from rvrecovery.mission import SUCCESS, RecoveryConfig, Scenario, bits_to_sensors, run_mission
from rvrecovery.sensing import SensorId


def gps_spoof(seed=0):
    atk = AttackSpec({"gps"}, {"gps": BiasProfile("sda")},
                     emitter=[30.0, 0.0, 5.0], activation_range=6.0, seed=seed)
    return short_mission(seed, (atk,), length=45.0)


class TestAttackFree:
    def test_quiescent_protected_mission(self, stored_calibration):
        tr = run_mission(Scenario(short_mission(3), stored_calibration))
        assert tr.terminal == "landed" and tr.detected_at is None
        assert not tr.recovering.any()
        assert mission_outcome(tr)[0] == SUCCESS

    def test_time_grid_and_finite_states(self, stored_calibration):
        tr = run_mission(Scenario(short_mission(4), stored_calibration))
        assert np.all(np.diff(tr.t) > 0)
        assert np.allclose(np.diff(tr.t), tr.dt)
        assert np.all(np.isfinite(tr.true))
        assert np.all(np.abs(tr.true[:, sv.ANGLES]) <= np.pi)

    def test_altitude_agrees_with_z(self):
        tr = run_mission(Scenario(short_mission(5)))
        assert np.max(np.abs(tr.true[:, sv.ALT] - tr.true[:, sv.Z])) < 1e-6

    def test_rerun_is_bit_identical(self, stored_calibration):
        a = run_mission(Scenario(gps_spoof(1), stored_calibration))
        b = run_mission(Scenario(gps_spoof(1), stored_calibration))
        assert np.array_equal(a.true, b.true) and np.array_equal(a.control, b.control)


class TestRecovery:
    def test_gps_spoof_isolated_and_recovered(self, stored_calibration):
        tr = run_mission(Scenario(gps_spoof(), stored_calibration))
        assert tr.detected_at is not None
        assert tr.first_verdict == {SensorId.GPS}
        k = np.flatnonzero(tr.recovering)
        # everything is isolated until the verdict latches, then only the diagnosed sensor
        assert bits_to_sensors(int(tr.isolated[k[0]])) == set(SensorId)
        assert bits_to_sensors(int(tr.isolated[k[-1]])) == {SensorId.GPS}
        assert mission_outcome(tr)[0] == SUCCESS

    def test_unprotected_mission_is_misled(self):
        spec = gps_spoof()
        tr = run_mission(Scenario(spec))
        twin = run_mission(Scenario(spec.attack_free()))
        n = min(tr.n, twin.n)
        assert not tr.recovering.any()
        assert np.max(np.linalg.norm(tr.true[:n, sv.POS] - twin.true[:n, sv.POS], axis=1)) > 5.0

    def test_worst_case_isolates_everything(self, stored_calibration):
        tr = run_mission(Scenario(gps_spoof(), stored_calibration, RecoveryConfig(mode="worst-case")))
        k = np.flatnonzero(tr.recovering)
        assert k.size and all(len(bits_to_sensors(int(b))) == 5 for b in tr.isolated[k])

    def test_recovery_returns_to_normal_control(self, stored_calibration):
        tr = run_mission(Scenario(gps_spoof(), stored_calibration))
        kinds = [e.kind for e in tr.events]
        assert "cleared" in kinds and kinds.index("cleared") > kinds.index("alert")
        assert not tr.recovering[-1]


class TestSpecValidation:
    def test_attack_in_range_at_start_rejected(self):
        atk = AttackSpec({"gps"}, emitter=[1.0, 0.0, 0.0], activation_range=50.0)
        with pytest.raises(ConfigError):
            short_mission(0, (atk,))

    def test_campaign_emitters_clear_of_start(self):
        for seed in range(20):
            spec = sda_mission(seed, 2)
            assert np.linalg.norm(spec.attacks[0].emitter - spec.waypoints[0]) > 26.0
