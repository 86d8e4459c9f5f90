from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rvrecovery import state as sv
from rvrecovery.attacks import AttackSpec, BiasProfile, StealthProfile, apply_attack, stealth_bias
from rvrecovery.errors import ConfigError
from rvrecovery.sensing import NoiseConfig, SamplingPlan, SensorId, sample_sensors, states_for_sensor

PLAN = SamplingPlan()


def frame_at(t=0.0, x=None):
    x = np.zeros(sv.N_STATES) if x is None else x
    return sample_sensors(x, t, PLAN, NoiseConfig.zero(), np.random.default_rng(0))


def gps_shift(magnitude=50.0):
    return AttackSpec({"gps"}, {"gps": BiasProfile("constant", magnitude, direction=[1, 0, 0])})


class TestApplyAttack:
    def test_out_of_range_leaves_frame(self):
        f = frame_at()
        out = apply_attack(f, gps_shift(), 0.0, [250.0, 0.0, 0.0], PLAN)
        assert np.array_equal(out.values, f.values)

    def test_gps_shift_in_range(self):
        out = apply_attack(frame_at(), gps_shift(), 0.0, [0.0, 0.0, 0.0], PLAN)
        assert out.values[sv.X] == 50.0
        assert np.all(out.values[1:] == 0.0)

    def test_empty_target_set_is_identity(self):
        f = frame_at()
        assert np.array_equal(apply_attack(f, AttackSpec(), 0.0, np.zeros(3), PLAN).values, f.values)

    def test_outside_window_unchanged(self):
        spec = AttackSpec({"gps"}, {"gps": BiasProfile("constant", 10.0, direction=[1, 0, 0])},
                          windows=((5.0, 6.0),))
        f = frame_at()
        assert np.array_equal(apply_attack(f, spec, 0.0, np.zeros(3), PLAN).values, f.values)

    def test_held_channels_not_rebiased(self):
        f = sample_sensors(np.zeros(sv.N_STATES), 0.0025, PLAN, NoiseConfig.zero(), np.random.default_rng(0),
                           frame_at())
        assert not f.fresh[SensorId.GPS]
        out = apply_attack(f, gps_shift(), 0.0025, np.zeros(3), PLAN)
        assert np.array_equal(out.values, f.values)

    def test_untargeted_channels_bit_identical(self):
        rng = np.random.default_rng(1)
        f = sample_sensors(rng.normal(size=sv.N_STATES), 0.0, PLAN, NoiseConfig(), rng)
        spec = AttackSpec({"gyro", "mag"}, seed=4)
        out = apply_attack(f, spec, 0.0, np.zeros(3), PLAN)
        for s in (SensorId.GPS, SensorId.ACCELEROMETER, SensorId.BAROMETER):
            idx = list(states_for_sensor(s))
            assert np.array_equal(out.values[idx], f.values[idx])

    def test_accel_range_capped(self):
        spec = AttackSpec({"accel"}, activation_range=100.0)
        assert spec.effective_range("accel") == 26.0


class TestLimits:
    @pytest.mark.parametrize("sensor,magnitude", [("gps", 51.0), ("accel", 7.0), ("baro", 9.0)])
    def test_constant_bias_over_limit_rejected(self, sensor, magnitude):
        with pytest.raises(ConfigError):
            AttackSpec({sensor}, {sensor: BiasProfile("constant", magnitude)})

    def test_unbounded_ramp_rejected(self):
        sp = StealthProfile("A2", 0.0, 0.1)
        with pytest.raises(ConfigError):
            AttackSpec({"gps"}, {"gps": BiasProfile("stealth", stealth=sp)})

    @settings(max_examples=50, deadline=None)
    @given(st.sampled_from(["gps", "gyro", "accel", "mag", "baro"]), st.integers(0, 10_000), st.integers(0, 500))
    def test_sda_bias_within_limits(self, sensor, seed, j):
        spec = AttackSpec({sensor}, seed=seed)
        s = SensorId.parse(sensor)
        lo, hi = spec.sda_band(s)
        reading = np.array([0.2, 0.1, -0.4]) if s == SensorId.MAGNETOMETER else np.zeros(len(states_for_sensor(s)))
        b = spec.bias(s, 1.0, reading, j)
        if s == SensorId.MAGNETOMETER:
            assert np.linalg.norm(b) <= 2 * np.linalg.norm(reading[:2]) + 1e-12
        else:
            assert lo - 1e-9 <= np.linalg.norm(b) <= hi + 1e-9


class TestStealthProfiles:
    def test_ramp_origin(self):
        assert stealth_bias(StealthProfile("A2", 0.0, 0.1, onset=3.0), 3.0, np.random.default_rng(0)) == 0.0

    def test_ramp_after_ten_seconds(self):
        v = stealth_bias(StealthProfile("A2", 0.0, 0.1, onset=3.0), 13.0, np.random.default_rng(0))
        assert v == pytest.approx(1.0)

    def test_intermittent_off_phase(self):
        sp = StealthProfile("A3", 2.0, duty=0.5, period=2.0, onset=1.0)
        assert stealth_bias(sp, 2.5, np.random.default_rng(0)) == 0.0
        assert stealth_bias(sp, 1.5, np.random.default_rng(0)) == 2.0

    def test_random_profile_bounded_and_seeded(self):
        sp = StealthProfile("A1", bound=0.5)
        a = [float(stealth_bias(sp, t, np.random.default_rng(7))[0]) for t in range(5)]
        b = [float(stealth_bias(sp, t, np.random.default_rng(7))[0]) for t in range(5)]
        assert a == b and all(abs(v) <= 0.5 for v in a)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 5), st.floats(0, 1), st.lists(st.floats(0, 100), min_size=2, max_size=20))
    def test_ramp_non_decreasing(self, base, slope, times):
        sp = StealthProfile("A2", base, slope)
        vals = [float(sp.value(t)) for t in sorted(times)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-3, 3), st.floats(0, 100))
    def test_persistent_constant(self, base, t):
        assert float(StealthProfile("persistent", base).value(t)) == base

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            StealthProfile("A9")
