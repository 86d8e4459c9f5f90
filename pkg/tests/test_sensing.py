from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rvrecovery import state as sv
from rvrecovery.errors import ConfigError, MissingBootstrap
from rvrecovery.sensing import (
    SENSORS,
    NoiseConfig,
    SamplingPlan,
    SensorId,
    SensorSuite,
    align_streams,
    format_sensors,
    parse_sensor_set,
    sample_sensors,
    scatter,
    sensors_of_states,
    states_for_sensor,
)

PLAN = SamplingPlan()


class TestStateMapping:
    def test_gps_has_six_states(self):
        assert states_for_sensor(SensorId.GPS) == (0, 1, 2, 3, 4, 5)

    def test_barometer_owns_altitude(self):
        assert states_for_sensor("baro") == (sv.ALT,)

    def test_union_covers_all_states_disjointly(self):
        idx = [i for s in SENSORS for i in states_for_sensor(s)]
        assert sorted(idx) == list(range(sv.N_STATES))

    def test_inverse_mapping(self):
        assert sensors_of_states([0, 9, 18]) == {SensorId.GPS, SensorId.GYROSCOPE, SensorId.BAROMETER}

    def test_format_and_parse_round_trip(self):
        s = frozenset({SensorId.MAGNETOMETER, SensorId.GPS})
        assert parse_sensor_set(format_sensors(s)) == s
        assert format_sensors([]) == "none"

    def test_unknown_sensor(self):
        with pytest.raises(ConfigError):
            SensorId.parse("lidar")


class TestSamplingPlan:
    def test_target_is_fastest_rate(self):
        assert PLAN.target_hz == 400.0
        assert PLAN.dt == 0.0025

    def test_rates_must_divide_target(self):
        with pytest.raises(ConfigError):
            SamplingPlan({"gps": 7.0, "gyro": 400, "accel": 400, "mag": 100, "baro": 100})


class TestSampleSensors:
    def test_zero_noise_reproduces_truth(self):
        x = np.arange(sv.N_STATES, dtype=float)
        f = sample_sensors(x, 0.0, PLAN, NoiseConfig.zero(), np.random.default_rng(0))
        assert np.array_equal(f.values, x)

    def test_baro_held_off_grid(self):
        rng = np.random.default_rng(0)
        x = np.zeros(sv.N_STATES)
        f0 = sample_sensors(x, 0.0, PLAN, NoiseConfig(), rng)
        f1 = sample_sensors(x + 1, 0.0025, PLAN, NoiseConfig(), rng, f0)
        assert not f1.fresh[SensorId.BAROMETER]
        assert f1.values[sv.ALT] == f0.values[sv.ALT]
        assert f1.fresh[SensorId.GYROSCOPE]

    def test_fresh_counts_over_one_second(self):
        rng = np.random.default_rng(0)
        frame = None
        counts = np.zeros(len(SENSORS), dtype=int)
        for k in range(400):
            frame = sample_sensors(np.zeros(sv.N_STATES), k * PLAN.dt, PLAN, NoiseConfig(), rng, frame)
            counts += frame.fresh
        assert counts[SensorId.GYROSCOPE] == 400
        assert counts[SensorId.BAROMETER] == 100
        assert counts[SensorId.GPS] == 10

    def test_deterministic_given_seed(self):
        a = sample_sensors(np.ones(sv.N_STATES), 0.0, PLAN, NoiseConfig(), np.random.default_rng(5))
        b = sample_sensors(np.ones(sv.N_STATES), 0.0, PLAN, NoiseConfig(), np.random.default_rng(5))
        assert np.array_equal(a.values, b.values)

    def test_suite_matches_rate_gating(self):
        suite = SensorSuite(PLAN, NoiseConfig.zero(), np.random.default_rng(0), 8)
        fresh = [suite.sample(np.full(sv.N_STATES, float(k)), k).fresh.copy() for k in range(8)]
        assert [f[SensorId.BAROMETER] for f in fresh] == [True, False, False, False] * 2
        assert suite.values[sv.ALT] == 4.0


class TestAlignStreams:
    def test_baro_duplicated_four_times(self):
        streams = {s: [(0.0, np.zeros(len(states_for_sensor(s))))] for s in SENSORS}
        streams[SensorId.BAROMETER] = [(k / 100, [float(k)]) for k in range(3)]
        values, fresh = align_streams(streams, 0.0, 12, 400.0)
        assert list(values[:, sv.ALT]) == [0.0] * 4 + [1.0] * 4 + [2.0] * 4
        assert list(fresh[:, SensorId.BAROMETER]) == [True, False, False, False] * 3

    def test_identity_at_target_rate(self):
        rng = np.random.default_rng(0)
        data = rng.normal(size=(6, sv.N_STATES))
        streams = {s: [(k / 400, data[k, list(states_for_sensor(s))]) for k in range(6)] for s in SENSORS}
        values, fresh = align_streams(streams, 0.0, 6, 400.0)
        assert np.array_equal(values, data)
        assert fresh.all()

    def test_single_sample_held(self):
        streams = {s: [(0.0, np.full(len(states_for_sensor(s)), 3.0))] for s in SENSORS}
        values, _ = align_streams(streams, 0.0, 10, 400.0)
        assert np.all(values[:, sv.ALT] == 3.0)

    def test_missing_bootstrap(self):
        streams = {s: [(0.0, np.zeros(len(states_for_sensor(s))))] for s in SENSORS if s != SensorId.GPS}
        with pytest.raises(MissingBootstrap):
            align_streams(streams, 0.0, 4, 400.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=sv.N_STATES, max_size=sv.N_STATES))
def test_scatter_then_project_is_identity(vals):
    x = np.array(vals)
    readings = {s: x[list(states_for_sensor(s))] for s in SENSORS}
    back = scatter(readings)
    for s in SENSORS:
        assert np.array_equal(back[list(states_for_sensor(s))], readings[s])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_alignment_never_fabricates_values(n_samples, seed):
    rng = np.random.default_rng(seed)
    streams = {}
    for s in SENSORS:
        times = np.sort(rng.uniform(0, 0.05, n_samples))
        times[0] = 0.0
        streams[s] = [(t, rng.normal(size=len(states_for_sensor(s)))) for t in times]
    values, _ = align_streams(streams, 0.0, 25, 400.0)
    for s in SENSORS:
        idx = list(states_for_sensor(s))
        seen = {tuple(np.asarray(r)) for _, r in streams[s]}
        assert all(tuple(v) in seen for v in values[:, idx])
