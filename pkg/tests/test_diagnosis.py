from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rvrecovery import state as sv
from rvrecovery.diagnosis import (
    BENIGN,
    MALICIOUS,
    DeltaProfile,
    Diagnoser,
    ErrorWindow,
    FactorGraph,
    brute_force_posterior,
    brute_force_posterior_batch,
    calibrate_delta,
    factor_eval,
    infer,
    validate_delta,
)
from rvrecovery.errors import DomainError, InsufficientData
from rvrecovery.sensing import SENSORS, SensorId, sensors_of_states, states_for_sensor

N = sv.N_STATES
PROFILE = DeltaProfile(np.ones(N))


def window_with(above_cur=(), above_prev=()):
    cur, prev = np.zeros(N), np.zeros(N)
    cur[list(above_cur)] = 2.0
    prev[list(above_prev)] = 2.0
    return ErrorWindow(cur, prev)


class TestFactor:
    def test_both_inflated_malicious(self):
        assert factor_eval(6.0, 6.0, MALICIOUS, 5.2) == 1

    def test_single_inflation_ignored(self):
        assert factor_eval(0.0, 6.0, MALICIOUS, 5.2) == 0

    def test_benign_complement(self):
        assert factor_eval(0.0, 0.0, BENIGN, 5.2) == 1

    def test_negative_error_rejected(self):
        with pytest.raises(DomainError):
            factor_eval(-1.0, 0.0, BENIGN, 1.0)


class TestInfer:
    def test_all_below_delta(self):
        assert infer(window_with(), PROFILE).empty

    def test_gps_attribution(self):
        res = infer(window_with([sv.X], [sv.X]), PROFILE)
        assert res.malicious_sensors == {SensorId.GPS}

    def test_incomplete_window_rejected(self):
        w = window_with()
        w.e_cur[3] = np.nan
        with pytest.raises(DomainError):
            infer(w, PROFILE)

    def test_three_state_graph_matches_enumeration(self):
        prof = DeltaProfile([1.0, 2.0, 3.0])
        w = ErrorWindow([1.5, 2.5, 1.0], [1.2, 1.0, 4.0])
        assert np.array_equal(infer(w, prof).posterior, brute_force_posterior(w, prof))

    def test_window_from_four_states(self):
        s = [np.full(N, v) for v in (0.0, 1.0, 3.0, 6.0)]
        w = ErrorWindow.from_states(*s)
        assert np.all(w.e_cur == 3.0) and np.all(w.e_prev == 1.0)


class TestBruteForce:
    def test_uninformative_graph(self):
        g = FactorGraph(3)
        for i in range(3):
            g.add_factor((i,), [1.0, 1.0])
        assert np.allclose(g.marginals()[:, 1], 0.5)

    def test_independent_factors_multiply(self):
        g = FactorGraph(2)
        g.add_factor((0,), [0.2, 0.8])
        g.add_factor((1,), [0.6, 0.4])
        z = sum(g.joint((a, b)) for a in (0, 1) for b in (0, 1))
        assert g.joint((1, 0)) / z == pytest.approx(0.8 * 0.6)

    def test_dimension_bound(self):
        prof = DeltaProfile(np.ones(21))
        w = ErrorWindow(np.zeros(21), np.zeros(21))
        with pytest.raises(DomainError):
            brute_force_posterior(w, prof)

    def test_random_windows_match_exactly(self):
        rng = np.random.default_rng(0)
        windows = [ErrorWindow(rng.uniform(0, 2, N), rng.uniform(0, 2, N)) for _ in range(500)]
        bf = brute_force_posterior_batch(windows, PROFILE)
        fg = np.array([infer(w, PROFILE).posterior for w in windows])
        assert np.array_equal(bf, fg)


errors = st.lists(st.floats(0, 3), min_size=N, max_size=N).map(np.array)


@settings(max_examples=60, deadline=None)
@given(errors, errors)
def test_posterior_is_zero_or_one_and_matches_oracle(cur, prev):
    w = ErrorWindow(cur, prev)
    post = infer(w, PROFILE).posterior
    assert set(np.unique(post)) <= {0.0, 1.0}
    assert np.array_equal(post, brute_force_posterior(w, PROFILE))


@settings(max_examples=60, deadline=None)
@given(errors, errors, st.integers(0, N - 1))
def test_adding_inflated_pair_is_monotone(cur, prev, i):
    before = infer(ErrorWindow(cur, prev), PROFILE).malicious_sensors
    cur2, prev2 = cur.copy(), prev.copy()
    cur2[i] = prev2[i] = 5.0
    assert before <= infer(ErrorWindow(cur2, prev2), PROFILE).malicious_sensors


@settings(max_examples=60, deadline=None)
@given(st.integers(0, N - 1), st.booleans())
def test_single_spike_never_malicious(i, in_current):
    w = window_with([i], []) if in_current else window_with([], [i])
    assert infer(w, PROFILE).empty


@settings(max_examples=60, deadline=None)
@given(errors, errors)
def test_attribution_is_image_of_states(cur, prev):
    res = infer(ErrorWindow(cur, prev), PROFILE)
    assert res.malicious_sensors == sensors_of_states(res.malicious_states)


class TestDeltaCalibration:
    def test_constant_stream(self):
        traces = [np.full((100, 3), 0.7) for _ in range(15)]
        assert np.allclose(calibrate_delta(traces, min_samples=100).delta, 0.7)

    def test_median_plus_k_std(self):
        rng = np.random.default_rng(0)
        traces = [np.abs(rng.normal(0, 1, (200, 2))) for _ in range(15)]
        pooled = np.concatenate(traces)
        expected = np.median(pooled, axis=0) + 3 * np.std(pooled, axis=0)
        assert np.allclose(calibrate_delta(traces).delta, expected)

    def test_held_out_coverage_matches_half_normal(self):
        # |N(0,1)| has median 0.6745 and stdev 0.6028, so k = 3 covers P(|Z| < 2.483) = 0.987
        rng = np.random.default_rng(1)
        make = lambda: [np.abs(rng.normal(0, 1, (2000, 4))) for _ in range(15)]
        v = validate_delta(calibrate_delta(make()), make())
        assert np.allclose(v.coverage, 0.987, atol=0.003)

    def test_too_few_samples(self):
        with pytest.raises(InsufficientData):
            calibrate_delta([np.ones((10, N))] * 15)

    def test_too_few_missions(self):
        with pytest.raises(InsufficientData):
            calibrate_delta([np.ones((2000, N))] * 5)


class TestDiagnoser:
    def test_verdict_latches_after_agreeing_evaluations(self):
        d = Diagnoser(PROFILE, period=1, agree=4)
        d.reset_episode(0.0)
        fresh = np.ones(len(SENSORS), dtype=bool)
        latched_at = None
        for k in range(12):
            x = np.zeros(N)
            x[list(states_for_sensor("baro"))] = 5.0 * (k % 2)
            d.push(x, fresh, float(k))
            if d.step_episode(k, float(k)) is not None and latched_at is None:
                latched_at = k
        assert d.latched.malicious_sensors == {SensorId.BAROMETER}
        assert latched_at == 6

    def test_immature_window_not_evaluated(self):
        d = Diagnoser(PROFILE, period=1)
        fresh = np.ones(len(SENSORS), dtype=bool)
        for k in range(4):
            d.push(np.zeros(N), fresh, float(k))
        d.reset_episode(10.0)
        assert d.step_episode(0, 10.0) is None and not d.history
