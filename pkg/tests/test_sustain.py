import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singf0.dataio import score_grid
from singf0.envelope import Segment, assemble
from singf0.sustain import (FALLBACK_OMEGA, WARP_MAX, WARP_MIN, SustainModel, VibratoParams,
                            clamp_warp, depth, mononote_value, mononote_values, predict_mononote,
                            sustain_track, vibrato_param_gradients, warp, warp_slope, wrap_phase)

from conftest import central_difference, make_score, random_score, rel_error, scores

slopes = st.floats(WARP_MIN, WARP_MAX)


def _constant_depth(a):
    m = SustainModel.create(0, hidden=(4,))
    for p in m.mlp.params():
        p[...] = 0.0
    m.mlp.biases[-1][0] = a
    return m


def test_identity_warp():
    tau = np.linspace(0, 1, 1001)
    np.testing.assert_allclose(warp(tau, 1.0, 1.0), tau, atol=1e-15)


@given(slopes, slopes)
def test_warp_endpoints(alpha, beta):
    assert warp(0.0, alpha, beta) == 0.0
    assert warp(1.0, alpha, beta) == pytest.approx(1.0, abs=1e-15)


def test_warp_hand_value():
    assert warp(0.5, 0.5, 2.0) == pytest.approx(0.3125, abs=1e-15)


@given(slopes, slopes)
def test_warp_monotone(alpha, beta):
    tau = np.arange(0, 1.0005, 1e-3)
    assert np.all(warp_slope(tau, alpha, beta) > 0)
    assert np.all(np.diff(warp(tau, alpha, beta)) > 0)


def test_warp_slope_matches_end_slopes():
    assert warp_slope(0.0, 0.7, 1.6) == pytest.approx(0.7)
    assert warp_slope(1.0, 0.7, 1.6) == pytest.approx(1.6)


def test_warp_errors():
    with pytest.raises(ValueError):
        warp(1.1, 1, 1)
    with pytest.raises(ValueError):
        warp(0.5, 0.4, 1)
    with pytest.raises(ValueError):
        warp(0.5, 1, 2.5)


def test_zero_depth_gives_zero():
    s = make_score([0.3, 1.0, 0.3], [0, 60, 0])
    m = _constant_depth(0.0)
    assert not mononote_values(m, s, 1, np.linspace(0.3, 1.3, 50)).any()


def test_constant_depth_identity_warp():
    s = make_score([0.3, 1.0, 0.3], [0, 60, 0])
    m = _constant_depth(0.4)
    m.default_omega = 2 * math.pi * 5.0
    t = np.linspace(0.3, 1.3, 50)
    np.testing.assert_allclose(mononote_values(m, s, 1, t),
                               0.4 * np.sin(m.default_omega * (t - 0.3)), atol=1e-12)


def test_phase_quarter_turn_at_onset():
    s = make_score([0.3, 1.0, 0.3], [0, 60, 0])
    m = _constant_depth(0.5)
    p = VibratoParams(np.full(3, 2 * math.pi * 5.5), np.full(3, math.pi / 2), np.ones(3), np.ones(3))
    assert mononote_value(m, s, 1, 0.3, params=p) == pytest.approx(0.5, abs=1e-15)


def test_silent_note_has_no_mononote():
    s = make_score([0.3, 1.0, 0.3], [0, 60, 0])
    assert predict_mononote(SustainModel.create(0), s, 0, score_grid(s)) is None


@pytest.mark.parametrize("seed", range(10))
def test_vibrato_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    s = random_score(rng, 3, dur=(0.3, 1.0))
    m = SustainModel.create(seed, hidden=(6, 6))
    n = len(s)
    p = VibratoParams(rng.uniform(20, 45, n), rng.uniform(-3, 3, n),
                      rng.uniform(0.6, 1.9, n), rng.uniform(0.6, 1.9, n))
    i = int(rng.integers(1, n - 1))
    T = s.onsets
    t = rng.uniform(T[i] + 0.01, T[i + 1] - 0.01)
    up = rng.normal()
    g = vibrato_param_gradients(m, s, i, t, up, params=p)
    f = lambda: up * mononote_value(m, s, i, t, params=p)  # noqa: E731
    for name in ("theta", "alpha", "beta"):
        fd = central_difference(f, getattr(p, name))[i]
        assert rel_error(g[name], fd) < 1e-5, name
    for gp, pp in zip(g["mlp"].params(), m.mlp.params()):
        assert rel_error(gp, central_difference(f, pp)) < 1e-5


def test_zero_depth_zero_parameter_gradients():
    s = make_score([0.3, 1.0, 0.3], [0, 60, 0])
    g = vibrato_param_gradients(_constant_depth(0.0), s, 1, 0.77, 1.0)
    assert g["theta"] == g["alpha"] == g["beta"] == 0.0


def test_theta_gradient_follows_cosine():
    s = make_score([0.3, 1.0, 0.3], [0, 60, 0])
    m = _constant_depth(0.5)
    t = np.linspace(0.31, 1.29, 200)
    g = np.array([vibrato_param_gradients(m, s, 1, x, 1.0)["theta"] for x in t])
    c = np.cos(m.default_omega * (t - 0.3))
    big = np.abs(c) > 1e-6
    np.testing.assert_array_equal(np.sign(g[big]), np.sign(c[big]))


def test_clamp_warp():
    m = SustainModel.create(0)
    m.params = {"a": VibratoParams(np.ones(3), np.zeros(3), np.array([2.5, 1.0, 0.4]),
                                   np.array([0.4, 1.5, 3.0]))}
    clamp_warp(m)
    np.testing.assert_array_equal(m.params["a"].alpha, [2.0, 1.0, 0.5])
    np.testing.assert_array_equal(m.params["a"].beta, [0.5, 1.5, 2.0])
    before = m.params["a"].copy()
    assert clamp_warp(m).params["a"] == before


@settings(max_examples=25, deadline=None)
@given(scores())
def test_vibrato_bounded_by_depth(score):
    m = SustainModel.create(len(score))
    i = int(np.argmax(~score.silent))
    T = score.onsets
    t = np.linspace(T[i], T[i + 1], 40)
    assert np.all(np.abs(mononote_values(m, score, i, t)) <= np.abs(depth(m, score, i, t)) + 1e-15)


@settings(max_examples=25, deadline=None)
@given(scores())
def test_batched_track_matches_segment_assembly(score):
    m = SustainModel.create(2, hidden=(8, 8))
    rng = np.random.default_rng(len(score))
    n = len(score)
    p = VibratoParams(rng.uniform(20, 45, n), rng.uniform(-3, 3, n),
                      rng.uniform(0.5, 2, n), rng.uniform(0.5, 2, n))
    grid = score_grid(score)
    mono = [predict_mononote(m, score, i, grid, params=p) for i in range(n)]
    zeros = []
    for i in range(1, n):
        a = grid.frame_range(score.onsets[i - 1], score.onsets[i + 1])
        zeros.append(Segment(a[0], np.zeros(a[1] - a[0])))
    ref = assemble(zeros, mono, score.onsets, grid).log_f0
    np.testing.assert_allclose(sustain_track(m, score, grid, params=p), ref, atol=1e-12)


def test_synthesis_ignores_training_params(rng):
    s = random_score(rng, 4)
    m = SustainModel.create(0)
    a = sustain_track(m, s, score_grid(s))
    m.params = {"x": VibratoParams(np.full(len(s), 30.0), np.ones(len(s)),
                                   np.full(len(s), 2.0), np.full(len(s), 0.5))}
    assert sustain_track(m, s, score_grid(s)).tobytes() == a.tobytes()
    assert m.default_omega == FALLBACK_OMEGA and m.default_theta == 0.0


def test_wrap_phase():
    np.testing.assert_allclose(wrap_phase([0.5, 3 * math.pi, -math.pi, 7.0]),
                               [0.5, math.pi, math.pi, 7.0 - 2 * math.pi])
    x = np.array([-3.0, 0.0, math.pi])
    assert wrap_phase(x).tobytes() == x.tobytes()


def test_model_round_trip():
    m = SustainModel.create(3)
    m.default_omega = 33.3
    m.params = {"s": VibratoParams(np.array([30.0, 31.0]), np.array([0.1, -2.0]),
                                   np.array([1.0, 1.5]), np.array([0.7, 1.0]))}
    assert SustainModel.from_dict(json.loads(json.dumps(m.to_dict()))) == m
