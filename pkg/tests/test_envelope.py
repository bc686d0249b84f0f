import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singf0.envelope import (F0Track, FrameGrid, GridMismatch, Segment, assemble,
                             dinote_envelope, dinote_weight, make_layout, mononote_envelope,
                             mononote_weight)

from conftest import scores


def _grid_for(score):
    return FrameGrid.covering(score.start, score.end, score.frame_period)


@pytest.mark.parametrize("t,expected", [(1.0, 1.0), (0.5, 0.5), (2.0, 0.5), (-1.0, 0.0),
                                        (3.5, 0.0), (0.0, 0.0), (3.0, 0.0)])
def test_dinote_weight(t, expected):
    assert dinote_weight(0, 1, 3, t) == expected


@pytest.mark.parametrize("t,expected", [(1.0, 1.0), (0.0, 0.0), (0.5, 0.75), (2.0, 0.0),
                                        (-0.1, 0.0), (2.5, 0.0)])
def test_mononote_weight(t, expected):
    assert mononote_weight(0, 2, t) == expected


def test_weight_errors():
    with pytest.raises(ValueError):
        dinote_weight(0, 2, 1, 0.5)
    with pytest.raises(ValueError):
        mononote_weight(1, 1, 1)


def test_vectorized_matches_scalar(rng):
    T = np.cumsum(rng.uniform(0.2, 1.0, 6))
    t = np.linspace(T[0] - 0.1, T[-1] + 0.1, 301)
    for i in range(1, len(T) - 2):
        ref = [dinote_weight(T[i - 1], T[i], T[i + 1], x) for x in t]
        np.testing.assert_allclose(dinote_envelope(T, i, t), ref, atol=1e-15)
    for i in range(len(T) - 1):
        ref = [mononote_weight(T[i], T[i + 1], x) for x in t]
        np.testing.assert_allclose(mononote_envelope(T, i, t), ref, atol=1e-15)


def test_frame_grid():
    g = FrameGrid(0.0, 10, 0.005)
    assert g.times[3] == pytest.approx(0.015)
    assert g.frame_range(0.005, 0.02) == (1, 5)
    assert FrameGrid.covering(0.0, 1.0, 0.005).count == 200
    with pytest.raises(ValueError):
        FrameGrid(0.0, 0, 0.005)
    with pytest.raises(ValueError):
        FrameGrid(0.0, 5, 0.0)


@settings(max_examples=40, deadline=None)
@given(scores())
def test_partition_of_unity(score):
    grid = _grid_for(score)
    layout = make_layout(score.onsets, grid)
    total = np.zeros(grid.count)
    for a, b, w in layout.dinotes:
        total[a:b] += w
    np.testing.assert_allclose(total, 1.0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(scores())
def test_mononote_zero_at_boundaries(score):
    T = score.onsets
    for i in range(len(score)):
        assert mononote_envelope(T, i, np.array([T[i], T[i + 1]])).tolist() == [0.0, 0.0]


def _segments(score, grid, dinote_fn, mono_fn=None):
    layout = make_layout(score.onsets, grid)
    t = grid.times
    dinotes = [Segment(a, dinote_fn(k, t[a:b])) for k, (a, b, _) in enumerate(layout.dinotes)
               if k > 0]
    mono = [None if mono_fn is None else Segment(a, mono_fn(j, t[a:b]))
            for j, (a, b, _) in enumerate(layout.mononotes)]
    return dinotes, mono


@settings(max_examples=30, deadline=None)
@given(scores(), st.floats(-10, 100))
def test_constant_dinotes_give_constant_output(score, c):
    grid = _grid_for(score)
    d, m = _segments(score, grid, lambda k, t: np.full(len(t), c))
    out = assemble(d, m, score.onsets, grid)
    np.testing.assert_allclose(out.log_f0, c, atol=1e-9 * max(1, abs(c)))


def test_zero_segments_give_zero(rng):
    from conftest import random_score
    score = random_score(rng)
    grid = _grid_for(score)
    d, m = _segments(score, grid, lambda k, t: np.zeros(len(t)), lambda j, t: np.zeros(len(t)))
    assert not assemble(d, m, score.onsets, grid).log_f0.any()


def test_three_note_hand_assembly():
    # Rest, one sung note, rest; dinote k is the constant k, the sung mononote is 1.
    T = np.array([0.0, 0.5, 1.5, 2.0])
    grid = FrameGrid(0.0, 400, 0.005)
    t = grid.times
    layout = make_layout(T, grid)
    d = [Segment(a, np.full(b - a, float(k))) for k, (a, b, _) in enumerate(layout.dinotes)
         if k > 0]
    a, b, _ = layout.mononotes[1]
    m = [None, Segment(a, np.ones(b - a)), None]
    out = assemble(d, m, T, grid, silent=[True, False, True]).log_f0
    # The pseudo-dinote holds dinote 1's value (1) over the leading rest.
    expected = np.where(t < 0.5, 1.0, 0.0)
    up1 = (t >= 0.5) & (t < 1.5)
    expected[up1] = 1 * (1.5 - t[up1]) / 1.0 + 2 * (t[up1] - 0.5) / 1.0
    expected[t >= 1.5] = 2.0
    inner = (t >= 0.5) & (t <= 1.5)
    expected[inner] += 4 * (t[inner] - 0.5) * (1.5 - t[inner]) / 1.0
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_voicing_follows_silence():
    T = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    grid = FrameGrid(0.0, 400, 0.005)
    layout = make_layout(T, grid)
    d = [Segment(a, np.zeros(b - a)) for k, (a, b, _) in enumerate(layout.dinotes) if k > 0]
    out = assemble(d, [None] * 4, T, grid, silent=[True, False, True, True])
    t = grid.times
    np.testing.assert_array_equal(out.voiced, (t >= 0.5) & (t < 1.0))


def test_assemble_linear(rng):
    from conftest import random_score
    score = random_score(rng)
    grid = _grid_for(score)
    f = lambda k, t: np.sin(t * (k + 1))  # noqa: E731
    g = lambda k, t: t ** 2 - k  # noqa: E731
    d1, m1 = _segments(score, grid, f, f)
    d2, m2 = _segments(score, grid, g, g)
    ds, ms = _segments(score, grid, lambda k, t: 2 * f(k, t) - 3 * g(k, t),
                       lambda k, t: 2 * f(k, t) - 3 * g(k, t))
    a = assemble(d1, m1, score.onsets, grid).log_f0
    b = assemble(d2, m2, score.onsets, grid).log_f0
    c = assemble(ds, ms, score.onsets, grid).log_f0
    np.testing.assert_allclose(c, 2 * a - 3 * b, atol=1e-9)


def test_assemble_errors():
    T = np.array([0.0, 0.5, 1.0])
    grid = FrameGrid(0.0, 200, 0.005)
    layout = make_layout(T, grid)
    a, b, _ = layout.dinotes[1]
    with pytest.raises(GridMismatch):
        assemble([Segment(a + 1, np.zeros(b - a))], [None, None], T, grid)
    with pytest.raises(ValueError):
        assemble([], [None, None], T, grid)
    with pytest.raises(ValueError):
        make_layout([0.0, 1.0], grid)


def test_track_validation():
    g = FrameGrid(0.0, 3, 0.005)
    with pytest.raises(GridMismatch):
        F0Track(g, np.zeros(2), np.ones(2, bool))
    with pytest.raises(ValueError):
        F0Track(g, [0, np.nan, 0], [True, True, True])
    F0Track(g, [0, np.nan, 0], [True, False, True])
