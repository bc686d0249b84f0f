import numpy as np
import pytest
from hypothesis import strategies as st

from singf0.score import Note, OnsetType, Score


def make_score(durations, pitches, silent=None, onset_types=None, start=0.0, period=0.005):
    """Contiguous score from per-note durations; ``silent`` defaults to rests at both ends."""
    n = len(durations)
    if silent is None:
        silent = [i in (0, n - 1) for i in range(n)]
    if onset_types is None:
        onset_types = [OnsetType.DEFAULT] * n
    notes, t = [], start
    for d, p, s, o in zip(durations, pitches, silent, onset_types):
        notes.append(Note(t, d, p, bool(s), o))
        t += d
    return Score(tuple(notes), period)


def random_score(rng: np.random.Generator, n_sung=None, period=0.005, dur=(0.1, 0.8)):
    """Random valid score with silent brackets and occasional interior rests."""
    if n_sung is None:
        n_sung = int(rng.integers(1, 12))
    n = n_sung + 2
    durations = rng.uniform(*dur, n)
    pitches = rng.uniform(50, 75, n)
    silent = np.zeros(n, dtype=bool)
    silent[[0, -1]] = True
    if n > 4:
        silent[1:-1] |= rng.random(n - 2) < 0.1
    types = [list(OnsetType)[k] for k in rng.integers(0, 3, n)]
    return make_score(durations, pitches, silent, types, start=float(rng.uniform(0, 1)),
                      period=period)


@st.composite
def scores(draw, min_sung=1, max_sung=8):
    seed = draw(st.integers(0, 2**32 - 1))
    n_sung = draw(st.integers(min_sung, max_sung))
    return random_score(np.random.default_rng(seed), n_sung)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_difference(f, x, h=1e-6):
    """Central finite-difference gradient of scalar f at array x (x is restored)."""
    x = np.asarray(x)
    grad = np.zeros(x.shape)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def rel_error(a, b, floor=1e-3):
    """Max componentwise |a - b| / max(|a|, |b|, floor); the floor keeps finite-difference
    noise on near-zero components from dominating."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
