"""Cross-fade envelopes and weighted-sum assembly of F0 trajectories.

Onset arrays here always have N+1 entries: the (possibly corrected) onsets of
the N notes followed by the end of the last note.

Edge handling: the pseudo-dinote before the first real one is a constant
(the first dinote's value at the score start) faded out across note 0, and
the last real dinote keeps full weight across the last note. With both edges
treated this way the dinote weights sum to one on the whole score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_EDGE_TOL = 1e-9


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class FrameGrid:
    start: float
    count: int
    period: float

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError(f"frame period must be > 0, got {self.period}")
        if self.count < 1:
            raise ValueError(f"frame count must be >= 1, got {self.count}")

    @property
    def times(self) -> np.ndarray:
        return self.start + np.arange(self.count) * self.period

    def frame_range(self, lo: float, hi: float) -> tuple[int, int]:
        """First and one-past-last frame whose time lies in [lo, hi]."""
        a = math.ceil((lo - self.start) / self.period - _EDGE_TOL)
        b = math.floor((hi - self.start) / self.period + _EDGE_TOL) + 1
        a = min(max(a, 0), self.count)
        b = min(max(b, a), self.count)
        return a, b

    def matches(self, other: "FrameGrid") -> bool:
        return (self.count == other.count and abs(self.start - other.start) < _EDGE_TOL
                and abs(self.period - other.period) < _EDGE_TOL)

    @classmethod
    def covering(cls, start: float, end: float, period: float) -> "FrameGrid":
        return cls(start, max(1, int(round((end - start) / period))), period)


@dataclass
class F0Track:
    """Per-frame pitch in semitones with a voicing mask."""

    grid: FrameGrid
    log_f0: np.ndarray
    voiced: np.ndarray

    def __post_init__(self):
        self.log_f0 = np.asarray(self.log_f0, dtype=float)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.log_f0.shape != (self.grid.count,) or self.voiced.shape != (self.grid.count,):
            raise GridMismatch(f"track arrays must have length {self.grid.count}")
        if not np.all(np.isfinite(self.log_f0[self.voiced])):
            raise ValueError("non-finite pitch on a voiced frame")

    @property
    def times(self) -> np.ndarray:
        return self.grid.times


@dataclass(frozen=True)
class Segment:
    """Samples of one dinote or mononote on consecutive grid frames."""

    first: int
    values: np.ndarray

    @property
    def stop(self) -> int:
        return self.first + len(self.values)


# --- scalar weights --------------------------------------------------------

def dinote_weight(t_prev: float, t_cur: float, t_next: float, t: float) -> float:
    """Triangular cross-fade weight peaking at ``t_cur``."""
    if not t_prev < t_cur < t_next:
        raise ValueError(f"onsets must increase: {t_prev}, {t_cur}, {t_next}")
    if t < t_prev or t > t_next:
        return 0.0
    if t < t_cur:
        return (t - t_prev) / (t_cur - t_prev)
    return (t_next - t) / (t_next - t_cur)


def mononote_weight(t_on: float, t_off: float, t: float) -> float:
    """Parabolic envelope, zero at both note boundaries and 1 at the midpoint."""
    if not t_off > t_on:
        raise ValueError(f"note must have positive length: {t_on}, {t_off}")
    if t < t_on or t > t_off:
        return 0.0
    return 4.0 * (t - t_on) * (t_off - t) / (t_off - t_on) ** 2


# --- vectorized envelopes with edge rules ----------------------------------

def dinote_envelope(onsets: np.ndarray, i: int, t) -> np.ndarray:
    """Weight of dinote i (0 = leading pseudo-dinote) at times t."""
    T = np.asarray(onsets, dtype=float)
    n = len(T) - 1
    t = np.asarray(t, dtype=float)
    w = np.zeros_like(t)
    if i == 0:
        m = (t >= T[0]) & (t < T[1])
        w[m] = (T[1] - t[m]) / (T[1] - T[0])
        return w
    if not 1 <= i <= n - 1:
        raise IndexError(f"dinote {i} outside [0, {n - 1}]")
    up = (t >= T[i - 1]) & (t < T[i])
    w[up] = (t[up] - T[i - 1]) / (T[i] - T[i - 1])
    down = (t >= T[i]) & (t <= T[i + 1])
    if i == n - 1:
        w[down] = 1.0
    else:
        w[down] = (T[i + 1] - t[down]) / (T[i + 1] - T[i])
    return w


def mononote_envelope(onsets: np.ndarray, i: int, t) -> np.ndarray:
    T = np.asarray(onsets, dtype=float)
    t = np.asarray(t, dtype=float)
    lo, hi = T[i], T[i + 1]
    w = np.zeros_like(t)
    m = (t >= lo) & (t <= hi)
    w[m] = 4.0 * (t[m] - lo) * (hi - t[m]) / (hi - lo) ** 2
    return w


@dataclass
class Layout:
    """Frame ranges and envelope weights of every segment on a grid.

    ``dinotes[i]`` is (first, stop, weights) for dinote i, with index 0 the
    leading pseudo-dinote; ``mononotes[j]`` likewise for note j.
    """

    grid: FrameGrid
    onsets: np.ndarray
    dinotes: list[tuple[int, int, np.ndarray]]
    mononotes: list[tuple[int, int, np.ndarray]]
    note_of_frame: np.ndarray

    @property
    def n_notes(self) -> int:
        return len(self.onsets) - 1


def make_layout(onsets: Sequence[float], grid: FrameGrid) -> Layout:
    T = np.asarray(onsets, dtype=float)
    n = len(T) - 1
    if n < 2:
        raise ValueError(f"need at least 2 notes, got {n}")
    if np.any(np.diff(T) <= 0):
        raise ValueError("onsets must be strictly increasing")
    times = grid.times
    dinotes = []
    for i in range(n):
        lo, hi = (T[0], T[1]) if i == 0 else (T[i - 1], T[i + 1])
        a, b = grid.frame_range(lo, hi)
        dinotes.append((a, b, dinote_envelope(T, i, times[a:b])))
    mononotes = []
    for j in range(n):
        a, b = grid.frame_range(T[j], T[j + 1])
        mononotes.append((a, b, mononote_envelope(T, j, times[a:b])))
    note_of_frame = np.clip(np.searchsorted(T, times, side="right") - 1, 0, n - 1)
    return Layout(grid, T, dinotes, mononotes, note_of_frame)


def voicing(layout: Layout, silent: Sequence[bool]) -> np.ndarray:
    silent = np.asarray(silent, dtype=bool)
    return ~silent[layout.note_of_frame]


def assemble(dinote_segments: Sequence[Segment], mononote_segments: Sequence[Segment | None],
             onsets: Sequence[float], grid: FrameGrid,
             silent: Sequence[bool] | None = None) -> F0Track:
    """Weighted sum of dinote and mononote segments.

    ``dinote_segments[k]`` samples dinote k+1 (the pair of notes k, k+1) over
    every frame of its support; the leading pseudo-dinote is taken as the
    first sample of ``dinote_segments[0]``. A ``None`` mononote contributes
    nothing.
    """
    layout = make_layout(onsets, grid)
    n = layout.n_notes
    if len(dinote_segments) != n - 1:
        raise ValueError(f"expected {n - 1} dinote segments, got {len(dinote_segments)}")
    if len(mononote_segments) != n:
        raise ValueError(f"expected {n} mononote segments, got {len(mononote_segments)}")
    out = np.zeros(grid.count)
    for k, seg in enumerate(dinote_segments):
        a, b, w = layout.dinotes[k + 1]
        _check_segment(seg, a, b, f"dinote {k + 1}")
        out[a:b] += w * seg.values
    a, b, w = layout.dinotes[0]
    first = dinote_segments[0]
    if len(first.values) == 0:
        raise GridMismatch("first dinote has no samples")
    out[a:b] += w * first.values[0]
    for j, seg in enumerate(mononote_segments):
        if seg is None:
            continue
        a, b, w = layout.mononotes[j]
        _check_segment(seg, a, b, f"mononote {j}")
        out[a:b] += w * seg.values
    if silent is None:
        voiced = np.ones(grid.count, dtype=bool)
    else:
        voiced = voicing(layout, silent)
    return F0Track(grid, out, voiced)


def _check_segment(seg: Segment, a: int, b: int, what: str) -> None:
    if seg.first != a or seg.stop != b:
        raise GridMismatch(f"{what} covers frames [{seg.first}, {seg.stop}), expected [{a}, {b})")
