"""Score data model and network-input featurization.

Notes are indexed from 0. A score of N notes has onsets T[0..N-1] plus the
end time T[N]; dinote ``i`` (1 <= i <= N-1) covers the pair (i-1, i).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

CONTIGUITY_TOL = 1e-9

TRANSITION_DIM = 9
SUSTAIN_DIM = 11

# Column layout of the transition context vector.
TR_DUR_FIRST, TR_DUR_SECOND, TR_INTERVAL = 0, 1, 2
TR_SILENT_FIRST, TR_SILENT_SECOND = 3, 4
TR_ONSET = slice(5, 8)
TR_POSITION = 8
TRANSITION_REAL_DIMS = (TR_DUR_FIRST, TR_DUR_SECOND, TR_INTERVAL, TR_POSITION)

# Column layout of the sustain context vector.
SU_DURATION = 0
SU_SILENT_PREV, SU_SILENT_NEXT = 1, 2
SU_PITCH, SU_DIFF_PREV, SU_DIFF_NEXT = 3, 4, 5
SU_ONSET = slice(6, 9)
SU_FORWARD, SU_BACKWARD = 9, 10
SUSTAIN_REAL_DIMS = (SU_DURATION, SU_PITCH, SU_DIFF_PREV, SU_DIFF_NEXT, SU_FORWARD, SU_BACKWARD)


class ScoreError(ValueError):
    """Raised for malformed scores, bad indices or out-of-support times."""


class OnsetType(Enum):
    LEGATO = "legato"
    VOWEL_LEADING = "vowel_leading"
    DEFAULT = "default"

    def one_hot(self) -> np.ndarray:
        v = np.zeros(3)
        v[_ONSET_ORDER.index(self)] = 1.0
        return v


_ONSET_ORDER = (OnsetType.LEGATO, OnsetType.VOWEL_LEADING, OnsetType.DEFAULT)


@dataclass(frozen=True)
class Note:
    """A single note event.

    ``pitch`` is on the MIDI semitone scale and may be fractional. For a
    silent note the pitch is ignored by featurization.
    """

    onset: float
    duration: float
    pitch: float
    is_silent: bool = False
    onset_type: OnsetType = OnsetType.DEFAULT

    def __post_init__(self):
        if not self.duration > 0:
            raise ScoreError(f"note duration must be > 0, got {self.duration}")
        if not isinstance(self.onset_type, OnsetType):
            object.__setattr__(self, "onset_type", OnsetType(self.onset_type))

    @property
    def end(self) -> float:
        return self.onset + self.duration


@dataclass(frozen=True)
class Score:
    notes: tuple[Note, ...]
    frame_period: float = 0.005

    def __post_init__(self):
        object.__setattr__(self, "notes", tuple(self.notes))
        if not self.frame_period > 0:
            raise ScoreError(f"frame_period must be > 0, got {self.frame_period}")

    def __len__(self) -> int:
        return len(self.notes)

    @property
    def onsets(self) -> np.ndarray:
        """Onsets T[0..N-1] followed by the end of the last note."""
        return np.array([n.onset for n in self.notes] + [self.notes[-1].end])

    @property
    def durations(self) -> np.ndarray:
        return np.array([n.duration for n in self.notes])

    @property
    def silent(self) -> np.ndarray:
        return np.array([n.is_silent for n in self.notes], dtype=bool)

    @property
    def start(self) -> float:
        return self.notes[0].onset

    @property
    def end(self) -> float:
        return self.notes[-1].end

    def corrected_onsets(self, offsets: Sequence[float] | None = None) -> np.ndarray:
        """Onsets shifted by per-note offsets; the end time is never shifted."""
        onsets = self.onsets
        if offsets is None:
            return onsets
        offsets = np.asarray(offsets, dtype=float)
        if offsets.shape != (len(self.notes),):
            raise ScoreError(f"expected {len(self.notes)} offsets, got shape {offsets.shape}")
        onsets[:-1] += offsets
        return onsets


@dataclass(frozen=True)
class Violation:
    index: int
    rule: str
    message: str

    def __str__(self) -> str:
        return f"note {self.index}: {self.rule}: {self.message}"


def validate_score(score: Score) -> list[Violation]:
    """Return every broken score invariant; an empty list means valid."""
    notes = score.notes
    out: list[Violation] = []
    if len(notes) < 2:
        out.append(Violation(0, "min-notes", f"need at least 2 notes, got {len(notes)}"))
    for i, n in enumerate(notes):
        if n.onset < 0:
            out.append(Violation(i, "onset", f"negative onset {n.onset}"))
        if not np.isfinite(n.pitch) and not n.is_silent:
            out.append(Violation(i, "pitch", "non-finite pitch"))
    for i in range(1, len(notes)):
        prev, cur = notes[i - 1], notes[i]
        if not cur.onset > prev.onset:
            out.append(Violation(i, "order", f"onset {cur.onset} not after {prev.onset}"))
        if abs(prev.end - cur.onset) > CONTIGUITY_TOL:
            out.append(Violation(i, "contiguity",
                                 f"previous note ends at {prev.end}, this one starts at {cur.onset}"))
    if notes and not notes[0].is_silent:
        out.append(Violation(0, "boundary-silence", "first note must be silent"))
    if len(notes) > 1 and not notes[-1].is_silent:
        out.append(Violation(len(notes) - 1, "boundary-silence", "last note must be silent"))
    return out


def check_score(score: Score) -> None:
    problems = validate_score(score)
    if problems:
        raise ScoreError("; ".join(str(p) for p in problems))


# --- silent-pitch rule -----------------------------------------------------

def fallback_pitch(score: Score, i: int) -> float:
    """Pitch of note i, or of the nearest non-silent note if i is silent.

    The previous side wins ties. A score without any sung note falls back to
    the note's own pitch field.
    """
    notes = score.notes
    if not notes[i].is_silent:
        return notes[i].pitch
    for k in range(1, len(notes)):
        for j in (i - k, i + k):
            if 0 <= j < len(notes) and not notes[j].is_silent:
                return notes[j].pitch
    return notes[i].pitch


def pair_pitches(score: Score, i: int) -> tuple[float, float]:
    """Effective (first, second) pitches of dinote i; a silent partner copies the other."""
    a, b = score.notes[i - 1], score.notes[i]
    if a.is_silent and b.is_silent:
        p = fallback_pitch(score, i - 1)
        return p, p
    if a.is_silent:
        return b.pitch, b.pitch
    if b.is_silent:
        return a.pitch, a.pitch
    return a.pitch, b.pitch


# --- context vectors -------------------------------------------------------

def _check_dinote(score: Score, i: int) -> None:
    if not 1 <= i <= len(score.notes) - 1:
        raise ScoreError(f"dinote index {i} outside [1, {len(score.notes) - 1}]")


def _check_note(score: Score, i: int) -> None:
    if not 0 <= i <= len(score.notes) - 1:
        raise ScoreError(f"note index {i} outside [0, {len(score.notes) - 1}]")


def dinote_support(score: Score, i: int, offsets=None) -> tuple[float, float]:
    _check_dinote(score, i)
    T = score.corrected_onsets(offsets)
    return T[i - 1], T[i + 1]


def mononote_support(score: Score, i: int, offsets=None) -> tuple[float, float]:
    _check_note(score, i)
    T = score.corrected_onsets(offsets)
    return T[i], T[i + 1]


def transition_static(score: Score, i: int) -> np.ndarray:
    """The time-independent part of dinote i's context (position left at 0)."""
    _check_dinote(score, i)
    a, b = score.notes[i - 1], score.notes[i]
    p1, p2 = pair_pitches(score, i)
    ctx = np.zeros(TRANSITION_DIM)
    ctx[TR_DUR_FIRST] = a.duration
    ctx[TR_DUR_SECOND] = b.duration
    ctx[TR_INTERVAL] = p2 - p1
    ctx[TR_SILENT_FIRST] = float(a.is_silent)
    ctx[TR_SILENT_SECOND] = float(b.is_silent)
    ctx[TR_ONSET] = b.onset_type.one_hot()
    return ctx


def transition_contexts(score: Score, i: int, times, offsets=None) -> np.ndarray:
    """Transition contexts of dinote i at an array of times, shape (n, 9).

    Durations come from the score and do not move with the offsets; only the
    position feature references the corrected boundary.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    lo, hi = dinote_support(score, i, offsets)
    tol = 1e-9
    if np.any(times < lo - tol) or np.any(times > hi + tol):
        raise ScoreError(f"time outside dinote {i} support [{lo}, {hi}]")
    boundary = score.corrected_onsets(offsets)[i]
    out = np.tile(transition_static(score, i), (len(times), 1))
    out[:, TR_POSITION] = times - boundary
    return out


def transition_context(score: Score, i: int, t: float, offsets=None) -> np.ndarray:
    return transition_contexts(score, i, [t], offsets)[0]


def sustain_static(score: Score, i: int) -> np.ndarray:
    _check_note(score, i)
    notes = score.notes
    n = notes[i]
    own = fallback_pitch(score, i)
    ctx = np.zeros(SUSTAIN_DIM)
    ctx[SU_PITCH] = own
    prev_silent = i == 0 or notes[i - 1].is_silent
    next_silent = i == len(notes) - 1 or notes[i + 1].is_silent
    ctx[SU_SILENT_PREV] = float(prev_silent)
    ctx[SU_SILENT_NEXT] = float(next_silent)
    # Neighbor minus own pitch; a silent neighbor contributes no difference.
    ctx[SU_DIFF_PREV] = 0.0 if prev_silent else notes[i - 1].pitch - own
    ctx[SU_DIFF_NEXT] = 0.0 if next_silent else notes[i + 1].pitch - own
    ctx[SU_ONSET] = n.onset_type.one_hot()
    return ctx


def sustain_contexts(score: Score, i: int, times, offsets=None) -> np.ndarray:
    """Sustain contexts of note i at an array of times, shape (n, 11).

    The duration feature is the corrected note length so that the forward
    and backward positions always add up to it.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    lo, hi = mononote_support(score, i, offsets)
    tol = 1e-9
    if np.any(times < lo - tol) or np.any(times > hi + tol):
        raise ScoreError(f"time outside note {i} support [{lo}, {hi}]")
    out = np.tile(sustain_static(score, i), (len(times), 1))
    out[:, SU_DURATION] = hi - lo
    out[:, SU_FORWARD] = times - lo
    out[:, SU_BACKWARD] = hi - times
    return out


def sustain_context(score: Score, i: int, t: float, offsets=None) -> np.ndarray:
    return sustain_contexts(score, i, [t], offsets)[0]


# --- standardization -------------------------------------------------------

@dataclass
class Standardizer:
    """Per-dimension affine scaling; dimensions not in ``real_dims`` pass through."""

    mean: np.ndarray
    std: np.ndarray
    real_dims: tuple[int, ...] = field(default_factory=tuple)

    def apply(self, ctx: np.ndarray) -> np.ndarray:
        return (np.asarray(ctx, dtype=float) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "real_dims": list(self.real_dims)}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float),
                   tuple(int(k) for k in d["real_dims"]))

    def __eq__(self, other) -> bool:
        return (isinstance(other, Standardizer) and self.real_dims == other.real_dims
                and np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std))


def fit_standardizer(contexts, real_dims: Sequence[int]) -> Standardizer:
    x = np.asarray(contexts, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("cannot fit a standardizer on an empty collection")
    dim = x.shape[1]
    mean = np.zeros(dim)
    std = np.ones(dim)
    dims = list(real_dims)
    mean[dims] = x[:, dims].mean(axis=0)
    s = x[:, dims].std(axis=0)
    std[dims] = np.where(s > 0, s, 1.0)
    return Standardizer(mean, std, tuple(dims))


def apply_standardizer(std: Standardizer, ctx) -> np.ndarray:
    return std.apply(ctx)


# --- JSON ------------------------------------------------------------------

_NOTE_FIELDS = {"onset", "duration", "pitch", "silent", "onset_type"}
_SCORE_FIELDS = {"frame_period", "notes"}


def score_from_dict(d: dict) -> Score:
    if not isinstance(d, dict):
        raise ScoreError("score document must be an object")
    extra = set(d) - _SCORE_FIELDS
    if extra:
        raise ScoreError(f"unknown score fields: {sorted(extra)}")
    if "notes" not in d:
        raise ScoreError("missing field 'notes'")
    notes = []
    for k, nd in enumerate(d["notes"]):
        extra = set(nd) - _NOTE_FIELDS
        missing = {"onset", "duration", "pitch"} - set(nd)
        if extra:
            raise ScoreError(f"note {k}: unknown fields {sorted(extra)}")
        if missing:
            raise ScoreError(f"note {k}: missing fields {sorted(missing)}")
        try:
            onset_type = OnsetType(nd.get("onset_type", "default"))
        except ValueError:
            raise ScoreError(f"note {k}: bad onset_type {nd.get('onset_type')!r}") from None
        notes.append(Note(float(nd["onset"]), float(nd["duration"]), float(nd["pitch"]),
                          bool(nd.get("silent", False)), onset_type))
    return Score(tuple(notes), float(d.get("frame_period", 0.005)))


def score_to_dict(score: Score) -> dict:
    return {
        "frame_period": score.frame_period,
        "notes": [{"onset": n.onset, "duration": n.duration, "pitch": n.pitch,
                   "silent": n.is_silent, "onset_type": n.onset_type.value}
                  for n in score.notes],
    }


def load_score(path) -> Score:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ScoreError(f"{path}: line {e.lineno}: {e.msg}") from None
    return score_from_dict(doc)


def save_score(path, score: Score) -> None:
    with open(path, "w") as f:
        json.dump(score_to_dict(score), f, indent=1)
