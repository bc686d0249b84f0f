"""Dinote pitch predictor with a note-pitch residual connection.

The network predicts the deviation from the second note's pitch; per-note
onset offsets shift the boundary the position input is measured from and
receive gradients through that input only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .envelope import FrameGrid, Layout, Segment, make_layout
from .score import (TR_POSITION, TRANSITION_DIM, TRANSITION_REAL_DIMS, Score, Standardizer,
                    pair_pitches, transition_contexts, transition_static)

MAX_OFFSET = 0.030


def identity_standardizer(dim: int, real_dims) -> Standardizer:
    return Standardizer(np.zeros(dim), np.ones(dim), tuple(real_dims))


@dataclass
class TransitionModel:
    mlp: nn.Mlp
    standardizer: Standardizer
    # Training-time onset offsets per song id; synthesis on new scores uses zeros.
    offsets: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, seed: int, hidden=nn.DEFAULT_HIDDEN, activation: str = "tanh"):
        mlp = nn.init_mlp((TRANSITION_DIM, *hidden, 1), seed, activation)
        return cls(mlp, identity_standardizer(TRANSITION_DIM, TRANSITION_REAL_DIMS))

    def to_dict(self) -> dict:
        return {"mlp": self.mlp.to_dict(), "standardizer": self.standardizer.to_dict(),
                "offsets": {k: v.tolist() for k, v in self.offsets.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionModel":
        return cls(nn.Mlp.from_dict(d["mlp"]), Standardizer.from_dict(d["standardizer"]),
                   {k: np.array(v, dtype=float) for k, v in d.get("offsets", {}).items()})

    def __eq__(self, other) -> bool:
        return (isinstance(other, TransitionModel) and self.mlp == other.mlp
                and self.standardizer == other.standardizer
                and self.offsets.keys() == other.offsets.keys()
                and all(np.array_equal(v, other.offsets[k]) for k, v in self.offsets.items()))


def residual_pitch(score: Score, i: int) -> float:
    return pair_pitches(score, i)[1]


def predict_frames(model: TransitionModel, score: Score, i: int, times, offsets=None) -> np.ndarray:
    ctx = transition_contexts(score, i, times, offsets)
    return nn.forward(model.mlp, model.standardizer.apply(ctx)) + residual_pitch(score, i)


def predict_frame(model: TransitionModel, score: Score, i: int, t: float, offsets=None) -> float:
    return float(predict_frames(model, score, i, [t], offsets)[0])


def predict_dinote(model: TransitionModel, score: Score, i: int, grid: FrameGrid,
                   offsets=None) -> Segment:
    """Samples of dinote i on every grid frame of its (corrected) support."""
    T = score.corrected_onsets(offsets)
    a, b = grid.frame_range(T[i - 1], T[i + 1])
    times = grid.times[a:b]
    if len(times) == 0:
        return Segment(a, np.zeros(0))
    # Frame times may sit a rounding error outside the support.
    times = np.clip(times, T[i - 1], T[i + 1])
    return Segment(a, predict_frames(model, score, i, times, offsets))


def predict_dinotes(model: TransitionModel, score: Score, grid: FrameGrid,
                    offsets=None) -> list[Segment]:
    return [predict_dinote(model, score, i, grid, offsets) for i in range(1, len(score))]


def offset_gradient(model: TransitionModel, score: Score, i: int, t: float, upstream: float,
                    offsets=None) -> dict[int, float]:
    """dL/d(offset) for a loss with dL/d(prediction) = upstream at (dinote i, t).

    Only the boundary note's offset enters the position input, and
    d(position)/d(offset) = -1.
    """
    ctx = transition_contexts(score, i, [t], offsets)
    grads = nn.backward(model.mlp, model.standardizer.apply(ctx), [upstream])
    d_position = grads.inputs[0, TR_POSITION] / model.standardizer.std[TR_POSITION]
    return {i: -float(d_position)}


def clip_offsets(offsets: np.ndarray, bound: float = MAX_OFFSET) -> np.ndarray:
    return np.clip(offsets, -bound, bound)


def clamp_offsets(model: TransitionModel, bound: float = MAX_OFFSET) -> TransitionModel:
    for k, v in model.offsets.items():
        np.clip(v, -bound, bound, out=v)
    return model


# --- batched evaluation over a whole score ---------------------------------

@dataclass
class DinoteBatch:
    """All (frame, dinote) pairs of a score with nonzero support.

    Row r contributes ``weight[r] * (net(inputs[r]) + pitch[r])`` to frame
    ``frame[r]``; ``boundary[r]`` is the note whose offset the position input
    depends on. Rows of the leading pseudo-dinote evaluate dinote 1 at the
    score start.
    """

    contexts: np.ndarray
    frame: np.ndarray
    weight: np.ndarray
    pitch: np.ndarray
    boundary: np.ndarray
    dinote: np.ndarray


def dinote_batch(score: Score, layout: Layout) -> DinoteBatch:
    T = layout.onsets
    times = layout.grid.times
    ctxs, frames, weights, pitches, bounds, ids = [], [], [], [], [], []
    for i in range(len(score)):
        a, b, w = layout.dinotes[i]
        if b <= a:
            continue
        k = 1 if i == 0 else i
        static = transition_static(score, k)
        if i == 0:
            pos = np.full(b - a, T[0] - T[1])
        else:
            pos = np.clip(times[a:b], T[i - 1], T[i + 1]) - T[i]
        c = np.tile(static, (b - a, 1))
        c[:, TR_POSITION] = pos
        ctxs.append(c)
        frames.append(np.arange(a, b))
        weights.append(w)
        pitches.append(np.full(b - a, pair_pitches(score, k)[1]))
        bounds.append(np.full(b - a, k))
        ids.append(np.full(b - a, i))
    cat = np.concatenate
    return DinoteBatch(cat(ctxs), cat(frames), cat(weights), cat(pitches), cat(bounds), cat(ids))


def transition_track(model: TransitionModel, score: Score, grid: FrameGrid, offsets=None,
                     layout: Layout | None = None) -> np.ndarray:
    """Dinote part of the assembled trajectory (sum of weighted dinotes)."""
    if layout is None:
        layout = make_layout(score.corrected_onsets(offsets), grid)
    batch = dinote_batch(score, layout)
    values = nn.forward(model.mlp, model.standardizer.apply(batch.contexts)) + batch.pitch
    return np.bincount(batch.frame, weights=batch.weight * values, minlength=grid.count)
