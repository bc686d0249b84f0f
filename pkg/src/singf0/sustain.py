"""Vibrato model: a depth network times a warped, phase-shifted sinusoid.

For note i with corrected onset T and length d, at tau = (t - T) / d:

    M(t) = A(context) * sin(omega * warp(tau) * d + theta)

where warp is the cubic Hermite curve through (0, 0) and (1, 1) with end
slopes alpha and beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .envelope import FrameGrid, Layout, Segment, make_layout
from .score import (SUSTAIN_DIM, SUSTAIN_REAL_DIMS, Score, Standardizer, sustain_contexts,
                    sustain_static, SU_DURATION, SU_FORWARD, SU_BACKWARD)
from .transition import identity_standardizer

WARP_MIN = 0.5
WARP_MAX = 2.0
FALLBACK_VIBRATO_HZ = 5.5
FALLBACK_OMEGA = 2.0 * math.pi * FALLBACK_VIBRATO_HZ


def warp_values(tau, alpha, beta):
    tau = np.asarray(tau, dtype=float)
    t2 = tau * tau
    t3 = t2 * tau
    return -2.0 * t3 + 3.0 * t2 + (t3 - 2.0 * t2 + tau) * alpha + (t3 - t2) * beta


def warp_slope(tau, alpha, beta):
    """d warp / d tau."""
    tau = np.asarray(tau, dtype=float)
    t2 = tau * tau
    return -6.0 * t2 + 6.0 * tau + (3.0 * t2 - 4.0 * tau + 1.0) * alpha + (3.0 * t2 - 2.0 * tau) * beta


def warp_basis(tau):
    """Partial derivatives of the warp w.r.t. alpha and beta."""
    tau = np.asarray(tau, dtype=float)
    t2 = tau * tau
    t3 = t2 * tau
    return t3 - 2.0 * t2 + tau, t3 - t2


def warp(tau, alpha: float, beta: float):
    """Monotone time warp of [0, 1]; alpha and beta are the end slopes."""
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr < 0) or np.any(tau_arr > 1):
        raise ValueError("tau must lie in [0, 1]")
    for name, v in (("alpha", alpha), ("beta", beta)):
        if not WARP_MIN <= v <= WARP_MAX:
            raise ValueError(f"{name}={v} outside [{WARP_MIN}, {WARP_MAX}]")
    out = warp_values(tau_arr, alpha, beta)
    return float(out) if out.ndim == 0 else out


def wrap_phase(theta):
    """Map angles to (-pi, pi]; values already inside are returned unchanged."""
    theta = np.asarray(theta, dtype=float)
    inside = (theta > -math.pi) & (theta <= math.pi)
    wrapped = math.pi - np.remainder(math.pi - theta, 2 * math.pi)
    return np.where(inside, theta, wrapped)


@dataclass
class VibratoParams:
    """Per-note vibrato parameters of one song (arrays indexed by note)."""

    omega: np.ndarray
    theta: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    @classmethod
    def defaults(cls, n: int, omega: float = FALLBACK_OMEGA, theta: float = 0.0) -> "VibratoParams":
        return cls(np.full(n, omega), np.full(n, theta), np.ones(n), np.ones(n))

    def copy(self) -> "VibratoParams":
        return VibratoParams(self.omega.copy(), self.theta.copy(), self.alpha.copy(), self.beta.copy())

    def to_dict(self) -> dict:
        return {"omega": self.omega.tolist(), "theta": wrap_phase(self.theta).tolist(),
                "alpha": self.alpha.tolist(), "beta": self.beta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "VibratoParams":
        return cls(*(np.array(d[k], dtype=float) for k in ("omega", "theta", "alpha", "beta")))

    def __eq__(self, other) -> bool:
        return isinstance(other, VibratoParams) and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("omega", "theta", "alpha", "beta"))


@dataclass
class SustainModel:
    mlp: nn.Mlp
    standardizer: Standardizer
    default_omega: float = FALLBACK_OMEGA
    default_theta: float = 0.0
    params: dict[str, VibratoParams] = field(default_factory=dict)

    @classmethod
    def create(cls, seed: int, hidden=nn.DEFAULT_HIDDEN, activation: str = "tanh"):
        mlp = nn.init_mlp((SUSTAIN_DIM, *hidden, 1), seed, activation)
        return cls(mlp, identity_standardizer(SUSTAIN_DIM, SUSTAIN_REAL_DIMS))

    def default_params(self, n: int) -> VibratoParams:
        return VibratoParams.defaults(n, self.default_omega, self.default_theta)

    def to_dict(self) -> dict:
        return {"mlp": self.mlp.to_dict(), "standardizer": self.standardizer.to_dict(),
                "default_omega": self.default_omega, "default_theta": self.default_theta,
                "params": {k: v.to_dict() for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "SustainModel":
        return cls(nn.Mlp.from_dict(d["mlp"]), Standardizer.from_dict(d["standardizer"]),
                   float(d["default_omega"]), float(d["default_theta"]),
                   {k: VibratoParams.from_dict(v) for k, v in d.get("params", {}).items()})

    def __eq__(self, other) -> bool:
        return (isinstance(other, SustainModel) and self.mlp == other.mlp
                and self.standardizer == other.standardizer
                and self.default_omega == other.default_omega
                and self.default_theta == other.default_theta
                and self.params == other.params)


def _note_params(model: SustainModel, params: VibratoParams | None, i: int):
    if params is None:
        return model.default_omega, model.default_theta, 1.0, 1.0
    return params.omega[i], params.theta[i], params.alpha[i], params.beta[i]


def _phase(times, onset, dur, omega, theta, alpha, beta):
    tau = np.clip((times - onset) / dur, 0.0, 1.0)
    return tau, omega * warp_values(tau, alpha, beta) * dur + theta


def depth(model: SustainModel, score: Score, i: int, times, offsets=None) -> np.ndarray:
    ctx = sustain_contexts(score, i, times, offsets)
    return nn.forward(model.mlp, model.standardizer.apply(ctx))


def mononote_values(model: SustainModel, score: Score, i: int, times, offsets=None,
                    params: VibratoParams | None = None) -> np.ndarray:
    """Vibrato deviation of note i in semitones; ``params=None`` uses the defaults."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    T = score.corrected_onsets(offsets)
    omega, theta, alpha, beta = _note_params(model, params, i)
    amp = depth(model, score, i, times, offsets)
    _, s = _phase(times, T[i], T[i + 1] - T[i], omega, theta, alpha, beta)
    return amp * np.sin(s)


def mononote_value(model: SustainModel, score: Score, i: int, t: float, offsets=None,
                   params: VibratoParams | None = None) -> float:
    return float(mononote_values(model, score, i, [t], offsets, params)[0])


def predict_mononote(model: SustainModel, score: Score, i: int, grid: FrameGrid, offsets=None,
                     params: VibratoParams | None = None) -> Segment | None:
    """Samples of note i's vibrato over its frames; None for a silent note."""
    if score.notes[i].is_silent:
        return None
    T = score.corrected_onsets(offsets)
    a, b = grid.frame_range(T[i], T[i + 1])
    times = np.clip(grid.times[a:b], T[i], T[i + 1])
    if len(times) == 0:
        return Segment(a, np.zeros(0))
    return Segment(a, mononote_values(model, score, i, times, offsets, params))


def vibrato_param_gradients(model: SustainModel, score: Score, i: int, t: float, upstream: float,
                            offsets=None, params: VibratoParams | None = None) -> dict:
    """Gradients of upstream * M_i(t) w.r.t. theta, alpha, beta and the depth network."""
    T = score.corrected_onsets(offsets)
    omega, theta, alpha, beta = _note_params(model, params, i)
    dur = T[i + 1] - T[i]
    ctx = model.standardizer.apply(sustain_contexts(score, i, [t], offsets)[0])
    amp = nn.forward(model.mlp, ctx)
    tau, s = _phase(np.array([t]), T[i], dur, omega, theta, alpha, beta)
    ba, bb = warp_basis(tau)
    common = float(upstream * amp * math.cos(s[0]))
    return {
        "theta": common,
        "alpha": common * omega * dur * float(ba[0]),
        "beta": common * omega * dur * float(bb[0]),
        "mlp": nn.backward(model.mlp, ctx, [upstream * math.sin(s[0])]),
    }


def clamp_warp(model: SustainModel) -> SustainModel:
    for p in model.params.values():
        np.clip(p.alpha, WARP_MIN, WARP_MAX, out=p.alpha)
        np.clip(p.beta, WARP_MIN, WARP_MAX, out=p.beta)
    return model


# --- batched evaluation over a whole score ---------------------------------

@dataclass
class MononoteBatch:
    """All (frame, note) pairs of the sung notes of a score."""

    contexts: np.ndarray
    frame: np.ndarray
    weight: np.ndarray
    note: np.ndarray
    tau: np.ndarray
    dur: np.ndarray


def mononote_batch(score: Score, layout: Layout) -> MononoteBatch | None:
    T = layout.onsets
    times = layout.grid.times
    ctxs, frames, weights, notes, taus, durs = [], [], [], [], [], []
    for j, note in enumerate(score.notes):
        a, b, w = layout.mononotes[j]
        if note.is_silent or b <= a:
            continue
        d = T[j + 1] - T[j]
        tt = np.clip(times[a:b], T[j], T[j + 1])
        c = np.tile(sustain_static(score, j), (b - a, 1))
        c[:, SU_DURATION] = d
        c[:, SU_FORWARD] = tt - T[j]
        c[:, SU_BACKWARD] = T[j + 1] - tt
        ctxs.append(c)
        frames.append(np.arange(a, b))
        weights.append(w)
        notes.append(np.full(b - a, j))
        taus.append((tt - T[j]) / d)
        durs.append(np.full(b - a, d))
    if not ctxs:
        return None
    cat = np.concatenate
    return MononoteBatch(cat(ctxs), cat(frames), cat(weights), cat(notes), cat(taus), cat(durs))


def batch_phase(batch: MononoteBatch, params: VibratoParams) -> np.ndarray:
    j = batch.note
    return (params.omega[j] * warp_values(batch.tau, params.alpha[j], params.beta[j]) * batch.dur
            + params.theta[j])


def sustain_track(model: SustainModel, score: Score, grid: FrameGrid, offsets=None,
                  params: VibratoParams | None = None, layout: Layout | None = None) -> np.ndarray:
    """Enveloped vibrato part of the assembled trajectory."""
    if layout is None:
        layout = make_layout(score.corrected_onsets(offsets), grid)
    batch = mononote_batch(score, layout)
    if batch is None:
        return np.zeros(grid.count)
    if params is None:
        params = model.default_params(len(score))
    amp = nn.forward(model.mlp, model.standardizer.apply(batch.contexts))
    values = amp * np.sin(batch_phase(batch, params))
    return np.bincount(batch.frame, weights=batch.weight * values, minlength=grid.count)
