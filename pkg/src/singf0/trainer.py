"""Five-stage training of the transition and sustain models.

Stages:
  1. transition network only, offsets fixed at zero;
  2. transition network plus per-note onset offsets (clamped);
  3. transition-only resynthesis, vibrato rate/phase estimation from the residual;
  4. sustain network plus per-note phase and warp slopes, transition frozen;
  5. both networks (and vibrato auxiliaries) at an exponentially decaying rate.

The loss is always the L1 distance between the full weighted-sum trajectory
and the target over the target's voiced frames.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .dataio import Song, check_corpus, score_grid
from .envelope import F0Track, FrameGrid, make_layout, voicing
from .score import SUSTAIN_REAL_DIMS, TR_POSITION, TRANSITION_REAL_DIMS, Score, fit_standardizer
from .sustain import (WARP_MAX, WARP_MIN, FALLBACK_OMEGA, SustainModel, VibratoParams,
                      mononote_batch, sustain_track, warp_basis, warp_values, wrap_phase)
from .transition import MAX_OFFSET, TransitionModel, dinote_batch, transition_track
from .vibrato import VibratoConfig, VibratoEstimate, estimate_song, residual

log = logging.getLogger(__name__)

class TrainingError(RuntimeError):
    """Numeric failure during training (e.g. a non-finite loss)."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    # Epochs of stages 1, 2, 4 and 5 (stage 3 is a single estimation pass).
    stage_epochs: tuple[int, int, int, int] = (10, 10, 60, 10)
    decay: float = 0.75
    seed: int = 0
    # Rates of the per-note auxiliaries; None means the network rate.
    offset_learning_rate: float | None = 3e-4
    vibrato_learning_rate: float | None = None
    max_offset: float = MAX_OFFSET
    train_offsets_in_joint: bool = False
    reset_moments: bool = True
    # Frames per optimizer step within a song; None means one step per song.
    frames_per_step: int | None = 100
    hidden: tuple[int, ...] = nn.DEFAULT_HIDDEN
    activation: str = "tanh"
    vibrato: VibratoConfig = field(default_factory=VibratoConfig)

    def __post_init__(self):
        self.stage_epochs = tuple(int(e) for e in self.stage_epochs)
        self.hidden = tuple(int(h) for h in self.hidden)
        if isinstance(self.vibrato, dict):
            v = dict(self.vibrato)
            if "band_hz" in v:
                v["band_hz"] = tuple(v["band_hz"])
            self.vibrato = VibratoConfig(**v)
        if len(self.stage_epochs) != 4 or any(e < 0 for e in self.stage_epochs):
            raise ValueError(f"stage_epochs must be four non-negative ints, got {self.stage_epochs}")
        if not 0 < self.decay <= 1:
            raise ValueError(f"decay must lie in (0, 1], got {self.decay}")
        for name in ("learning_rate", "offset_learning_rate", "vibrato_learning_rate"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be > 0, got {v}")
        if self.frames_per_step is not None and self.frames_per_step < 1:
            raise ValueError("frames_per_step must be >= 1")

    @property
    def offset_rate(self) -> float:
        return self.learning_rate if self.offset_learning_rate is None else self.offset_learning_rate

    @property
    def vibrato_rate(self) -> float:
        return self.learning_rate if self.vibrato_learning_rate is None else self.vibrato_learning_rate

    def stage5_rate(self, epoch: int) -> float:
        return self.learning_rate * self.decay ** epoch

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_epochs"] = list(self.stage_epochs)
        d["hidden"] = list(self.hidden)
        d["vibrato"]["band_hz"] = list(self.vibrato.band_hz)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class StageReport:
    stage: int
    epoch_losses: list[float] = field(default_factory=list)
    start_loss: float = float("nan")
    end_loss: float = float("nan")
    seconds: float = 0.0


@dataclass
class TrainReport:
    stages: list[StageReport] = field(default_factory=list)
    estimates: dict[str, list[VibratoEstimate]] = field(default_factory=dict)
    final_loss: float = float("nan")

    def stage(self, k: int) -> StageReport:
        return next(s for s in self.stages if s.stage == k)

    def loss_rows(self) -> list[tuple[int, int, float]]:
        return [(s.stage, e, v) for s in self.stages for e, v in enumerate(s.epoch_losses)]

    def to_dict(self, transition: TransitionModel | None = None,
                sustain: SustainModel | None = None) -> dict:
        out = {
            "final_loss": self.final_loss,
            "stages": [asdict(s) for s in self.stages],
        }
        if transition is not None and transition.offsets:
            allo = np.concatenate(list(transition.offsets.values()))
            out["offsets"] = {"mean_abs": float(np.mean(np.abs(allo))),
                              "max_abs": float(np.max(np.abs(allo)))}
        if sustain is not None and sustain.params:
            summary = {}
            for name in ("omega", "theta", "alpha", "beta"):
                v = np.concatenate([getattr(p, name) for p in sustain.params.values()])
                summary[name] = {"min": float(v.min()), "median": float(np.median(v)),
                                 "max": float(v.max())}
            out["vibrato"] = summary
            out["default_omega"] = sustain.default_omega
        out["detected_notes"] = sum(e.detected for ests in self.estimates.values() for e in ests)
        return out


# --- loss ------------------------------------------------------------------

def loss_l1(pred: F0Track, target: F0Track) -> float:
    """Mean absolute semitone error over the target's voiced frames."""
    if not pred.grid.matches(target.grid):
        raise ValueError("prediction and target grids differ")
    mask = target.voiced
    if not mask.any():
        raise ValueError("target has no voiced frames")
    return float(np.mean(np.abs(pred.log_f0[mask] - target.log_f0[mask])))


def epoch_order(n_songs: int, seed: int, epoch: int) -> np.ndarray:
    """Deterministic shuffled song order for one epoch."""
    return np.random.default_rng([seed, epoch]).permutation(n_songs)


def offset_bounds(song: Song, max_offset: float) -> np.ndarray:
    """Per-note offset limits; the first onset stays pinned to the score start.

    Limits shrink below ``max_offset`` only for notes too short to keep the
    corrected onsets in order.
    """
    d = song.score.durations
    neighbor = np.minimum(np.concatenate([[np.inf], d[:-1]]), d)
    b = np.minimum(max_offset, 0.49 * neighbor)
    b[0] = 0.0
    return b


# --- per-song forward / gradient -------------------------------------------

@dataclass
class SongGradients:
    loss: float
    n_voiced: int
    transition: list[np.ndarray] | None = None
    offsets: np.ndarray | None = None
    sustain: list[np.ndarray] | None = None
    theta: np.ndarray | None = None
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None


class _SongState:
    """Cached per-song quantities that depend only on the (fixed) onsets."""

    def __init__(self, song: Song, offsets: np.ndarray):
        self.song = song
        self.grid = score_grid(song.score)
        self.frozen_transition: np.ndarray | None = None
        self.rebuild(offsets)

    def rebuild(self, offsets):
        score = self.song.score
        self.layout = make_layout(score.corrected_onsets(offsets), self.grid)
        self.dinotes = dinote_batch(score, self.layout)
        self.mononotes = mononote_batch(score, self.layout)


def frame_chunks(n_frames: int, size: int | None) -> list[tuple[int, int]]:
    if size is None or size >= n_frames:
        return [(0, n_frames)]
    return [(a, min(a + size, n_frames)) for a in range(0, n_frames, size)]


def _rows(frame: np.ndarray, lo: int, hi: int, n_frames: int):
    if lo == 0 and hi == n_frames:
        return slice(None)
    return (frame >= lo) & (frame < hi)


def song_pass(tm: TransitionModel, sm: SustainModel, state: _SongState, vib: VibratoParams,
              use_transition: bool = True, use_sustain: bool = True,
              grad_transition: bool = False, grad_offsets: bool = False,
              grad_sustain: bool = False, frames: tuple[int, int] | None = None) -> SongGradients:
    """L1 loss of one song over the frame range ``frames`` and the requested gradients.

    The loss is averaged over the voiced target frames of the range.
    """
    target = state.song.target
    n_frames = state.grid.count
    n_notes = len(state.song.score)
    lo, hi = (0, n_frames) if frames is None else frames
    mask = target.voiced[lo:hi]
    n_voiced = int(mask.sum())
    if n_voiced == 0:
        return SongGradients(0.0, 0)
    pred = np.zeros(hi - lo)

    need_t = grad_transition or grad_offsets
    if use_transition:
        if state.frozen_transition is not None and not need_t:
            pred += state.frozen_transition[lo:hi]
        else:
            sel = _rows(state.dinotes.frame, lo, hi, n_frames)
            t_frame = state.dinotes.frame[sel] - lo
            t_weight = state.dinotes.weight[sel]
            xt = tm.standardizer.apply(state.dinotes.contexts[sel])
            yt = nn.forward(tm.mlp, xt) + state.dinotes.pitch[sel]
            pred += np.bincount(t_frame, weights=t_weight * yt, minlength=hi - lo)
    mb = state.mononotes
    if use_sustain and mb is not None:
        sel = _rows(mb.frame, lo, hi, n_frames)
        s_frame = mb.frame[sel] - lo
        s_weight = mb.weight[sel]
        s_note = mb.note[sel]
        xs = sm.standardizer.apply(mb.contexts[sel])
        amp = nn.forward(sm.mlp, xs)
        omega = vib.omega[s_note]
        tau = mb.tau[sel]
        dur = mb.dur[sel]
        phase = omega * warp_values(tau, vib.alpha[s_note], vib.beta[s_note]) * dur + vib.theta[s_note]
        sin = np.sin(phase)
        pred += np.bincount(s_frame, weights=s_weight * amp * sin, minlength=hi - lo)

    diff = pred - target.log_f0[lo:hi]
    loss = float(np.mean(np.abs(diff[mask])))
    out = SongGradients(loss, n_voiced)
    if not (need_t or grad_sustain):
        return out
    g = np.where(mask, np.sign(diff), 0.0) / n_voiced

    if need_t:
        gr = nn.backward(tm.mlp, xt, g[t_frame] * t_weight)
        if grad_transition:
            out.transition = gr.params()
        if grad_offsets:
            d_pos = gr.inputs[:, TR_POSITION] / tm.standardizer.std[TR_POSITION]
            out.offsets = -np.bincount(state.dinotes.boundary[_rows(state.dinotes.frame, lo, hi, n_frames)],
                                       weights=d_pos, minlength=n_notes)
    if grad_sustain:
        if mb is None:
            out.sustain = [np.zeros_like(p) for p in sm.mlp.params()]
            out.theta, out.alpha, out.beta = (np.zeros(n_notes) for _ in range(3))
            return out
        up = g[s_frame] * s_weight
        out.sustain = nn.backward(sm.mlp, xs, up * sin).params()
        common = up * amp * np.cos(phase)
        scale = common * omega * dur
        ba, bb = warp_basis(tau)
        out.theta = np.bincount(s_note, weights=common, minlength=n_notes)
        out.alpha = np.bincount(s_note, weights=scale * ba, minlength=n_notes)
        out.beta = np.bincount(s_note, weights=scale * bb, minlength=n_notes)
    return out


# --- synthesis -------------------------------------------------------------

def synthesize(tm: TransitionModel, sm: SustainModel, score: Score, grid: FrameGrid | None = None,
               offsets=None, params: VibratoParams | None = None,
               vibrato: bool = True) -> F0Track:
    """Assembled F0 of a score; frames inside silent notes are unvoiced.

    With ``vibrato=False`` the enveloped mononote sum is left out.
    """
    if grid is None:
        grid = score_grid(score)
    layout = make_layout(score.corrected_onsets(offsets), grid)
    values = transition_track(tm, score, grid, layout=layout)
    if vibrato:
        values = values + sustain_track(sm, score, grid, params=params, layout=layout)
    return F0Track(grid, values, voicing(layout, score.silent))


# --- training --------------------------------------------------------------

def fit_standardizers(tm: TransitionModel, sm: SustainModel, corpus: Sequence[Song]) -> None:
    tr, su = [], []
    for song in corpus:
        layout = make_layout(song.score.onsets, score_grid(song.score))
        tr.append(dinote_batch(song.score, layout).contexts)
        mb = mononote_batch(song.score, layout)
        if mb is not None:
            su.append(mb.contexts)
    tm.standardizer = fit_standardizer(np.concatenate(tr), TRANSITION_REAL_DIMS)
    if su:
        sm.standardizer = fit_standardizer(np.concatenate(su), SUSTAIN_REAL_DIMS)


def corpus_loss(tm, sm, states, vib, use_transition=True, use_sustain=True) -> float:
    """L1 over all voiced frames of the corpus."""
    total = count = 0
    for k, st in states.items():
        r = song_pass(tm, sm, st, vib[k], use_transition, use_sustain)
        total += r.loss * r.n_voiced
        count += r.n_voiced
    return total / count if count else float("nan")


def estimate_vibratos(tm: TransitionModel, corpus: Sequence[Song], offsets: dict,
                      config: VibratoConfig) -> dict[str, list[VibratoEstimate]]:
    out = {}
    for song in corpus:
        score = song.score
        grid = song.target.grid
        onsets = score.corrected_onsets(offsets[song.song_id])
        synth = F0Track(grid, transition_track(tm, score, grid, offsets[song.song_id]),
                        np.ones(grid.count, dtype=bool))
        out[song.song_id] = estimate_song(residual(song.target, synth), onsets, score.silent, config)
    return out


def init_vibrato_params(estimates: dict[str, list[VibratoEstimate]], sizes: dict[str, int]):
    """Per-note (omega, theta) from the estimates; the median detected rate is the default."""
    rates = [e.omega for ests in estimates.values() for e in ests if e.detected]
    default = float(np.median(rates)) if rates else FALLBACK_OMEGA
    params = {}
    for sid, n in sizes.items():
        p = VibratoParams.defaults(n, default, 0.0)
        for e in estimates.get(sid, []):
            if e.detected:
                p.omega[e.note_index] = e.omega
                p.theta[e.note_index] = e.theta
        params[sid] = p
    return params, default


def train(corpus: Sequence[Song], config: TrainConfig = TrainConfig(),
          progress=None) -> tuple[TransitionModel, SustainModel, TrainReport]:
    """Run the five training stages; returns both models and a report.

    ``progress`` is called as progress(stage, epoch, loss) after each epoch.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty training corpus")
    check_corpus(corpus)
    tm = TransitionModel.create(config.seed, config.hidden, config.activation)
    sm = SustainModel.create(config.seed + 1, config.hidden, config.activation)
    fit_standardizers(tm, sm, corpus)

    ids = [s.song_id for s in corpus]
    offsets = {s.song_id: np.zeros(len(s.score)) for s in corpus}
    bounds = {s.song_id: offset_bounds(s, config.max_offset) for s in corpus}
    vib = {s.song_id: sm.default_params(len(s.score)) for s in corpus}
    states = {s.song_id: _SongState(s, offsets[s.song_id]) for s in corpus}
    report = TrainReport()
    e1, e2, e4, e5 = config.stage_epochs
    global_epoch = 0

    def fresh_optimizers():
        return {
            "transition": nn.AdamState.like(tm.mlp.params(), lr=config.learning_rate),
            "sustain": nn.AdamState.like(sm.mlp.params(), lr=config.learning_rate),
            "offsets": {k: nn.AdamState.like([offsets[k]], lr=config.offset_rate) for k in ids},
            "vibrato": {k: nn.AdamState.like([vib[k].theta, vib[k].alpha, vib[k].beta],
                                             lr=config.vibrato_rate) for k in ids},
        }

    optim = fresh_optimizers()

    def run_stage(stage, n_epochs, *, use_sustain, grad_transition, grad_offsets,
                  grad_sustain, decayed=False):
        nonlocal global_epoch, optim
        rep = StageReport(stage)
        t0 = time.perf_counter()
        use_transition = True
        rep.start_loss = corpus_loss(tm, sm, states, vib, use_transition, use_sustain)
        if n_epochs == 0:
            rep.end_loss = rep.start_loss
            report.stages.append(rep)
            return
        if config.reset_moments:
            optim = fresh_optimizers()
        for epoch in range(n_epochs):
            rate = config.stage5_rate(epoch) if decayed else config.learning_rate
            # Auxiliary rates follow the network rate's schedule.
            ratio = rate / config.learning_rate
            epoch_losses = []
            for idx in epoch_order(len(corpus), config.seed, global_epoch):
                sid = ids[idx]
                st = states[sid]
                for frames in frame_chunks(st.grid.count, config.frames_per_step):
                    res = song_pass(tm, sm, st, vib[sid], True, use_sustain,
                                    grad_transition, grad_offsets, grad_sustain, frames)
                    if not math.isfinite(res.loss):
                        raise TrainingError(f"non-finite loss in song {sid}, stage {stage}, epoch {epoch}")
                    if res.n_voiced == 0:
                        continue
                    epoch_losses.append((res.loss, res.n_voiced))
                    if grad_transition:
                        optim["transition"].step(tm.mlp.params(), res.transition, rate)
                    if grad_sustain:
                        optim["sustain"].step(sm.mlp.params(), res.sustain, rate)
                        v = vib[sid]
                        optim["vibrato"][sid].step([v.theta, v.alpha, v.beta],
                                                   [res.theta, res.alpha, res.beta],
                                                   config.vibrato_rate * ratio)
                        np.clip(v.alpha, WARP_MIN, WARP_MAX, out=v.alpha)
                        np.clip(v.beta, WARP_MIN, WARP_MAX, out=v.beta)
                    if grad_offsets:
                        optim["offsets"][sid].step([offsets[sid]], [res.offsets],
                                                   config.offset_rate * ratio)
                        np.clip(offsets[sid], -bounds[sid], bounds[sid], out=offsets[sid])
                if grad_offsets:
                    st.rebuild(offsets[sid])
            global_epoch += 1
            loss = (sum(l * n for l, n in epoch_losses) / sum(n for _, n in epoch_losses)
                    if epoch_losses else float("nan"))
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss in stage {stage}, epoch {epoch}")
            rep.epoch_losses.append(loss)
            log.info("stage %d epoch %d loss %.5f", stage, epoch, loss)
            if progress is not None:
                progress(stage, epoch, loss)
        rep.end_loss = corpus_loss(tm, sm, states, vib, use_transition, use_sustain)
        rep.seconds = time.perf_counter() - t0
        report.stages.append(rep)

    run_stage(1, e1, use_sustain=False, grad_transition=True, grad_offsets=False,
              grad_sustain=False)
    run_stage(2, e2, use_sustain=False, grad_transition=True, grad_offsets=True,
              grad_sustain=False)

    t0 = time.perf_counter()
    report.estimates = estimate_vibratos(tm, corpus, offsets, config.vibrato)
    new_params, default_omega = init_vibrato_params(report.estimates,
                                                    {s.song_id: len(s.score) for s in corpus})
    for sid, p in new_params.items():
        vib[sid].omega[:] = p.omega
        vib[sid].theta[:] = p.theta
    sm.default_omega = default_omega
    report.stages.append(StageReport(3, seconds=time.perf_counter() - t0))

    # The transition model is frozen in stage 4: cache its contribution.
    for sid, st in states.items():
        st.frozen_transition = transition_track(tm, st.song.score, st.grid, layout=st.layout)
    run_stage(4, e4, use_sustain=True, grad_transition=False, grad_offsets=False,
              grad_sustain=True)
    for st in states.values():
        st.frozen_transition = None

    run_stage(5, e5, use_sustain=True, grad_transition=True,
              grad_offsets=config.train_offsets_in_joint, grad_sustain=True,
              decayed=True)

    report.final_loss = corpus_loss(tm, sm, states, vib)
    tm.offsets = {k: v.copy() for k, v in offsets.items()}
    sm.params = {k: p.copy() for k, p in vib.items()}
    for p in sm.params.values():
        p.theta = wrap_phase(p.theta)
    return tm, sm, report
