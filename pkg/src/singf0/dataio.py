"""Corpus files, model files and the synthetic ground-truth corpus generator.

Hz <-> semitone conversion happens only in this module.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .envelope import F0Track, FrameGrid, Segment, assemble, make_layout
from .score import (Note, OnsetType, Score, ScoreError, load_score, pair_pitches, save_score,
                    validate_score)
from .sustain import SustainModel
from .transition import TransitionModel

FORMAT_VERSION = 1


class DataError(ValueError):
    """Unreadable or inconsistent input data."""


class ModelFormatError(DataError):
    pass


class VersionError(ModelFormatError):
    pass


def hz_to_semitones(f0_hz):
    return 69.0 + 12.0 * np.log2(np.asarray(f0_hz, dtype=float) / 440.0)


def semitones_to_hz(semitones):
    return 440.0 * np.exp2((np.asarray(semitones, dtype=float) - 69.0) / 12.0)


def score_grid(score: Score) -> FrameGrid:
    return FrameGrid.covering(score.start, score.end, score.frame_period)


# --- F0 text files ---------------------------------------------------------

def read_f0(path, period: float | None = None) -> F0Track:
    """Read ``time_s<TAB>f0_hz`` lines; 0 Hz marks an unvoiced frame."""
    times, hz = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 tab-separated fields")
            try:
                t, v = float(parts[0]), float(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: not a number") from None
            if not (math.isfinite(t) and math.isfinite(v)) or v < 0:
                raise DataError(f"{path}:{lineno}: invalid value")
            times.append(t)
            hz.append(v)
    if not times:
        raise DataError(f"{path}: no frames")
    times = np.array(times)
    hz = np.array(hz)
    if period is None:
        period = float(times[1] - times[0]) if len(times) > 1 else 0.005
    expected = times[0] + np.arange(len(times)) * period
    bad = np.flatnonzero(np.abs(times - expected) > 1e-6)
    if len(bad):
        raise DataError(f"{path}:{bad[0] + 1}: frame time off the {period} s grid")
    voiced = hz > 0
    semis = np.zeros(len(hz))
    semis[voiced] = hz_to_semitones(hz[voiced])
    return F0Track(FrameGrid(float(times[0]), len(times), period), semis, voiced)


def write_f0(path, track: F0Track) -> None:
    hz = np.where(track.voiced, semitones_to_hz(track.log_f0), 0.0)
    with open(path, "w") as f:
        for t, v in zip(track.times, hz):
            f.write(f"{float(t)!r}\t{float(v)!r}\n")


# --- corpus ----------------------------------------------------------------

@dataclass
class Song:
    song_id: str
    score: Score
    target: F0Track


def check_song(song: Song) -> None:
    problems = [str(p) for p in validate_score(song.score)]
    if problems:
        raise DataError(f"song {song.song_id}: invalid score: {'; '.join(problems)}")
    if not song.target.grid.matches(score_grid(song.score)):
        g, s = song.target.grid, score_grid(song.score)
        raise DataError(f"song {song.song_id}: F0 grid (start {g.start}, {g.count} x {g.period}) "
                        f"does not match score grid (start {s.start}, {s.count} x {s.period})")


def check_corpus(corpus: Sequence[Song]) -> None:
    ids = [s.song_id for s in corpus]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate song ids")
    for s in corpus:
        check_song(s)


def load_corpus(score_paths: Sequence, f0_paths: Sequence) -> list[Song]:
    if len(score_paths) != len(f0_paths):
        raise DataError(f"{len(score_paths)} score files but {len(f0_paths)} F0 files")
    corpus = []
    for sp, fp in zip(score_paths, f0_paths):
        try:
            score = load_score(sp)
        except (ScoreError, OSError) as e:
            raise DataError(f"{sp}: {e}") from None
        track = read_f0(fp, score.frame_period)
        corpus.append(Song(Path(sp).stem, score, track))
    check_corpus(corpus)
    return corpus


# --- model files -----------------------------------------------------------

def model_to_dict(transition: TransitionModel, sustain: SustainModel, metadata: dict | None = None) -> dict:
    return {"format_version": FORMAT_VERSION, "metadata": metadata or {},
            "transition": transition.to_dict(), "sustain": sustain.to_dict()}


def model_from_dict(doc: dict) -> tuple[TransitionModel, SustainModel, dict]:
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be an object")
    for key in ("format_version", "transition", "sustain"):
        if key not in doc:
            raise ModelFormatError(f"model file is missing key '{key}'")
    if doc["format_version"] != FORMAT_VERSION:
        raise VersionError(f"model format_version {doc['format_version']!r} is not supported "
                           f"(expected {FORMAT_VERSION})")
    try:
        tm = TransitionModel.from_dict(doc["transition"])
        sm = SustainModel.from_dict(doc["sustain"])
    except KeyError as e:
        raise ModelFormatError(f"model file is missing key {e}") from None
    except (TypeError, ValueError) as e:
        raise ModelFormatError(f"malformed model: {e}") from None
    return tm, sm, doc.get("metadata", {})


def save_model(path, transition: TransitionModel, sustain: SustainModel,
               metadata: dict | None = None) -> None:
    with open(path, "w") as f:
        json.dump(model_to_dict(transition, sustain, metadata), f)


def load_model(path) -> tuple[TransitionModel, SustainModel, dict]:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ModelFormatError(f"{path}: line {e.lineno}: {e.msg}") from None
    return model_from_dict(doc)


# --- synthetic corpus ------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Parameters of a synthetic corpus with known onset offsets and vibratos.

    ``notes_per_song`` counts the two bracketing rests. Vibrato depth grows
    linearly with note duration across ``vibrato_depth``.
    """

    n_songs: int = 10
    notes_per_song: int = 30
    pitch_range: tuple[float, float] = (55.0, 72.0)
    max_interval: int = 5
    duration_range: tuple[float, float] = (0.25, 0.8)
    rest_duration: float = 0.3
    vibrato_rate_hz: tuple[float, float] = (4.5, 6.5)
    vibrato_depth: tuple[float, float] = (0.0, 0.0)
    jitter: float = 0.0
    noise: float = 0.0
    transition_width: float = 0.12
    frame_period: float = 0.005
    seed: int = 0

    def __post_init__(self):
        for name in ("pitch_range", "duration_range", "vibrato_rate_hz", "vibrato_depth"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
            setattr(self, name, (float(lo), float(hi)))
        if self.n_songs < 0 or self.notes_per_song < 3:
            raise ValueError("need n_songs >= 0 and notes_per_song >= 3")
        if not 0 <= self.jitter <= 0.030:
            raise ValueError(f"jitter bound must lie in [0, 0.030], got {self.jitter}")
        if self.duration_range[0] <= 2 * self.jitter:
            raise ValueError("shortest note must exceed twice the jitter bound")
        if self.max_interval < 1 or self.pitch_range[1] - self.pitch_range[0] < 1:
            raise ValueError("pitch range must allow at least one semitone step")
        if self.noise < 0 or self.transition_width <= 0 or self.frame_period <= 0:
            raise ValueError("noise must be >= 0, widths and periods > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SongTruth:
    offsets: np.ndarray
    omega: np.ndarray
    theta: np.ndarray
    depth: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("offsets", "omega", "theta", "depth")}


@dataclass
class GroundTruth:
    spec: SyntheticSpec
    songs: dict[str, SongTruth] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "songs": {k: v.to_dict() for k, v in self.songs.items()}}


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def analytic_dinotes(score: Score, onsets, grid: FrameGrid, width: float) -> list[Segment]:
    """Smoothstep transitions of the given width centred on each (shifted) boundary."""
    layout = make_layout(onsets, grid)
    times = grid.times
    segs = []
    for i in range(1, len(score)):
        a, b, _ = layout.dinotes[i]
        p1, p2 = pair_pitches(score, i)
        x = (times[a:b] - layout.onsets[i]) / width + 0.5
        segs.append(Segment(a, p1 + (p2 - p1) * smoothstep(x)))
    return segs


def vibrato_depth_for(duration: float, spec: SyntheticSpec) -> float:
    lo, hi = spec.vibrato_depth
    dlo, dhi = spec.duration_range
    frac = 0.0 if dhi == dlo else (duration - dlo) / (dhi - dlo)
    return lo + (hi - lo) * float(np.clip(frac, 0.0, 1.0))


def _random_score(spec: SyntheticSpec, rng: np.random.Generator) -> Score:
    lo, hi = spec.pitch_range
    pitch = float(rng.integers(int(math.ceil(lo)), int(math.floor(hi)) + 1))
    n_sung = spec.notes_per_song - 2
    onset_types = list(OnsetType)
    notes = [Note(0.0, spec.rest_duration, pitch, True, OnsetType.DEFAULT)]
    t = spec.rest_duration
    for k in range(n_sung):
        if k:
            step = int(rng.integers(1, spec.max_interval + 1)) * (1 if rng.random() < 0.5 else -1)
            if not lo <= pitch + step <= hi:
                step = -step
            if not lo <= pitch + step <= hi:
                step = 1 if pitch + 1 <= hi else -1
            pitch += step
        dur = float(rng.uniform(*spec.duration_range))
        notes.append(Note(t, dur, pitch, False, onset_types[int(rng.integers(3))]))
        t += dur
    notes.append(Note(t, spec.rest_duration, pitch, True, OnsetType.DEFAULT))
    return Score(tuple(notes), spec.frame_period)


def synthesize_target(score: Score, spec: SyntheticSpec, truth: SongTruth,
                      rng: np.random.Generator | None = None) -> F0Track:
    """Target track of one song under the ground-truth model."""
    grid = score_grid(score)
    onsets = score.corrected_onsets(truth.offsets)
    dinotes = analytic_dinotes(score, onsets, grid, spec.transition_width)
    layout = make_layout(onsets, grid)
    times = grid.times
    mononotes = []
    for j, note in enumerate(score.notes):
        a, b, _ = layout.mononotes[j]
        if note.is_silent or truth.depth[j] == 0:
            mononotes.append(None)
            continue
        tt = times[a:b] - onsets[j]
        mononotes.append(Segment(a, truth.depth[j] * np.sin(truth.omega[j] * tt + truth.theta[j])))
    track = assemble(dinotes, mononotes, onsets, grid, score.silent)
    if rng is not None and spec.noise > 0:
        track.log_f0 = track.log_f0 + np.where(track.voiced, rng.normal(0.0, spec.noise, grid.count), 0.0)
    return track


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[Song], GroundTruth]:
    rng = np.random.default_rng(spec.seed)
    corpus = []
    truth = GroundTruth(spec)
    width = len(str(max(spec.n_songs - 1, 0)))
    for s in range(spec.n_songs):
        score = _random_score(spec, rng)
        n = len(score)
        sung = ~score.silent
        offsets = np.where(sung, rng.uniform(-spec.jitter, spec.jitter, n), 0.0)
        offsets[0] = 0.0
        rate = rng.uniform(*spec.vibrato_rate_hz, n)
        theta = rng.uniform(-math.pi, math.pi, n)
        depth = np.array([vibrato_depth_for(nt.duration, spec) if not nt.is_silent else 0.0
                          for nt in score.notes])
        st = SongTruth(offsets, 2.0 * math.pi * rate, theta, depth)
        song_id = f"song{s:0{width}d}"
        corpus.append(Song(song_id, score, synthesize_target(score, spec, st, rng)))
        truth.songs[song_id] = st
    return corpus, truth


def write_corpus(out_dir, corpus: Sequence[Song], truth: GroundTruth | None = None) -> None:
    out = Path(out_dir)
    (out / "scores").mkdir(parents=True, exist_ok=True)
    (out / "f0").mkdir(parents=True, exist_ok=True)
    for song in corpus:
        save_score(out / "scores" / f"{song.song_id}.json", song.score)
        write_f0(out / "f0" / f"{song.song_id}.f0", song.target)
    if truth is not None:
        with open(out / "ground_truth.json", "w") as f:
            json.dump(truth.to_dict(), f, indent=1)


def corpus_paths(directory) -> tuple[list[Path], list[Path]]:
    d = Path(directory)
    scores = sorted((d / "scores").glob("*.json"))
    return scores, [d / "f0" / f"{p.stem}.f0" for p in scores]
