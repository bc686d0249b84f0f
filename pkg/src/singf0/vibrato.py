"""Per-note vibrato rate and phase from the transition-only residual."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envelope import F0Track, GridMismatch


@dataclass(frozen=True)
class VibratoConfig:
    band_hz: tuple[float, float] = (3.0, 8.0)
    pad_factor: int = 4
    min_magnitude: float = 0.05
    median_factor: float = 3.0
    trim: float = 0.1
    min_duration: float = 0.4


@dataclass(frozen=True)
class VibratoEstimate:
    note_index: int
    omega: float
    theta: float
    magnitude: float
    detected: bool


def residual(target: F0Track, transition_synth: F0Track) -> F0Track:
    """Target minus transition-only synthesis; unvoiced frames are zeroed."""
    if not target.grid.matches(transition_synth.grid):
        raise GridMismatch("target and synthesis grids differ")
    diff = np.where(target.voiced, target.log_f0 - transition_synth.log_f0, 0.0)
    return F0Track(target.grid, diff, target.voiced.copy())


def spectrum(segment: np.ndarray, frame_period: float, pad_factor: int = 4):
    """Hann-windowed, zero-padded amplitude spectrum of a mean-removed segment.

    Scaled so a sinusoid of amplitude a peaks at about a.
    """
    x = np.asarray(segment, dtype=float)
    x = x - x.mean()
    win = np.hanning(len(x))
    nfft = 1 << int(math.ceil(math.log2(max(pad_factor, 1) * len(x))))
    mag = np.abs(np.fft.rfft(x * win, nfft)) * 2.0 / win.sum()
    freqs = np.fft.rfftfreq(nfft, frame_period)
    return freqs, mag


def _parabolic(a: float, b: float, c: float) -> tuple[float, float]:
    """Vertex offset (in bins) and height of the parabola through three samples."""
    den = a - 2.0 * b + c
    if den == 0:
        return 0.0, b
    p = 0.5 * (a - c) / den
    return p, b - 0.25 * (a - c) * p


def _fit_phase(x: np.ndarray, win: np.ndarray, omega: float, frame_period: float) -> float:
    """Phase theta of the windowed least-squares fit x ~ a*sin(omega*t + theta), t from 0."""
    t = np.arange(len(x)) * frame_period
    basis = np.stack([np.sin(omega * t), np.cos(omega * t)], axis=1)
    sw = np.sqrt(win)
    coef, *_ = np.linalg.lstsq(basis * sw[:, None], x * sw, rcond=None)
    return math.atan2(coef[1], coef[0])


def estimate_note(segment, frame_period: float, note_index: int = -1,
                  config: VibratoConfig = VibratoConfig(), lead: float = 0.0,
                  default_omega: float = float("nan")) -> VibratoEstimate:
    """Peak-pick the vibrato in one residual segment.

    The phase is referenced to ``lead`` seconds before the first sample (the
    note onset when the segment is a trimmed note interior).
    """
    x = np.asarray(segment, dtype=float)
    miss = VibratoEstimate(note_index, default_omega, 0.0, 0.0, False)
    if len(x) * frame_period < config.min_duration or len(x) < 4:
        return miss
    freqs, mag = spectrum(x, frame_period, config.pad_factor)
    lo, hi = config.band_hz
    band = np.flatnonzero((freqs >= lo) & (freqs <= hi))
    band = band[(band > 0) & (band < len(mag) - 1)]
    peaks = [k for k in band if mag[k] > mag[k - 1] and mag[k] >= mag[k + 1]]
    if not peaks:
        return miss
    k = max(peaks, key=lambda j: mag[j])
    floor = 1e-12
    la, lb, lc = np.log(np.maximum(mag[k - 1:k + 2], floor))
    p, height = _parabolic(la, lb, lc)
    magnitude = float(np.exp(height))
    # Median over the whole spectrum above DC: the main lobe of a short
    # segment can fill the entire search band.
    noise = float(np.median(mag[1:]))
    if magnitude <= max(config.min_magnitude, config.median_factor * noise):
        return VibratoEstimate(note_index, default_omega, 0.0, magnitude, False)
    df = freqs[1] - freqs[0]
    freq = float(np.clip(freqs[k] + p * df, lo, hi))
    omega = 2.0 * math.pi * freq
    centered = x - x.mean()
    theta0 = _fit_phase(centered, np.hanning(len(x)), omega, frame_period)
    theta = math.remainder(theta0 - omega * lead, 2.0 * math.pi)
    return VibratoEstimate(note_index, omega, theta, magnitude, True)


def analysis_range(onset: float, end: float, trim: float) -> tuple[float, float]:
    d = end - onset
    return onset + trim * d, end - trim * d


def estimate_song(resid: F0Track, onsets, silent, config: VibratoConfig = VibratoConfig(),
                  default_omega: float = float("nan")) -> list[VibratoEstimate]:
    """Estimate every note of one song; silent notes are never detected.

    ``onsets`` holds N+1 values (note onsets and the end time).
    """
    T = np.asarray(onsets, dtype=float)
    grid = resid.grid
    out = []
    for i, is_silent in enumerate(silent):
        if is_silent:
            out.append(VibratoEstimate(i, default_omega, 0.0, 0.0, False))
            continue
        lo, hi = analysis_range(T[i], T[i + 1], config.trim)
        a, b = grid.frame_range(lo, hi)
        seg = resid.log_f0[a:b]
        voiced = resid.voiced[a:b]
        if voiced.sum() * grid.period < config.min_duration:
            out.append(VibratoEstimate(i, default_omega, 0.0, 0.0, False))
            continue
        lead = grid.start + a * grid.period - T[i]
        out.append(estimate_note(np.where(voiced, seg, 0.0), grid.period, i, config, lead,
                                 default_omega))
    return out
