"""Singing F0 generation from scores by transition and sustain decomposition.

The trajectory is an envelope-weighted sum of note-pair transitions
(dinotes) and single-note vibratos (mononotes), each produced by a small
feed-forward network.
"""

from .dataio import (DataError, ModelFormatError, Song, SyntheticSpec, VersionError,
                     generate_synthetic, load_corpus, load_model, read_f0, save_model, write_f0)
from .envelope import F0Track, FrameGrid, assemble
from .score import Note, OnsetType, Score, ScoreError, load_score, save_score, validate_score
from .sustain import SustainModel, VibratoParams, warp
from .trainer import TrainConfig, TrainingError, TrainReport, synthesize, train
from .transition import TransitionModel
from .vibrato import VibratoConfig, VibratoEstimate, estimate_note

__version__ = "0.1.0"

__all__ = [
    "DataError", "F0Track", "FrameGrid", "ModelFormatError", "Note", "OnsetType", "Score",
    "ScoreError", "Song", "SustainModel", "SyntheticSpec", "TrainConfig", "TrainReport",
    "TrainingError", "TransitionModel", "VersionError", "VibratoConfig", "VibratoEstimate",
    "VibratoParams", "assemble", "estimate_note", "generate_synthetic", "load_corpus",
    "load_model", "load_score", "read_f0", "save_model", "save_score", "synthesize", "train",
    "validate_score", "warp", "write_f0",
]
