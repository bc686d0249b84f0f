"""Command-line interface: train, synth, gen-synth, estimate and eval.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numeric
failure. Every failure prints one line ``singf0: error[<code>]: <message>``
to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .dataio import DataError, SyntheticSpec
from .envelope import F0Track, GridMismatch
from .score import ScoreError, load_score
from .trainer import TrainConfig, TrainingError, loss_l1, synthesize, train
from .transition import transition_track
from .vibrato import estimate_song, residual

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fail(code: int, message: str) -> int:
    print(f"singf0: error[{code}]: {' '.join(str(message).split())}", file=sys.stderr)
    return code


# --- path helpers ----------------------------------------------------------

def _expand(paths, pattern: str) -> list[Path]:
    out = []
    for p in map(Path, paths):
        out.extend(sorted(p.glob(pattern)) if p.is_dir() else [p])
    return out


def _pair_files(scores, f0s) -> tuple[list[Path], list[Path]]:
    """Score files and F0 files matched by file stem; directories are expanded."""
    score_files = _expand(scores, "*.json")
    if not score_files:
        raise DataError("no score files given")
    f0_files = {p.stem: p for p in _expand(f0s, "*.f0")}
    missing = [p.stem for p in score_files if p.stem not in f0_files]
    if missing:
        raise DataError(f"no F0 file for song(s) {', '.join(missing)}")
    return score_files, [f0_files[p.stem] for p in score_files]


def _load_corpus(scores, f0s):
    return dataio.load_corpus(*_pair_files(scores, f0s))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


# --- commands --------------------------------------------------------------

def cmd_train(args) -> int:
    config = TrainConfig()
    if args.config is not None:
        with open(args.config) as f:
            config = TrainConfig.from_dict(json.load(f))
    corpus = _load_corpus(args.scores, args.f0)
    tm, sm, report = train(corpus, config)
    dataio.save_model(args.out_model, tm, sm,
                      {"config": config.to_dict(), "seed": config.seed,
                       "format_version": dataio.FORMAT_VERSION,
                       "songs": [s.song_id for s in corpus]})
    report_path = Path(args.report)
    with open(report_path, "w") as f:
        json.dump(report.to_dict(tm, sm), f, indent=1)
    _write_csv(report_path.with_suffix(".csv"), ["stage", "epoch", "loss_semitones"],
               [(s, e, repr(v)) for s, e, v in report.loss_rows()])
    print(f"final L1 {report.final_loss:.4f} semitones")
    return EXIT_OK


def cmd_synth(args) -> int:
    score = load_score(args.score)
    tm, sm, _ = dataio.load_model(args.model)
    track = synthesize(tm, sm, score, vibrato=not args.no_vibrato)
    dataio.write_f0(args.out_f0, track)
    return EXIT_OK


def cmd_gen_synth(args) -> int:
    with open(args.spec) as f:
        spec = SyntheticSpec.from_dict(json.load(f))
    corpus, truth = dataio.generate_synthetic(spec)
    dataio.write_corpus(args.out_dir, corpus, truth)
    return EXIT_OK


def cmd_estimate(args) -> int:
    corpus = _load_corpus(args.scores, args.f0)
    tm, sm, meta = dataio.load_model(args.model)
    vib_config = TrainConfig.from_dict(meta["config"]).vibrato if "config" in meta else None
    rows = []
    for song in corpus:
        offsets = tm.offsets.get(song.song_id)
        grid = song.target.grid
        synth = F0Track(grid, transition_track(tm, song.score, grid, offsets),
                        np.ones(grid.count, dtype=bool))
        onsets = song.score.corrected_onsets(offsets)
        kwargs = {} if vib_config is None else {"config": vib_config}
        estimates = estimate_song(residual(song.target, synth), onsets, song.score.silent,
                                  default_omega=sm.default_omega, **kwargs)
        for e in estimates:
            rows.append((song.song_id, e.note_index, str(e.detected).lower(),
                         repr(e.omega), repr(e.theta), repr(e.magnitude)))
    _write_csv(args.out_csv, ["song_id", "note_index", "detected", "omega_rad_s", "theta_rad",
                              "magnitude"], rows)
    return EXIT_OK


def cmd_eval(args) -> int:
    score = load_score(args.score)
    target = dataio.read_f0(args.f0, score.frame_period)
    tm, sm, _ = dataio.load_model(args.model)
    # A song seen in training is evaluated with its learned offsets and vibratos.
    song_id = Path(args.score).stem
    track = synthesize(tm, sm, score, target.grid, tm.offsets.get(song_id),
                       sm.params.get(song_id))
    l1 = loss_l1(track, target)
    _write_csv(args.out_csv, ["time_s", "target_semitones", "synth_semitones", "voiced"],
               [(repr(float(t)), repr(float(y)) if v else "", repr(float(s)), int(v))
                for t, y, s, v in zip(target.times, target.log_f0, track.log_f0, target.voiced)])
    print(f"L1 {l1:.6f} semitones over {int(target.voiced.sum())} voiced frames")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="singf0", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train both models on a corpus")
    t.add_argument("--scores", nargs="+", required=True, help="score JSON files or directories")
    t.add_argument("--f0", nargs="+", required=True, help="F0 files or directories")
    t.add_argument("--config", help="TrainConfig JSON")
    t.add_argument("--out-model", required=True)
    t.add_argument("--report", required=True, help="report JSON; losses go to the same name .csv")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="synthesize F0 for a score")
    s.add_argument("--score", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--out-f0", required=True)
    s.add_argument("--no-vibrato", action="store_true", help="leave out the vibrato part")
    s.set_defaults(func=cmd_synth)

    g = sub.add_parser("gen-synth", help="write a synthetic corpus with ground truth")
    g.add_argument("--spec", required=True, help="SyntheticSpec JSON")
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_gen_synth)

    e = sub.add_parser("estimate", help="per-note vibrato estimates as CSV")
    e.add_argument("--scores", nargs="+", required=True)
    e.add_argument("--f0", nargs="+", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--out-csv", required=True)
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("eval", help="L1 error and target/synthesis curves as CSV")
    v.add_argument("--score", required=True)
    v.add_argument("--f0", required=True)
    v.add_argument("--model", required=True)
    v.add_argument("--out-csv", required=True)
    v.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        return _fail(EXIT_USAGE, e)
    try:
        return args.func(args)
    except (TrainingError, FloatingPointError) as e:
        return _fail(EXIT_NUMERIC, e)
    except (DataError, ScoreError, GridMismatch, OSError, ValueError, KeyError) as e:
        return _fail(EXIT_DATA, e)


if __name__ == "__main__":
    sys.exit(main())
