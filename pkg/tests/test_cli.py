import csv
import filecmp
import json
import re

import numpy as np
import pytest

from singf0 import nn
from singf0.cli import main
from singf0.dataio import load_model, read_f0, save_model, score_grid
from singf0.score import load_score
from singf0.sustain import SustainModel
from singf0.transition import TransitionModel

ERROR_LINE = re.compile(r"^singf0: error\[(\d)\]: \S.*$")

SPEC = {"n_songs": 2, "notes_per_song": 8, "vibrato_depth": [0.1, 0.4], "seed": 3}
CONFIG = {"stage_epochs": [2, 2, 2, 2]}


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _error_code(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    m = ERROR_LINE.match(lines[-1])
    assert m, lines
    return int(m.group(1))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "spec.json").write_text(json.dumps(SPEC))
    (d / "cfg.json").write_text(json.dumps(CONFIG))
    assert main(["gen-synth", "--spec", str(d / "spec.json"), "--out-dir", str(d / "corpus")]) == 0
    assert main(["train", "--scores", str(d / "corpus" / "scores"), "--f0", str(d / "corpus" / "f0"),
                 "--config", str(d / "cfg.json"), "--out-model", str(d / "model.json"),
                 "--report", str(d / "report.json")]) == 0
    return d


def test_train_outputs(workdir):
    tm, sm, meta = load_model(workdir / "model.json")
    assert meta["config"]["stage_epochs"] == [2, 2, 2, 2]
    assert meta["format_version"] == 1
    report = json.loads((workdir / "report.json").read_text())
    assert np.isfinite(report["final_loss"])
    rows = _rows(workdir / "report.csv")
    assert list(rows[0]) == ["stage", "epoch", "loss_semitones"]
    assert [(r["stage"], r["epoch"]) for r in rows[:3]] == [("1", "0"), ("1", "1"), ("2", "0")]
    assert len(rows) == 8


def test_gen_synth_deterministic(workdir, tmp_path):
    assert main(["gen-synth", "--spec", str(workdir / "spec.json"), "--out-dir", str(tmp_path)]) == 0
    for sub in ("scores", "f0"):
        cmp = filecmp.dircmp(workdir / "corpus" / sub, tmp_path / sub)
        assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    assert filecmp.cmp(workdir / "corpus" / "ground_truth.json", tmp_path / "ground_truth.json",
                       shallow=False)


def test_synth_frame_count_and_no_vibrato(workdir, tmp_path):
    score_path = workdir / "corpus" / "scores" / "song0.json"
    full, plain = tmp_path / "full.f0", tmp_path / "plain.f0"
    assert main(["synth", "--score", str(score_path), "--model", str(workdir / "model.json"),
                 "--out-f0", str(full)]) == 0
    assert main(["synth", "--score", str(score_path), "--model", str(workdir / "model.json"),
                 "--out-f0", str(plain), "--no-vibrato"]) == 0
    score = load_score(score_path)
    a, b = read_f0(full, score.frame_period), read_f0(plain, score.frame_period)
    assert a.grid.count == round((score.end - score.start) / score.frame_period)
    # The difference is the enveloped vibrato sum, which vanishes at every onset.
    from singf0.sustain import sustain_track
    tm, sm, _ = load_model(workdir / "model.json")
    vib = sustain_track(sm, score, score_grid(score))
    voiced = a.voiced
    np.testing.assert_allclose(a.log_f0[voiced] - b.log_f0[voiced], vib[voiced], atol=1e-9)


def test_synth_zero_network_is_pitch_cross_fade(workdir, tmp_path):
    tm, sm = TransitionModel.create(0), SustainModel.create(1)
    for p in tm.mlp.params() + sm.mlp.params():
        p[...] = 0.0
    save_model(tmp_path / "zero.json", tm, sm)
    score_path = workdir / "corpus" / "scores" / "song1.json"
    assert main(["synth", "--score", str(score_path), "--model", str(tmp_path / "zero.json"),
                 "--out-f0", str(tmp_path / "z.f0")]) == 0
    score = load_score(score_path)
    tr = read_f0(tmp_path / "z.f0", score.frame_period)
    T, t = score.onsets, tr.times
    for i in range(1, len(score) - 2):
        sel = (t >= T[i] + 1e-6) & (t < T[i + 1] - 1e-6)
        u = (t[sel] - T[i]) / (T[i + 1] - T[i])
        p1, p2 = score.notes[i].pitch, score.notes[i + 1].pitch
        np.testing.assert_allclose(tr.log_f0[sel], (1 - u) * p1 + u * p2, atol=1e-9)


def test_eval_and_estimate(workdir, tmp_path, capsys):
    c = workdir / "corpus"
    assert main(["eval", "--score", str(c / "scores" / "song0.json"), "--f0", str(c / "f0" / "song0.f0"),
                 "--model", str(workdir / "model.json"), "--out-csv", str(tmp_path / "e.csv")]) == 0
    assert "L1" in capsys.readouterr().out
    rows = _rows(tmp_path / "e.csv")
    assert list(rows[0]) == ["time_s", "target_semitones", "synth_semitones", "voiced"]
    assert main(["estimate", "--scores", str(c / "scores"), "--f0", str(c / "f0"),
                 "--model", str(workdir / "model.json"), "--out-csv", str(tmp_path / "v.csv")]) == 0
    rows = _rows(tmp_path / "v.csv")
    assert list(rows[0]) == ["song_id", "note_index", "detected", "omega_rad_s", "theta_rad",
                             "magnitude"]
    assert len(rows) == 16


def test_estimate_zero_residual(workdir, tmp_path):
    # Targets equal to the model's own transition output leave nothing to detect.
    from singf0.dataio import write_f0
    from singf0.trainer import synthesize
    tm, sm, _ = load_model(workdir / "model.json")
    score_path = workdir / "corpus" / "scores" / "song0.json"
    score = load_score(score_path)
    track = synthesize(tm, sm, score, offsets=tm.offsets["song0"], vibrato=False)
    (tmp_path / "f0").mkdir()
    write_f0(tmp_path / "f0" / "song0.f0", track)
    assert main(["estimate", "--scores", str(score_path), "--f0", str(tmp_path / "f0"),
                 "--model", str(workdir / "model.json"), "--out-csv", str(tmp_path / "v.csv")]) == 0
    assert all(r["detected"] == "false" for r in _rows(tmp_path / "v.csv"))


def test_usage_errors(capsys):
    assert main(["train", "--f0", "x", "--out-model", "m", "--report", "r"]) == 1
    assert _error_code(capsys) == 1
    assert main([]) == 1
    assert _error_code(capsys) == 1
    assert main(["bogus"]) == 1
    assert _error_code(capsys) == 1


def test_data_errors(workdir, tmp_path, capsys):
    assert main(["synth", "--score", str(tmp_path / "missing.json"), "--model",
                 str(workdir / "model.json"), "--out-f0", str(tmp_path / "x.f0")]) == 2
    assert _error_code(capsys) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"notes": [{"onset": 0, "duration": 1, "pitch": 60, "x": 1}]}))
    assert main(["synth", "--score", str(bad), "--model", str(workdir / "model.json"),
                 "--out-f0", str(tmp_path / "x.f0")]) == 2
    assert _error_code(capsys) == 2
    assert main(["train", "--scores", str(workdir / "corpus" / "scores"), "--f0", str(tmp_path),
                 "--out-model", str(tmp_path / "m"), "--report", str(tmp_path / "r")]) == 2
    assert _error_code(capsys) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure(workdir, tmp_path, capsys, monkeypatch):
    real = nn.forward
    monkeypatch.setattr(nn, "forward", lambda m, x: real(m, x) * np.nan)
    c = workdir / "corpus"
    code = main(["train", "--scores", str(c / "scores"), "--f0", str(c / "f0"),
                 "--config", str(workdir / "cfg.json"), "--out-model", str(tmp_path / "m.json"),
                 "--report", str(tmp_path / "r.json")])
    assert code == 3
    err = capsys.readouterr().err
    assert ERROR_LINE.match(err.strip()) and "song" in err and "epoch" in err
