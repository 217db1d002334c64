import csv
import math

import numpy as np
import pytest

from conftest import SMALL, small_spec
from sonarp.geometry import label_windows, sliding_windows
from sonarp.metrics import detection_recall
from sonarp.pipelines import ExperimentSpec, run, run_matching, run_tracker, run_transfer
from sonarp.pipelines.common import frames_for
from sonarp.pipelines.detector import evaluate
from sonarp.pipelines.matching import decide
from sonarp.pipelines.tracker import CcMatcher, track
from sonarp.synth import SceneConfig, generate_sequence

KINDS = list(SMALL)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def csv_files(root):
    return sorted(p for p in root.rglob("*.csv"))


class OracleScorer:
    """Scores windows by their true objectness; frames are looked up by pixels."""

    window = 96

    def __init__(self, frames):
        self.gt = {f.image.tobytes(): f.boxes for f in frames}

    def score(self, image, windows):
        return label_windows(windows, self.gt[image.tobytes()])


def test_spec_validation(tmp_path):
    with pytest.raises(ValueError):
        ExperimentSpec(kind="nope")
    with pytest.raises(ValueError):
        ExperimentSpec(kind="proposals", sweeps={"k": []})
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict({"kind": "proposals", "bogus": 1})
    p = tmp_path / "s.json"
    p.write_text('{"kind": "tracker", "seed": 3}')
    assert ExperimentSpec.from_json(p).seed == 3


@pytest.mark.parametrize("kind", KINDS)
def test_outputs_have_no_nan(kind, small_runs):
    _, spec = small_runs.get(kind)
    root = spec.out_dir
    assert (root / "report.csv").is_file()
    for path in csv_files(root):
        for row in read_csv(path):
            for v in row.values():
                assert v.lower() != "nan"


@pytest.mark.parametrize("kind", KINDS)
def test_rerun_is_byte_identical(kind, small_runs):
    _, a = small_runs.get(kind, 0)
    _, b = small_runs.get(kind, 1)
    files_a = [p.relative_to(a.out_dir) for p in sorted(a.out_dir.rglob("*")) if p.is_file()]
    files_b = [p.relative_to(b.out_dir) for p in sorted(b.out_dir.rglob("*")) if p.is_file()]
    assert files_a == files_b and files_a
    for rel in files_a:
        assert (a.out_dir / rel).read_bytes() == (b.out_dir / rel).read_bytes(), rel


def test_sweep_rows_match_grid(small_runs):
    _, spec = small_runs.get("proposals")
    n_t, n_k, n_s = (len(spec.grid(a)) for a in ("t_o", "k", "s_t"))
    assert len(read_csv(spec.out_dir / "curves" / "threshold.csv")) == 2 * n_t * n_s
    assert len(read_csv(spec.out_dir / "curves" / "topk.csv")) == 2 * n_k * n_s
    _, spec = small_runs.get("detector")
    assert len(read_csv(spec.out_dir / "curves" / "detection.csv")) == 2 * len(spec.grid("t_o"))
    _, spec = small_runs.get("tracker")
    assert len(read_csv(spec.out_dir / "curves" / "ctf.csv")) == 2 * len(spec.grid("o_t"))


def test_classification_report(small_runs):
    rows, spec = small_runs.get("classification")
    (row,) = rows
    assert row["repeats"] == 3 and row["spc"] == 1
    assert row["acc_mean"] > 1 / 11
    header = (spec.out_dir / "report.csv").read_text().splitlines()[0]
    assert "acc_mean" in header and "acc_std" in header
    assert len(list((spec.out_dir / "models").glob("classifier_*.flsn"))) == 3


def test_transfer(small_runs, tmp_path):
    rows, _ = small_runs.get("transfer")
    assert [(r["layer"], r["spc"]) for r in rows] == [("mp1", 2), ("fc1_relu", 2), ("mp1", 3), ("fc1_relu", 3)]
    rows = run_transfer(small_spec("transfer", tmp_path, options={"pretrained": False}))
    assert max(r["accuracy"] for r in rows) > 1 / 5
    with pytest.raises(KeyError):
        run_transfer(small_spec("transfer", tmp_path, options={"layers": ["nope"]}))


def test_matching_learns_and_shuffled_labels_do_not(small_runs, tmp_path):
    rows, spec = small_runs.get("matching")
    assert {r["model"] for r in rows} == {rows[0]["model"], "CC"}
    assert len(read_csv(spec.out_dir / "curves" / "roc.csv")) >= 2
    shuffled = run_matching(small_spec("matching", tmp_path, options={"shuffle_labels": True, "cc_baseline": False}))
    assert abs(shuffled[0]["auc"] - 0.5) <= 0.1
    assert rows[0]["auc"] > shuffled[0]["auc"]


def test_score_to_class_rule():
    assert decide([0.7, 0.3, 0.5]).tolist() == [1, 0, 0]


def test_proposal_curves(small_runs):
    rows, spec = small_runs.get("proposals")
    th = read_csv(spec.out_dir / "curves" / "threshold.csv")
    tk = read_csv(spec.out_dir / "curves" / "topk.csv")
    frames = frames_for(spec, "test", 20)
    full = [detection_recall(sliding_windows(f.image.shape, f.mask), f.boxes) for f in frames]
    n_gt = [len(f.boxes) for f in frames]
    full_recall = sum(r * n for r, n in zip(full, n_gt)) / sum(n_gt)
    for scorer in ("cnn", "tm"):
        top = next(r for r in th if r["scorer"] == scorer and r["s_t"] == "none" and float(r["t_o"]) == 0)
        assert float(top["recall"]) == pytest.approx(full_recall, abs=1e-6)
        for s_t in spec.grid("s_t"):
            tag = "none" if s_t is None else f"{s_t:.6f}"
            rec = [float(r["recall"]) for r in th if r["scorer"] == scorer and r["s_t"] == tag]
            assert rec == sorted(rec, reverse=True)
        rec_k = [float(r["recall"]) for r in tk if r["scorer"] == scorer and r["s_t"] == "none"]
        abo_k = [float(r["abo"]) for r in tk if r["scorer"] == scorer and r["s_t"] == "none"]
        assert rec_k == sorted(rec_k) and abo_k == sorted(abo_k)
    assert {r["scorer"] for r in rows} == {"cnn", "tm"}
    assert (spec.out_dir / "proposals.csv").read_text().startswith("image_id,x,y,w,h,score,class\n")


def test_detector_report(small_runs):
    rows, spec = small_runs.get("detector")
    (row,) = rows
    assert set(row) == {"gamma", "recall", "n_mean", "acc_fc", "acc_svm", "svm_minus_fc"}
    assert row["svm_minus_fc"] == pytest.approx(row["acc_svm"] - row["acc_fc"])
    assert (spec.out_dir / "models" / "detector_gamma1.0.flsn").is_file()


def test_oracle_detector_accuracy_equals_recall():
    frames = frames_for(ExperimentSpec(kind="detector", data={"test_frames": 3}), "test", 3)
    per_frame = []
    for f in frames:
        wins = sliding_windows(f.image.shape, f.mask)
        obj = label_windows(wins, f.boxes)
        best = [max(f.boxes, key=lambda g: (min(w.x + 96, g.x + g.w) - max(w.x, g.x)) *
                    (min(w.y + 96, g.y + g.h) - max(w.y, g.y))) for w in wins]
        per_frame.append([w.with_score(float(o)).with_label(b.label) for w, o, b in zip(wins, obj, best)])
    for t_o, rec, acc, _ in evaluate(per_frame, frames, [0.3, 0.5, 0.9], 0.7):
        assert acc == pytest.approx(rec)


@pytest.fixture(scope="module")
def static_sequence():
    cfg = SceneConfig(speckle=0.0, clutter=0)
    return generate_sequence(cfg, 5, seed=2, drift=(0.0, 0.0), distractors=0)


def test_tracker_static_noise_free(static_sequence, tmp_path):
    res = track(static_sequence, OracleScorer(static_sequence), CcMatcher())
    assert all(b is not None for b, _ in res)
    rows = run_tracker(ExperimentSpec(kind="tracker", out=str(tmp_path)), frames=static_sequence,
                       scorer=OracleScorer(static_sequence), matchers={"cc": CcMatcher()})
    assert rows[0]["ctf"] == 1.0 and rows[0]["tracked"] == 5


def test_tracker_outputs(small_runs):
    rows, spec = small_runs.get("tracker")
    assert [r["method"] for r in rows] == ["cnn", "cc"]
    tracks = read_csv(spec.out_dir / "tracks.csv")
    assert len(tracks) == 2 * 4
    curve = read_csv(spec.out_dir / "curves" / "ctf.csv")
    for m in ("cnn", "cc"):
        v = [float(r["ctf"]) for r in curve if r["method"] == m]
        assert v == sorted(v, reverse=True)
        assert all(0 <= x <= 1 and not math.isnan(x) for x in v)


def test_run_dispatch(tmp_path):
    frames = generate_sequence(SceneConfig(speckle=0.0, clutter=0), 3, seed=0, drift=(0.0, 0.0), distractors=0)
    rows = run_tracker(ExperimentSpec(kind="tracker", out=str(tmp_path)), frames=frames,
                       scorer=OracleScorer(frames), matchers={"cc": CcMatcher()})
    assert rows[0]["frames"] == 3
    with pytest.raises(ValueError):
        run(ExperimentSpec(kind="tracker", out=str(tmp_path), options={"methods": ["bogus"]}))
