"""AUROC, evaluation records, reports."""

import numpy as np
import pytest

from robustvad.attacks import AttackConfig
from robustvad.errors import ContractError, UndefinedAUCError
from robustvad.evalkit import (EvalRecord, auc_anomaly_only, auc_overall, auroc,
                               emit_report, evaluate_videos, pool_records,
                               score_video_frames, summarize, write_score_files)
from robustvad.scorer.network import ChunkScorer
from robustvad.scorer.params import init_params
from tests.conftest import make_videos
from tests.oracles import pair_count_auc


# --------------------------------------------------------------------------
# auroc

def test_auroc_known_value():
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75, abs=1e-15)


def test_auroc_perfect_and_inverted():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0


def test_auroc_matches_pair_counting_with_ties(rng):
    for trial in range(200):
        n = int(rng.integers(4, 40))
        scores = rng.choice([0.0, 0.25, 0.5, 0.5, 0.75, 1.0], size=n)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            continue
        want = pair_count_auc(scores, labels)
        assert auroc(scores, labels) == pytest.approx(want, abs=1e-12)


def test_auroc_single_class_raises():
    with pytest.raises(UndefinedAUCError):
        auroc([0.1, 0.2], [1, 1])
    with pytest.raises(UndefinedAUCError):
        auroc([0.1, 0.2], [0, 0])


def test_auroc_validates_inputs():
    with pytest.raises(ContractError):
        auroc([0.1, 0.2], [0, 2])
    with pytest.raises(ContractError):
        auroc([0.1, 0.2, 0.3], [0, 1])


def test_random_scorer_is_chance_level(scfg, scene):
    videos = make_videos(scene, 10, 10, seed=77)
    aucs = []
    for seed in range(5):
        model = ChunkScorer(init_params(scfg, seed=seed))
        records = evaluate_videos(model, videos)
        aucs.append(auc_overall(records))
    assert 0.4 <= float(np.mean(aucs)) <= 0.6


# --------------------------------------------------------------------------
# records and pooling

def _record(vid, label, scores, labels, attack="clean"):
    return EvalRecord(video_id=vid, video_label=label, attack=attack,
                      frame_scores=np.asarray(scores, dtype=np.float64),
                      frame_labels=np.asarray(labels, dtype=np.int64))


def test_pool_and_auc_against_oracle():
    records = [
        _record("n0", 0, [0.1, 0.2, 0.15], [0, 0, 0]),
        _record("a0", 1, [0.8, 0.3, 0.9], [1, 0, 1]),
        _record("a1", 1, [0.4, 0.6, 0.5], [0, 1, 1]),
    ]
    scores, labels = pool_records(records, anomaly_only=False)
    assert len(scores) == 9
    want_o = pair_count_auc(scores, labels)
    assert auc_overall(records) == pytest.approx(want_o, abs=1e-12)
    s_a, l_a = pool_records(records, anomaly_only=True)
    assert len(s_a) == 6  # normal video excluded
    want_a = pair_count_auc(s_a, l_a)
    assert auc_anomaly_only(records) == pytest.approx(want_a, abs=1e-12)


def test_auc_anomaly_two_video_fixture():
    records = [
        _record("a0", 1, [0.9, 0.1], [1, 0]),
        _record("a1", 1, [0.7, 0.3], [1, 0]),
    ]
    # pairs: (0.9 vs 0.1, 0.3), (0.7 vs 0.1, 0.3) -> all 4 correctly ordered
    assert auc_anomaly_only(records) == 1.0


def test_score_video_frames_expands_chunks(params, scene):
    model = ChunkScorer(params)
    video = make_videos(scene, 1, 0, seed=5)[0]
    frames = score_video_frames(model, video)
    assert frames.shape == (video.n_frames,)
    chunks = model.chunk_scores(video.pixels)
    np.testing.assert_allclose(frames[:16], chunks[0])
    np.testing.assert_allclose(frames[-16:], chunks[-1])


def test_evaluate_clean_equals_eps_zero_attack(params, scene):
    model = ChunkScorer(params)
    videos = make_videos(scene, 1, 1, seed=8)
    clean = evaluate_videos(model, videos)
    attacked = evaluate_videos(model, videos,
                               AttackConfig(family="pgd", eps=0.0, iters=3))
    for c, a in zip(clean, attacked):
        np.testing.assert_allclose(c.frame_scores, a.frame_scores, atol=1e-12)
    assert all(r.attack == "clean" and r.queries == 0 for r in clean)
    assert all(r.attack == "pgd" for r in attacked)


def test_evaluate_attacked_respects_budget(params, scene):
    model = ChunkScorer(params)
    videos = make_videos(scene, 1, 1, seed=9)
    records = evaluate_videos(model, videos,
                              AttackConfig(family="pgd", eps=0.005, iters=4))
    for r in records:
        assert r.queries == 5
    batch = evaluate_videos(model, videos,
                            AttackConfig(family="a3", eps=0.005, iters=8))
    assert sum(r.queries for r in batch) <= 8 * len(videos)


# --------------------------------------------------------------------------
# summaries and files

def test_summarize_and_na():
    records = [
        _record("n0", 0, [0.1, 0.2], [0, 0], attack="pgd"),
        _record("a0", 1, [0.8, 0.1], [1, 0], attack="pgd"),
    ]
    row = summarize("demo", records, AttackConfig(family="pgd", eps=0.5 / 255,
                                                  iters=7))
    assert row["tag"] == "demo" and row["attack"] == "pgd"
    assert row["n_videos"] == 2 and row["iters"] == 7
    assert isinstance(row["auc_o"], float)
    only_normals = [_record("n0", 0, [0.1], [0])]
    row2 = summarize("normals", only_normals, None)
    assert row2["auc_a"] == "NA"  # no abnormal video: anomaly AUC undefined


def test_emit_report_format(tmp_path):
    records = [
        _record("n0", 0, [0.1, 0.2], [0, 0]),
        _record("a0", 1, [0.8, 0.1], [1, 0]),
    ]
    rows = [summarize("t1", records, None),
            summarize("t2", [_record("n0", 0, [0.2], [0])], None)]
    out = tmp_path / "report.csv"
    emit_report(rows, out)
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "tag,attack,auc_o,auc_a,n_videos,eps,iters"
    assert lines[1].startswith("t1,clean,")
    assert "NA" in lines[2]  # single-class rows degrade to NA, never crash


def test_write_score_files(tmp_path):
    records = [_record("vid7", 1, [0.125, 0.875], [1, 0], attack="apgd")]
    write_score_files(records, tmp_path)
    path = tmp_path / "vid7.apgd.txt"
    assert path.exists()
    values = [float(line) for line in path.read_text().split()]
    assert values == [0.125, 0.875]
