"""Synthetic scenes, chunking, and the on-disk formats."""

import numpy as np
import pytest

from robustvad.errors import ContractError, FormatError
from robustvad.videostore.io import (load_dataset, load_manifest, read_frame_labels,
                                     read_video, write_frame_labels, write_video)
from robustvad.videostore.model import (Video, chunk_any_labels, chunk_video,
                                        dropped_frame_count,
                                        expand_chunk_scores_to_frames)
from robustvad.videostore.synth import (ANOMALY_KINDS, SceneSpec,
                                        generate_synthetic_dataset, generate_video,
                                        video_rng)


# --------------------------------------------------------------------------
# chunking

def test_chunk_count_drops_remainder():
    px = np.zeros((33, 8, 8, 1))
    v = Video("v", px, 0)
    chunks = chunk_video(v, 16)
    assert len(chunks) == 2  # 33 // 16, frame 32 dropped
    assert dropped_frame_count(33, 16) == 1
    assert chunks[0].start == 0 and chunks[1].start == 16


def test_chunk_views_share_memory():
    px = np.random.default_rng(0).uniform(size=(32, 4, 4, 1))
    v = Video("v", px, 0)
    for ch in chunk_video(v, 16):
        assert np.shares_memory(ch.frames, px)


def test_chunk_any_labels():
    fl = np.zeros(48, dtype=np.int64)
    fl[20] = 1
    assert chunk_any_labels(fl, 16).tolist() == [0, 1, 0]
    fl = np.zeros(33, dtype=np.int64)
    fl[32] = 1  # dropped frame: its label must not leak into a chunk
    assert chunk_any_labels(fl, 16).tolist() == [0, 0]


def test_expand_chunk_scores_repeats_last():
    s = np.array([0.1, 0.9])
    out = expand_chunk_scores_to_frames(s, 16, 35)
    assert out.shape == (35,)
    assert (out[:16] == 0.1).all() and (out[16:32] == 0.9).all()
    assert (out[32:] == 0.9).all()  # remainder reuses the final chunk score


def test_video_validation():
    with pytest.raises(ContractError):
        Video("bad", np.zeros((4, 4, 4, 1)) + 2.0, 0)  # out of range
    with pytest.raises(ContractError):
        Video("bad", np.zeros((4, 4, 4, 1)), 0, np.ones(4, dtype=np.int64))


# --------------------------------------------------------------------------
# synthesis

def test_generate_video_shapes_and_range(scene):
    px, fl, event = generate_video(scene, video_rng(5, 0), abnormal=False)
    assert px.shape == (scene.n_frames, scene.height, scene.width, scene.channels)
    assert px.min() >= 0.0 and px.max() <= 1.0
    assert fl.shape == (scene.n_frames,) and not fl.any()
    assert event is None


def test_abnormal_labels_match_event_window(scene):
    for k in range(6):
        px, fl, event = generate_video(scene, video_rng(9, k), abnormal=True)
        assert event is not None and event["kind"] in ANOMALY_KINDS
        onset, dur = event["onset"], event["duration"]
        want = np.zeros(scene.n_frames, dtype=np.int64)
        want[onset:onset + dur] = 1
        np.testing.assert_array_equal(fl, want)
        assert fl.any()


def test_generation_is_deterministic(scene):
    a = generate_video(scene, video_rng(7, 3), abnormal=True)
    b = generate_video(scene, video_rng(7, 3), abnormal=True)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    c = generate_video(scene, video_rng(7, 4), abnormal=True)
    assert not np.array_equal(a[0], c[0])


def test_anomaly_alters_pixels_inside_window(scene):
    rng = video_rng(21, 0)
    state = rng.bit_generator.state
    px_a, fl, event = generate_video(scene, rng, abnormal=True)
    rng2 = video_rng(21, 0)
    rng2.bit_generator.state = state
    # The normal twin consumes the same base-scene draws, so outside the event
    # the two videos agree; inside it they must differ.
    px_n, _, _ = generate_video(scene, rng2, abnormal=False)
    window = slice(event["onset"], event["onset"] + event["duration"])
    assert np.abs(px_a[window] - px_n[window]).max() > 1e-3


# --------------------------------------------------------------------------
# file formats

def test_video_file_round_trip(tmp_path):
    px = np.random.default_rng(3).uniform(size=(5, 6, 7, 3))
    write_video(tmp_path / "v.fsv", px)
    back = read_video(tmp_path / "v.fsv")
    assert back.dtype == np.float64
    np.testing.assert_allclose(back, px, atol=1e-7)  # float32 storage


def test_video_file_rejects_corruption(tmp_path):
    px = np.zeros((2, 3, 3, 1))
    path = tmp_path / "v.fsv"
    write_video(path, px)
    blob = path.read_bytes()
    (tmp_path / "trunc.fsv").write_bytes(blob[:-4])
    with pytest.raises(FormatError):
        read_video(tmp_path / "trunc.fsv")
    (tmp_path / "magic.fsv").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(FormatError):
        read_video(tmp_path / "magic.fsv")


def test_frame_label_round_trip(tmp_path):
    labels = np.array([0, 1, 1, 0, 1])
    write_frame_labels(tmp_path / "l.txt", labels)
    np.testing.assert_array_equal(read_frame_labels(tmp_path / "l.txt"), labels)


def test_dataset_round_trip(tmp_path, scene):
    counts = {"train_normal": 2, "train_abnormal": 2,
              "test_normal": 1, "test_abnormal": 1}
    manifest = generate_synthetic_dataset(scene, counts, seed=42, out_dir=tmp_path)
    assert len(manifest.entries) == 6
    splits = load_dataset(tmp_path / "manifest.json")
    assert len(splits["train"]) == 4 and len(splits["test"]) == 2
    for v in splits["train"] + splits["test"]:
        assert v.pixels.shape[0] == scene.n_frames
        if v.video_label == 1:
            assert v.frame_labels is not None and v.frame_labels.any()
        else:
            assert not v.frame_labels.any()
    m2 = load_manifest(tmp_path / "manifest.json")
    assert [e.id for e in m2.entries] == [e.id for e in manifest.entries]


def test_dataset_regeneration_identical(tmp_path, scene):
    counts = {"train_normal": 1, "train_abnormal": 1,
              "test_normal": 1, "test_abnormal": 1}
    generate_synthetic_dataset(scene, counts, seed=11, out_dir=tmp_path / "a")
    generate_synthetic_dataset(scene, counts, seed=11, out_dir=tmp_path / "b")
    for sub in ("a", "b"):
        assert (tmp_path / sub / "manifest.json").exists()
    for f in sorted((tmp_path / "a" / "videos").glob("*.fsv")):
        twin = tmp_path / "b" / "videos" / f.name
        assert f.read_bytes() == twin.read_bytes()
