"""Region distortion: saliency, rects, trajectories, plans, replays."""

import numpy as np
import pytest
from scipy import stats

from robustvad.errors import ConfigurationError, ContractError, NoForegroundError
from robustvad.srd import (AUGMENTATIONS, ContrastSaliency, DistortionPlan,
                           SrdConfig, apply_augmentation, apply_ops, apply_srd,
                           compute_saliency, draw_ops, largest_component,
                           plan_srd, replay_plan, sample_trajectory, Rect)
from robustvad.videostore.model import Video
from tests.oracles import (bezier_point, flood_fill_components,
                           windowed_variance_argmax)


def _normal_video(rng, n=64, hw=32, c=3, id="src"):
    base = rng.uniform(0.2, 0.5, size=(1, hw, hw, c))
    px = np.clip(base + 0.05 * rng.standard_normal((n, hw, hw, c)), 0.0, 1.0)
    return Video(id, px, 0)


# --------------------------------------------------------------------------
# components and saliency

def test_largest_component_picks_bigger():
    mask = np.zeros((10, 10), dtype=bool)
    mask[1:2, 1:6] = True          # area 5
    mask[5:8, 5:8] = True          # area 9
    out = largest_component(mask)
    assert out.sum() == 9
    assert out[6, 6] and not out[1, 1]


def test_largest_component_matches_flood_fill(rng):
    for _ in range(20):
        mask = rng.uniform(size=(12, 12)) < 0.35
        if not mask.any():
            continue
        comps = flood_fill_components(mask)
        best = max(len(c) for c in comps)
        got = largest_component(mask)
        assert got.sum() == best
        got_set = set(zip(*np.nonzero(got)))
        assert any(got_set == c for c in comps)


def test_largest_component_empty_raises():
    with pytest.raises(NoForegroundError):
        largest_component(np.zeros((5, 5), dtype=bool))


def test_contrast_saliency_finds_bright_square():
    frame = np.zeros((32, 32, 3))
    frame[10:18, 14:22] = 1.0
    sal = compute_saliency(frame, ContrastSaliency())
    assert sal.shape == (32, 32)
    assert sal.min() >= 0.0 and sal.max() <= 1.0
    y, x = np.unravel_index(np.argmax(sal), sal.shape)
    # variance peaks on the square's edge; allow the window radius
    assert 8 <= y <= 20 and 12 <= x <= 24
    oy, ox = windowed_variance_argmax(frame.mean(axis=2), 5)
    assert 8 <= oy <= 20 and 12 <= ox <= 24


# --------------------------------------------------------------------------
# trajectory

def test_trajectory_follows_bezier_closed_form(rng):
    rect = Rect(y=14, x=14, h=4, w=4)
    length = 17  # odd: sample 8 sits exactly at t = 0.5
    hits = 0
    for trial in range(50):
        traj = sample_trajectory((16.0, 16.0), rect, (64, 64), length, rng)
        raw = np.array([bezier_point(traj.start, traj.control,
                                     (traj.positions[-1]), t)
                        for t in np.arange(length) / (length - 1)])
        lo = np.array([2.0, 2.0])
        hi = np.array([62.0, 62.0])
        if (raw <= lo).any() or (raw >= hi).any():
            continue  # clipping engaged; closed form does not apply
        hits += 1
        np.testing.assert_allclose(traj.positions, raw, atol=1e-9)
        mid = bezier_point(traj.start, traj.control, traj.end, 0.5)
        want = 0.25 * np.asarray(traj.start) + 0.5 * np.asarray(traj.control) \
            + 0.25 * np.asarray(traj.end)
        np.testing.assert_allclose(mid, want, atol=1e-12)
        np.testing.assert_allclose(traj.positions[8], mid, atol=1e-9)
    assert hits >= 5  # enough unclipped draws to make the check meaningful


def test_trajectory_positions_keep_rect_inside(rng):
    rect = Rect(y=0, x=0, h=8, w=6)
    for _ in range(20):
        traj = sample_trajectory((4.0, 3.0), rect, (32, 32), 24, rng)
        assert (traj.positions[:, 0] >= rect.h / 2 - 1e-9).all()
        assert (traj.positions[:, 0] <= 32 - rect.h / 2 + 1e-9).all()
        assert (traj.positions[:, 1] >= rect.w / 2 - 1e-9).all()
        assert (traj.positions[:, 1] <= 32 - rect.w / 2 + 1e-9).all()


# --------------------------------------------------------------------------
# augmentations

def test_augmentations_preserve_shape_and_range(rng):
    patch = rng.uniform(size=(7, 5, 3))
    for name in AUGMENTATIONS:
        out = apply_augmentation(name, patch, np.random.default_rng(5))
        assert out.shape == patch.shape
        assert out.min() >= 0.0 and out.max() <= 1.0
    with pytest.raises(ConfigurationError):
        apply_augmentation("nope", patch, rng)


def test_augmentation_specifics(rng):
    patch = rng.uniform(size=(6, 6, 3))
    post = apply_augmentation("posterize", patch, rng)
    assert set(np.unique(post)) <= {0.0, 1.0}
    inv = apply_augmentation("invert", patch, rng)
    np.testing.assert_allclose(1.0 - inv, patch, atol=1e-15)
    shuf = apply_augmentation("pixel_shuffle", patch, np.random.default_rng(1))
    assert sorted(shuf.ravel()) == sorted(patch.ravel())


def test_apply_ops_deterministic(rng):
    patch = rng.uniform(size=(8, 8, 3))
    ops = draw_ops(3, np.random.default_rng(77))
    assert len({name for name, _ in ops}) == 3
    a = apply_ops(patch, ops)
    b = apply_ops(patch, ops)
    np.testing.assert_array_equal(a, b)


# --------------------------------------------------------------------------
# plans and replays

@pytest.mark.parametrize("mode", ("full", "no_motion", "random_location",
                                  "random_region"))
def test_labels_align_with_window(mode, rng):
    video = _normal_video(rng)
    cfg = SrdConfig(mode=mode)
    distorted, plan = apply_srd(video, cfg, np.random.default_rng(3))
    want = np.zeros(video.n_frames, dtype=np.int64)
    want[plan.start:plan.start + plan.length] = 1
    np.testing.assert_array_equal(distorted.frame_labels, want)
    assert distorted.video_label == 1
    assert distorted.id == "src+srd"


@pytest.mark.parametrize("mode", ("full", "no_motion", "random_location",
                                  "random_region"))
def test_changed_pixels_confined_to_declared_rects(mode, rng):
    video = _normal_video(rng)
    cfg = SrdConfig(mode=mode)
    distorted, plan = apply_srd(video, cfg, np.random.default_rng(11))
    r = plan.rect
    diff = np.abs(distorted.pixels - video.pixels).max(axis=3)  # (N, H, W)
    for i in range(video.n_frames):
        j = i - plan.start
        changed = set(zip(*np.nonzero(diff[i] > 0)))
        if not 0 <= j < plan.length:
            assert changed == set(), f"frame {i} outside the window changed"
            continue
        ty, tx = plan.paste_tops[j]
        allowed = {(y, x) for y in range(ty, ty + r.h) for x in range(tx, tx + r.w)}
        assert changed <= allowed, f"frame {i} leaked outside its rect"


def test_replay_is_bit_exact(rng):
    video = _normal_video(rng)
    cfg = SrdConfig()
    distorted, plan = apply_srd(video, cfg, np.random.default_rng(19))
    again = replay_plan(video, plan)
    np.testing.assert_array_equal(distorted.pixels, again.pixels)
    np.testing.assert_array_equal(distorted.frame_labels, again.frame_labels)


def test_plan_json_round_trip(rng):
    video = _normal_video(rng)
    distorted, plan = apply_srd(video, SrdConfig(), np.random.default_rng(23))
    plan2 = DistortionPlan.from_json(plan.to_json())
    again = replay_plan(video, plan2)
    np.testing.assert_array_equal(distorted.pixels, again.pixels)
    assert plan2.to_json() == plan.to_json()


def test_same_rng_same_plan(rng):
    video = _normal_video(rng)
    p1 = plan_srd(video, SrdConfig(), np.random.default_rng(5))
    p2 = plan_srd(video, SrdConfig(), np.random.default_rng(5))
    assert p1.to_json() == p2.to_json()


def test_random_location_reuses_one_patch(rng):
    video = _normal_video(rng)
    cfg = SrdConfig(mode="random_location", length_range=(8, 8))
    distorted, plan = apply_srd(video, cfg, np.random.default_rng(31))
    r = plan.rect
    patches = []
    for j in range(plan.length):
        ty, tx = plan.paste_tops[j]
        patches.append(distorted.pixels[plan.start + j,
                                        ty:ty + r.h, tx:tx + r.w].copy())
    for p in patches[1:]:
        np.testing.assert_array_equal(p, patches[0])


def test_random_location_positions_uniform(rng):
    """Chi-square uniformity of paste positions over a 4x4 grid, alpha=0.01."""
    video = _normal_video(rng, n=40)
    cfg = SrdConfig(mode="random_location", length_range=(24, 32))
    plan_rng = np.random.default_rng(2024)
    obs = np.zeros((4, 4))
    exp = np.zeros((4, 4))
    hh, ww = 32, 32
    draws = 0
    for _ in range(60):
        plan = plan_srd(video, cfg, plan_rng)
        vy = hh - plan.rect.h + 1
        vx = ww - plan.rect.w + 1
        # exact bin measure for floor(4*k/v) binning of integers 0..v-1
        py = np.bincount(np.floor(4 * np.arange(vy) / vy).astype(int),
                         minlength=4) / vy
        px_ = np.bincount(np.floor(4 * np.arange(vx) / vx).astype(int),
                          minlength=4) / vx
        for ty, tx in plan.paste_tops[1:]:  # frame 0 stays at the source rect
            by = int(4 * ty // vy)
            bx = int(4 * tx // vx)
            obs[by, bx] += 1
            exp += np.outer(py, px_)
            draws += 1
    assert draws >= 1000
    result = stats.chisquare(obs.ravel(), exp.ravel())
    assert result.pvalue >= 0.01


def test_fallback_on_flat_video():
    px = np.full((32, 32, 32, 3), 0.5)
    video = Video("flat", px, 0)
    plan = plan_srd(video, SrdConfig(), np.random.default_rng(1))
    assert plan.fallback_random


def test_abnormal_source_rejected(rng):
    video = _normal_video(rng)
    bad = Video("x", video.pixels, 1, np.ones(video.n_frames, dtype=np.int64))
    with pytest.raises(ContractError):
        plan_srd(bad, SrdConfig(), np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SrdConfig(threshold=0.0).validate()
    with pytest.raises(ConfigurationError):
        SrdConfig(mode="bogus").validate()
    with pytest.raises(ConfigurationError):
        SrdConfig(k_ops=99).validate()
    with pytest.raises(ConfigurationError):
        SrdConfig(provider="model_grad").validate()  # needs model_params


def test_model_grad_saliency(params, rng):
    video = _normal_video(rng)
    cfg = SrdConfig(provider="model_grad", model_params=params)
    distorted, plan = apply_srd(video, cfg, np.random.default_rng(4))
    assert plan.provider == "model_grad"
    assert distorted.frame_labels.sum() == plan.length
