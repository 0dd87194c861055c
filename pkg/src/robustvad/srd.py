"""Spatiotemporal region distortion: synthesize pseudo-anomalies inside
normal videos, with exact frame labels and a replayable plan.

Recipe (mode "full"):
    1. pick a frame window [start, start+L)
    2. saliency map of frame `start` -> threshold 0.6 -> largest 8-connected
       component -> jittered bounding rect (random-rect fallback when nothing
       crosses the threshold)
    3. quadratic Bezier trajectory for the rect center across the window
    4. per frame: re-augment the ORIGINAL rect patch with k fresh draws from
       the 6 harsh ops and paste it (overwrite) at that frame's position

Ablation modes keep the same contract: "no_motion" distorts the same rect in
place in every frame, "random_location" pastes the frame-0 distorted patch at
i.i.d. uniform positions, "random_region" replaces saliency with a uniform
random rect.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from robustvad.errors import ConfigurationError, ContractError, NoForegroundError
from robustvad.videostore.model import Video

SRD_MODES = ("full", "no_motion", "random_location", "random_region")
AUGMENTATIONS = ("cutout_noise", "pixel_shuffle", "channel_permute",
                 "invert", "posterize", "elastic_jitter")
_SALIENCY_WINDOW = 5
_ZERO_TOL = 1e-12


# --------------------------------------------------------------------------
# saliency providers

class ContrastSaliency:
    """Local variance in a 5x5 window of the channel-mean image, max-normalized."""

    name = "contrast"

    def saliency(self, frame: np.ndarray) -> np.ndarray:
        gray = np.asarray(frame, dtype=np.float64).mean(axis=2)
        mean = ndimage.uniform_filter(gray, size=_SALIENCY_WINDOW, mode="reflect")
        mean_sq = ndimage.uniform_filter(gray * gray, size=_SALIENCY_WINDOW, mode="reflect")
        var = np.maximum(mean_sq - mean * mean, 0.0)
        top = var.max()
        if top < _ZERO_TOL:
            return np.zeros_like(var)
        return var / top


class ModelGradSaliency:
    """|d score / d pixel| of the scorer on the frame tiled into one chunk."""

    name = "model_grad"

    def __init__(self, params):
        self.params = params

    def saliency(self, frame: np.ndarray) -> np.ndarray:
        from robustvad.scorer.losses import ChunkScore, input_gradient

        t = self.params.config.chunk_size
        tiled = np.repeat(np.asarray(frame, dtype=np.float64)[None], t, axis=0)
        grad = input_gradient(self.params, tiled, ChunkScore(0))
        mag = np.abs(grad).sum(axis=(0, 3))
        top = mag.max()
        if top < _ZERO_TOL:
            return np.zeros_like(mag)
        return mag / top


class RandomSaliency:
    """Seeded uniform noise map (control condition)."""

    name = "random"

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def saliency(self, frame: np.ndarray) -> np.ndarray:
        return self.rng.uniform(0.0, 1.0, size=frame.shape[:2])


def compute_saliency(frame: np.ndarray, provider) -> np.ndarray:
    """Provider dispatch; output is (H, W) in [0, 1]."""
    out = provider.saliency(frame)
    if out.shape != frame.shape[:2]:
        raise ContractError("saliency provider returned a wrong-shaped map")
    return out


# --------------------------------------------------------------------------
# region selection

def largest_component(mask: np.ndarray) -> np.ndarray:
    """Largest 8-connected True component; area ties pick the component whose
    first pixel in row-major order comes first. Raises NoForegroundError on
    an empty mask."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise NoForegroundError("saliency mask has no foreground")
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    best_area = counts.max()
    candidates = np.flatnonzero(counts == best_area)
    first_seen = {int(lab): int(np.flatnonzero(labels.ravel() == lab)[0])
                  for lab in candidates}
    winner = min(candidates, key=lambda lab: first_seen[int(lab)])
    return labels == winner


def threshold_saliency(sal_map: np.ndarray, threshold: float) -> np.ndarray:
    return largest_component(np.asarray(sal_map) >= threshold)


@dataclass(frozen=True)
class Rect:
    y: int
    x: int
    h: int
    w: int


def fit_jittered_rect(component: np.ndarray, jitter_frac: float,
                      rng: np.random.Generator) -> Rect:
    """Tight bbox of the component, each edge independently displaced by
    uniform(-jitter_frac, +jitter_frac) of its axis length, clipped to the
    frame with at least one pixel kept."""
    comp = np.asarray(component, dtype=bool)
    if not comp.any():
        raise NoForegroundError("empty component")
    hh, ww = comp.shape
    rows = np.flatnonzero(comp.any(axis=1))
    cols = np.flatnonzero(comp.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1]) + 1
    x0, x1 = int(cols[0]), int(cols[-1]) + 1
    bh, bw = y1 - y0, x1 - x0
    y0 += int(round(rng.uniform(-jitter_frac, jitter_frac) * bh))
    y1 += int(round(rng.uniform(-jitter_frac, jitter_frac) * bh))
    x0 += int(round(rng.uniform(-jitter_frac, jitter_frac) * bw))
    x1 += int(round(rng.uniform(-jitter_frac, jitter_frac) * bw))
    y0 = int(np.clip(y0, 0, hh - 1))
    x0 = int(np.clip(x0, 0, ww - 1))
    y1 = int(np.clip(y1, y0 + 1, hh))
    x1 = int(np.clip(x1, x0 + 1, ww))
    return Rect(y=y0, x=x0, h=y1 - y0, w=x1 - x0)


def random_rect(height: int, width: int, frac_range: tuple[float, float],
                rng: np.random.Generator) -> Rect:
    rh = max(1, int(round(rng.uniform(*frac_range) * height)))
    rw = max(1, int(round(rng.uniform(*frac_range) * width)))
    rh, rw = min(rh, height), min(rw, width)
    return Rect(y=int(rng.integers(0, height - rh + 1)),
                x=int(rng.integers(0, width - rw + 1)), h=rh, w=rw)


# --------------------------------------------------------------------------
# trajectory

@dataclass
class Trajectory:
    start: tuple[float, float]  # (y, x) rect-center coordinates
    control: tuple[float, float]
    end: tuple[float, float]
    positions: np.ndarray  # (L, 2) float centers, clipped to keep rect inside

    def validate(self):
        if len(self.positions) < 1:
            raise ContractError("trajectory needs at least one position")
        if not np.allclose(self.positions[0], self.start):
            raise ContractError("trajectory must begin at start")
        if not np.allclose(self.positions[-1], self.end):
            raise ContractError("trajectory must end at end")


def sample_trajectory(center: tuple[float, float], rect: Rect,
                      frame_hw: tuple[int, int], length: int,
                      rng: np.random.Generator) -> Trajectory:
    """Quadratic Bezier with endpoint distance uniform(0.2, 0.6)*min(H, W) and
    a perpendicular control-point offset uniform(-0.25, 0.25)*segment length,
    sampled at t = i/(L-1)."""
    hh, ww = frame_hw
    cy, cx = float(center[0]), float(center[1])
    theta = rng.uniform(0.0, 2.0 * np.pi)
    dist = rng.uniform(0.2, 0.6) * min(hh, ww)
    ey, ex = cy + dist * np.sin(theta), cx + dist * np.cos(theta)
    uy, ux = (ey - cy) / dist, (ex - cx) / dist
    off = rng.uniform(-0.25, 0.25) * dist
    ctrl = ((cy + ey) / 2.0 - off * ux, (cx + ex) / 2.0 + off * uy)
    if length == 1:
        ts = np.zeros(1)
    else:
        ts = np.arange(length) / (length - 1)
    b = ((1 - ts) ** 2)[:, None] * np.array([cy, cx]) \
        + (2 * (1 - ts) * ts)[:, None] * np.asarray(ctrl) \
        + (ts**2)[:, None] * np.array([ey, ex])
    lo = np.array([rect.h / 2.0, rect.w / 2.0])
    hi = np.array([hh - rect.h / 2.0, ww - rect.w / 2.0])
    positions = np.clip(b, lo, np.maximum(lo, hi))
    traj = Trajectory(start=(cy, cx), control=ctrl,
                      end=(float(positions[-1, 0]), float(positions[-1, 1])),
                      positions=positions)
    traj.validate()
    return traj


def paste_top_left(pos: np.ndarray, rect: Rect, frame_hw: tuple[int, int]) -> tuple[int, int]:
    hh, ww = frame_hw
    ty = int(np.clip(int(round(pos[0] - rect.h / 2.0)), 0, hh - rect.h))
    tx = int(np.clip(int(round(pos[1] - rect.w / 2.0)), 0, ww - rect.w))
    return ty, tx


# --------------------------------------------------------------------------
# harsh augmentations

def apply_augmentation(name: str, patch: np.ndarray,
                       rng: np.random.Generator) -> np.ndarray:
    """One harsh op on a (h, w, C) patch in [0, 1]; returns a new array."""
    h, w, c = patch.shape
    if name == "cutout_noise":
        return rng.uniform(0.0, 1.0, size=patch.shape)
    if name == "pixel_shuffle":
        perm = rng.permutation(h * w)
        return patch.reshape(h * w, c)[perm].reshape(h, w, c)
    if name == "channel_permute":
        return patch[:, :, rng.permutation(c)]
    if name == "invert":
        return 1.0 - patch
    if name == "posterize":
        return np.where(patch >= 0.5, 1.0, 0.0)
    if name == "elastic_jitter":
        dy = rng.integers(-2, 3, size=(h, w))
        dx = rng.integers(-2, 3, size=(h, w))
        yy, xx = np.mgrid[0:h, 0:w]
        return patch[np.clip(yy + dy, 0, h - 1), np.clip(xx + dx, 0, w - 1)]
    raise ConfigurationError(f"unknown augmentation {name!r}")


def draw_ops(k: int, rng: np.random.Generator) -> list[tuple[str, int]]:
    """k distinct op names, each with its own replay seed."""
    names = [AUGMENTATIONS[i] for i in rng.choice(len(AUGMENTATIONS), size=k, replace=False)]
    return [(name, int(rng.integers(0, 2**32))) for name in names]


def apply_ops(patch: np.ndarray, ops: list[tuple[str, int]]) -> np.ndarray:
    out = np.asarray(patch, dtype=np.float64)
    for name, seed in ops:
        out = apply_augmentation(name, out, np.random.default_rng(seed))
    return out


# --------------------------------------------------------------------------
# config / plan

@dataclass
class SrdConfig:
    provider: str = "contrast"  # contrast | model_grad | random
    threshold: float = 0.6
    jitter_frac: float = 0.2
    k_ops: int = 2
    length_range: tuple[int, int] = (16, 32)
    rect_frac_range: tuple[float, float] = (0.15, 0.40)
    mode: str = "full"
    model_params: object = None  # ScorerParams, for provider="model_grad"

    def validate(self):
        if self.provider not in ("contrast", "model_grad", "random"):
            raise ConfigurationError(f"unknown saliency provider {self.provider!r}")
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigurationError("threshold must be in (0, 1]")
        if self.jitter_frac < 0.0:
            raise ConfigurationError("jitter_frac must be >= 0")
        if not 1 <= self.k_ops <= len(AUGMENTATIONS):
            raise ConfigurationError(f"k_ops must be in [1, {len(AUGMENTATIONS)}]")
        lo, hi = self.length_range
        if lo < 1 or hi < lo:
            raise ConfigurationError("bad length_range")
        if self.mode not in SRD_MODES:
            raise ConfigurationError(f"unknown srd mode {self.mode!r}")
        if self.provider == "model_grad" and self.model_params is None:
            raise ConfigurationError("model_grad saliency needs model_params")

    def make_provider(self, rng: np.random.Generator):
        if self.provider == "contrast":
            return ContrastSaliency()
        if self.provider == "model_grad":
            return ModelGradSaliency(self.model_params)
        return RandomSaliency(rng)


@dataclass
class DistortionPlan:
    """Everything needed to reproduce one distortion bit-exactly."""

    source_id: str
    mode: str
    provider: str
    start: int
    length: int
    rect: Rect
    fallback_random: bool
    trajectory: Trajectory | None
    paste_tops: list[tuple[int, int]]  # per frame (y, x), length == length
    frame_ops: list[list[tuple[str, int]]]  # per frame [(op, seed), ...]

    def to_json(self) -> str:
        doc = {
            "format_version": 1,
            "source_id": self.source_id,
            "mode": self.mode,
            "provider": self.provider,
            "start": self.start,
            "length": self.length,
            "rect": [self.rect.y, self.rect.x, self.rect.h, self.rect.w],
            "fallback_random": self.fallback_random,
            "trajectory": None if self.trajectory is None else {
                "start": list(self.trajectory.start),
                "control": list(self.trajectory.control),
                "end": list(self.trajectory.end),
                "positions": self.trajectory.positions.tolist(),
            },
            "paste_tops": [list(t) for t in self.paste_tops],
            "frame_ops": [[[name, seed] for name, seed in ops] for ops in self.frame_ops],
        }
        return json.dumps(doc, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "DistortionPlan":
        doc = json.loads(text)
        traj = None
        if doc["trajectory"] is not None:
            t = doc["trajectory"]
            traj = Trajectory(start=tuple(t["start"]), control=tuple(t["control"]),
                              end=tuple(t["end"]), positions=np.asarray(t["positions"]))
        return DistortionPlan(
            source_id=doc["source_id"], mode=doc["mode"], provider=doc["provider"],
            start=doc["start"], length=doc["length"], rect=Rect(*doc["rect"]),
            fallback_random=doc["fallback_random"], trajectory=traj,
            paste_tops=[tuple(t) for t in doc["paste_tops"]],
            frame_ops=[[(name, int(seed)) for name, seed in ops] for ops in doc["frame_ops"]],
        )

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json() + "\n")

    @staticmethod
    def load(path) -> "DistortionPlan":
        return DistortionPlan.from_json(Path(path).read_text())


# --------------------------------------------------------------------------
# the distortion itself

def _select_rect(video: Video, start: int, config: SrdConfig,
                 rng: np.random.Generator) -> tuple[Rect, bool]:
    hh, ww = video.pixels.shape[1:3]
    if config.mode == "random_region":
        return random_rect(hh, ww, config.rect_frac_range, rng), False
    provider = config.make_provider(rng)
    sal = compute_saliency(video.pixels[start], provider)
    try:
        comp = threshold_saliency(sal, config.threshold)
    except NoForegroundError:
        return random_rect(hh, ww, config.rect_frac_range, rng), True
    return fit_jittered_rect(comp, config.jitter_frac, rng), False


def plan_srd(video: Video, config: SrdConfig, rng: np.random.Generator) -> DistortionPlan:
    """Roll all randomness into a DistortionPlan (no pixels touched yet)."""
    config.validate()
    if video.video_label != 0:
        raise ContractError("region distortion expects a normal source video")
    n = video.n_frames
    hh, ww = video.pixels.shape[1:3]
    lo = min(config.length_range[0], n)
    hi = min(config.length_range[1], n)
    length = int(rng.integers(lo, hi + 1))
    start = int(rng.integers(0, n - length + 1))
    rect, fallback = _select_rect(video, start, config, rng)
    center = (rect.y + rect.h / 2.0, rect.x + rect.w / 2.0)

    traj = None
    if config.mode in ("full", "random_region"):
        traj = sample_trajectory(center, rect, (hh, ww), length, rng)
        tops = [paste_top_left(traj.positions[j], rect, (hh, ww)) for j in range(length)]
    elif config.mode == "no_motion":
        tops = [(rect.y, rect.x)] * length
    else:  # random_location: frame 0 in place, then i.i.d. uniform
        tops = [(rect.y, rect.x)]
        tops += [(int(rng.integers(0, hh - rect.h + 1)), int(rng.integers(0, ww - rect.w + 1)))
                 for _ in range(length - 1)]

    if config.mode == "random_location":
        frame_ops = [draw_ops(config.k_ops, rng)] + [[] for _ in range(length - 1)]
    else:
        frame_ops = [draw_ops(config.k_ops, rng) for _ in range(length)]

    return DistortionPlan(
        source_id=video.id, mode=config.mode, provider=config.provider,
        start=start, length=length, rect=rect, fallback_random=fallback,
        trajectory=traj, paste_tops=tops, frame_ops=frame_ops,
    )


def replay_plan(video: Video, plan: DistortionPlan) -> Video:
    """Deterministically materialize a plan into a labeled distorted video."""
    if video.id != plan.source_id:
        raise ContractError(f"plan belongs to {plan.source_id}, not {video.id}")
    px = video.pixels.astype(np.float64).copy()
    r = plan.rect
    patch0 = px[plan.start, r.y : r.y + r.h, r.x : r.x + r.w].copy()
    if plan.mode == "random_location":
        pasted = apply_ops(patch0, plan.frame_ops[0])
        for j in range(plan.length):
            ty, tx = plan.paste_tops[j]
            px[plan.start + j, ty : ty + r.h, tx : tx + r.w] = pasted
    elif plan.mode == "no_motion":
        for j in range(plan.length):
            frame = plan.start + j
            own = px[frame, r.y : r.y + r.h, r.x : r.x + r.w].copy()
            px[frame, r.y : r.y + r.h, r.x : r.x + r.w] = apply_ops(own, plan.frame_ops[j])
    else:  # full / random_region: original start patch, fresh ops, moving paste
        for j in range(plan.length):
            ty, tx = plan.paste_tops[j]
            px[plan.start + j, ty : ty + r.h, tx : tx + r.w] = \
                apply_ops(patch0, plan.frame_ops[j])
    labels = np.zeros(video.n_frames, dtype=np.int64)
    labels[plan.start : plan.start + plan.length] = 1
    return Video(id=f"{video.id}+srd", pixels=px, video_label=1, frame_labels=labels)


def apply_srd(video: Video, config: SrdConfig,
              rng: np.random.Generator) -> tuple[Video, DistortionPlan]:
    """Distort one normal video; returns (distorted video, replayable plan)."""
    plan = plan_srd(video, config, rng)
    return replay_plan(video, plan), plan
