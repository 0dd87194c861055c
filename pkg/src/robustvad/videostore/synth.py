"""Synthetic scene generator.

Scenes are soft-edged discs bouncing over a static textured background.
Abnormal videos inject exactly one event with a known [onset, onset+duration)
window, which is what the ground-truth frame labels record:

    speed_spike     one object moves several times faster
    shape_morph     one object's radius pulsates
    foreign_object  a textured intruder object appears and jitters around

Every video draws its own RNG stream from (seed, video_index), so generation
is order-independent and parallelizable per video.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from robustvad.errors import ConfigurationError
from robustvad.videostore.io import (
    DatasetManifest,
    ManifestEntry,
    save_manifest,
    write_frame_labels,
    write_video,
)

ANOMALY_KINDS = ("speed_spike", "shape_morph", "foreign_object")


@dataclass
class SceneSpec:
    """Geometry, motion and anomaly-event distributions for one dataset."""

    height: int = 32
    width: int = 32
    channels: int = 3
    n_frames: int = 64
    chunk_size: int = 16
    n_objects: int = 2
    radius_range: tuple[float, float] = (2.8, 3.6)
    speed_range: tuple[float, float] = (0.45, 0.85)
    intensity_range: tuple[float, float] = (0.22, 0.32)
    background_amp: float = 0.12
    background_cells: int = 4
    anomaly_kinds: tuple[str, ...] = ANOMALY_KINDS
    onset_frac_range: tuple[float, float] = (0.15, 0.5)
    duration_range: tuple[int, int] = (16, 48)
    speed_factor: float = 6.0
    morph_amp: float = 0.8
    foreign_radius: float = 3.0
    foreign_contrast: float = 0.5

    def validate(self):
        if self.height < 8 or self.width < 8:
            raise ConfigurationError("scene dimensions must be at least 8x8")
        if self.channels < 1:
            raise ConfigurationError("channels must be >= 1")
        if self.chunk_size < 1 or self.n_frames < self.chunk_size:
            raise ConfigurationError("n_frames must cover at least one chunk")
        lo, hi = self.duration_range
        if lo < 1 or hi < lo:
            raise ConfigurationError("bad anomaly duration range")
        if lo < self.chunk_size:
            raise ConfigurationError("anomaly duration must span at least one chunk")
        if hi > self.n_frames:
            raise ConfigurationError("anomaly duration exceeds video length")
        if self.n_objects < 1:
            raise ConfigurationError("need at least one object")
        for kind in self.anomaly_kinds:
            if kind not in ANOMALY_KINDS:
                raise ConfigurationError(f"unknown anomaly kind {kind!r}")
        if not self.anomaly_kinds:
            raise ConfigurationError("need at least one anomaly kind")


def _background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Static bilinear-interpolated noise texture, one layer per channel."""
    cells = spec.background_cells
    coarse = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1, spec.channels))
    ys = np.linspace(0.0, cells, spec.height)
    xs = np.linspace(0.0, cells, spec.width)
    y0 = np.minimum(ys.astype(int), cells - 1)
    x0 = np.minimum(xs.astype(int), cells - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    c00 = coarse[y0][:, x0]
    c01 = coarse[y0][:, x0 + 1]
    c10 = coarse[y0 + 1][:, x0]
    c11 = coarse[y0 + 1][:, x0 + 1]
    tex = (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx
           + c10 * fy * (1 - fx) + c11 * fy * fx)
    return 0.5 + 0.5 * spec.background_amp * tex


def _disc(height, width, cy, cx, radius, softness=0.8):
    yy, xx = np.mgrid[0:height, 0:width]
    d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return 1.0 / (1.0 + np.exp((d - radius) / softness))


def _checker(height, width, cy, cx, radius, cell=2):
    yy, xx = np.mgrid[0:height, 0:width]
    inside = ((yy - cy) ** 2 + (xx - cx) ** 2) <= radius**2
    parity = ((yy // cell + xx // cell) % 2) * 2.0 - 1.0
    return inside * parity


def _bounce(p, v, lo, hi):
    """One Euler step with wall reflection; returns updated (p, v)."""
    p = p + v
    for axis in (0, 1):
        if p[axis] < lo[axis]:
            p[axis] = 2 * lo[axis] - p[axis]
            v[axis] = -v[axis]
        elif p[axis] > hi[axis]:
            p[axis] = 2 * hi[axis] - p[axis]
            v[axis] = -v[axis]
    return p, v


def _sample_event(spec: SceneSpec, rng: np.random.Generator) -> dict:
    kind = str(rng.choice(list(spec.anomaly_kinds)))
    duration = int(rng.integers(spec.duration_range[0], spec.duration_range[1] + 1))
    lo = int(round(spec.onset_frac_range[0] * spec.n_frames))
    hi = min(int(round(spec.onset_frac_range[1] * spec.n_frames)),
             spec.n_frames - duration)
    onset = int(rng.integers(lo, max(lo, hi) + 1))
    return {"kind": kind, "onset": onset, "duration": duration,
            "object_index": int(rng.integers(spec.n_objects))}


def generate_video(spec: SceneSpec, rng: np.random.Generator,
                   abnormal: bool) -> tuple[np.ndarray, np.ndarray, dict | None]:
    """Render one video; returns (pixels, frame_labels, event-or-None)."""
    spec.validate()
    h, w, c = spec.height, spec.width, spec.channels
    bg = _background(spec, rng)

    radii = rng.uniform(*spec.radius_range, size=spec.n_objects)
    margin = radii.max() + 1.0
    pos = rng.uniform([margin, margin], [h - margin, w - margin],
                      size=(spec.n_objects, 2))
    angles = rng.uniform(0, 2 * np.pi, size=spec.n_objects)
    speeds = rng.uniform(*spec.speed_range, size=spec.n_objects)
    vel = np.stack([speeds * np.sin(angles), speeds * np.cos(angles)], axis=1)
    base_int = rng.uniform(*spec.intensity_range, size=spec.n_objects)
    colors = rng.uniform(0.5, 1.0, size=(spec.n_objects, c)) * base_int[:, None]

    event = _sample_event(spec, rng) if abnormal else None
    labels = np.zeros(spec.n_frames, dtype=np.int64)
    if event is not None:
        labels[event["onset"] : event["onset"] + event["duration"]] = 1

    # Foreign-object state is sampled up front so normal frames are unaffected.
    if event is not None and event["kind"] == "foreign_object":
        fpos = rng.uniform([spec.foreign_radius + 1] * 2,
                           [h - spec.foreign_radius - 1, w - spec.foreign_radius - 1])
        fsteps = rng.uniform(-1.2, 1.2, size=(spec.n_frames, 2))
        fcolor = rng.uniform(0.5, 1.0, size=c) * spec.foreign_contrast

    frames = np.empty((spec.n_frames, h, w, c), dtype=np.float64)
    lo_wall = np.array([margin, margin])
    hi_wall = np.array([h - margin, w - margin])
    for t in range(spec.n_frames):
        active = event is not None and event["onset"] <= t < event["onset"] + event["duration"]
        img = bg.copy()
        for k in range(spec.n_objects):
            r = radii[k]
            if active and event["kind"] == "shape_morph" and k == event["object_index"]:
                phase = 2 * np.pi * (t - event["onset"]) / 6.0
                r = radii[k] * (1.0 + spec.morph_amp * np.sin(phase))
                r = max(r, 1.0)
            img += _disc(h, w, pos[k, 0], pos[k, 1], r)[:, :, None] * colors[k]
        if active and event["kind"] == "foreign_object":
            img += np.abs(_checker(h, w, fpos[0], fpos[1], spec.foreign_radius))[:, :, None] \
                * fcolor * np.where(_checker(h, w, fpos[0], fpos[1], spec.foreign_radius) > 0,
                                    1.0, -0.6)[:, :, None]
            fpos = np.clip(fpos + fsteps[t],
                           spec.foreign_radius + 1,
                           [h - spec.foreign_radius - 1, w - spec.foreign_radius - 1])
        frames[t] = np.clip(img, 0.0, 1.0)
        for k in range(spec.n_objects):
            factor = 1.0
            if active and event["kind"] == "speed_spike" and k == event["object_index"]:
                factor = spec.speed_factor
            pos[k], vel[k] = _bounce(pos[k].copy(), vel[k].copy() * factor, lo_wall, hi_wall)
            vel[k] /= factor
    return frames, labels, event


def video_rng(seed: int, video_index: int) -> np.random.Generator:
    """The per-video RNG stream contract: independent of generation order."""
    return np.random.default_rng(np.random.SeedSequence([seed, video_index]))


def generate_synthetic_dataset(spec: SceneSpec, counts: dict[str, int],
                               seed: int, out_dir) -> DatasetManifest:
    """Generate and persist a dataset.

    counts keys: train_normal, train_abnormal, test_normal, test_abnormal.
    Layout under out_dir: videos/<id>.fsv, labels/<id>.txt (abnormal only),
    manifest.json. Returns the loaded-back manifest.
    """
    spec.validate()
    for key in ("train_normal", "train_abnormal", "test_normal", "test_abnormal"):
        if counts.get(key, 0) < 0:
            raise ConfigurationError(f"negative count for {key}")
    out_dir = Path(out_dir)
    entries = []
    video_index = 0
    groups = [
        ("train", 0, counts.get("train_normal", 0)),
        ("train", 1, counts.get("train_abnormal", 0)),
        ("test", 0, counts.get("test_normal", 0)),
        ("test", 1, counts.get("test_abnormal", 0)),
    ]
    for split, label, count in groups:
        tag = "a" if label else "n"
        for j in range(count):
            vid = f"{split}_{tag}{j:03d}"
            rng = video_rng(seed, video_index)
            video_index += 1
            px, fl, event = generate_video(spec, rng, abnormal=bool(label))
            rel_video = f"videos/{vid}.fsv"
            write_video(out_dir / rel_video, px)
            rel_labels = None
            if label:
                rel_labels = f"labels/{vid}.txt"
                write_frame_labels(out_dir / rel_labels, fl)
            entries.append(ManifestEntry(
                id=vid, split=split, video_label=label, n_frames=spec.n_frames,
                path=rel_video, frame_label_path=rel_labels, event=event,
            ))
    manifest = DatasetManifest(seed=seed, spec=asdict(spec), entries=entries, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
