"""On-disk formats: raw video files, frame-label files, dataset manifests.

Video file layout (little-endian throughout):
    bytes 0..3   magic b"FSV1"
    bytes 4..19  four uint32: N, H, W, C
    rest         N*H*W*C float32 pixel values, frame-major, row-major,
                 channel-last

Frame-label files are plain text, one "0" or "1" line per frame. The dataset
manifest is JSON: format_version, seed, the scene spec the data was generated
from, and one entry per video (id, split, paths, labels, event metadata).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from robustvad.errors import ContractError, FormatError
from robustvad.videostore.model import Video

VIDEO_MAGIC = b"FSV1"
MANIFEST_VERSION = 1


def write_video(path, pixels: np.ndarray) -> None:
    """Write a (N,H,W,C) array in [0,1] as a raw float32 video file."""
    px = np.asarray(pixels)
    if px.ndim != 4:
        raise ContractError(f"pixels must be (N,H,W,C), got shape {px.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(VIDEO_MAGIC)
        fh.write(np.asarray(px.shape, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(px, dtype="<f4").tobytes())


def read_video(path) -> np.ndarray:
    """Read a raw video file back as float64 (N,H,W,C)."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 20:
        raise FormatError(f"{path}: truncated header")
    if blob[:4] != VIDEO_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    n, h, w, c = np.frombuffer(blob[4:20], dtype="<u4")
    expected = 20 + int(n) * int(h) * int(w) * int(c) * 4
    if len(blob) != expected:
        raise FormatError(f"{path}: payload size {len(blob)} != expected {expected}")
    px = np.frombuffer(blob[20:], dtype="<f4").reshape(int(n), int(h), int(w), int(c))
    return px.astype(np.float64)


def write_frame_labels(path, labels) -> None:
    labels = np.asarray(labels)
    if not np.isin(labels, (0, 1)).all():
        raise ContractError("frame labels must be 0/1")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{int(v)}\n" for v in labels))


def read_frame_labels(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    out = np.empty(len(lines), dtype=np.int64)
    for i, line in enumerate(lines):
        s = line.strip()
        if s not in ("0", "1"):
            raise FormatError(f"{path}:{i + 1}: expected 0 or 1, got {s!r}")
        out[i] = int(s)
    if out.size == 0:
        raise FormatError(f"{path}: empty label file")
    return out


@dataclass
class ManifestEntry:
    id: str
    split: str  # "train" | "test"
    video_label: int
    n_frames: int
    path: str  # relative to the manifest's directory
    frame_label_path: str | None = None
    event: dict | None = None  # {kind, onset, duration, ...} for abnormal videos


@dataclass
class DatasetManifest:
    seed: int
    spec: dict
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path | None = None  # directory the relative paths resolve against

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def validate(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise FormatError("manifest: duplicate video ids")
        for e in self.entries:
            if e.split not in ("train", "test"):
                raise FormatError(f"manifest: bad split {e.split!r} for {e.id}")
            if self.root is not None:
                if not (self.root / e.path).exists():
                    raise FormatError(f"manifest: missing video file {e.path}")
                if e.frame_label_path and not (self.root / e.frame_label_path).exists():
                    raise FormatError(f"manifest: missing label file {e.frame_label_path}")


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "format_version": MANIFEST_VERSION,
        "seed": manifest.seed,
        "spec": manifest.spec,
        "entries": [
            {
                "id": e.id,
                "split": e.split,
                "video_label": e.video_label,
                "n_frames": e.n_frames,
                "path": e.path,
                "frame_label_path": e.frame_label_path,
                "event": e.event,
            }
            for e in manifest.entries
        ],
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("format_version") != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {doc.get('format_version')!r}")
    man = DatasetManifest(
        seed=doc["seed"],
        spec=doc["spec"],
        entries=[ManifestEntry(**e) for e in doc["entries"]],
        root=path.parent,
    )
    man.validate()
    return man


def load_video(manifest: DatasetManifest, entry: ManifestEntry) -> Video:
    """Materialize one manifest entry; normal videos get all-zero frame labels."""
    px = read_video(manifest.root / entry.path)
    if px.shape[0] != entry.n_frames:
        raise FormatError(f"{entry.id}: file has {px.shape[0]} frames, manifest says {entry.n_frames}")
    if entry.frame_label_path is not None:
        fl = read_frame_labels(manifest.root / entry.frame_label_path)
        if fl.shape[0] != entry.n_frames:
            raise FormatError(f"{entry.id}: {fl.shape[0]} labels for {entry.n_frames} frames")
    else:
        fl = np.zeros(entry.n_frames, dtype=np.int64)
    return Video(id=entry.id, pixels=px, video_label=entry.video_label, frame_labels=fl)


def load_dataset(manifest_path) -> dict[str, list[Video]]:
    """Load every video, grouped by split."""
    man = load_manifest(manifest_path)
    out: dict[str, list[Video]] = {"train": [], "test": []}
    for entry in man.entries:
        out[entry.split].append(load_video(man, entry))
    return out
