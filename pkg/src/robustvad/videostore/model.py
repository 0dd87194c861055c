"""Core video data types and chunking.

A video is a (N, H, W, C) float array in [0, 1]. Scoring granularity is the
chunk: `chunk_size` consecutive frames; trailing remainder frames are dropped
at chunking time and later re-covered at inference by repeating the last
chunk's score.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from robustvad.errors import ContractError, EmptyResultError

log = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 16


@dataclass
class Video:
    """One video with its weak (video-level) label and, when known, per-frame labels."""

    id: str
    pixels: np.ndarray  # (N, H, W, C) float in [0, 1]
    video_label: int  # 0 normal / 1 abnormal
    frame_labels: np.ndarray | None = None  # (N,) ints in {0, 1}, optional

    def __post_init__(self):
        self.validate()

    def validate(self):
        px = self.pixels
        if px.ndim != 4:
            raise ContractError(f"video {self.id}: pixels must be (N,H,W,C), got {px.shape}")
        if px.shape[0] < 1:
            raise ContractError(f"video {self.id}: needs at least one frame")
        if not np.isfinite(px).all():
            raise ContractError(f"video {self.id}: non-finite pixels")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ContractError(f"video {self.id}: pixels outside [0, 1]")
        if self.video_label not in (0, 1):
            raise ContractError(f"video {self.id}: video_label must be 0/1")
        if self.frame_labels is not None:
            fl = np.asarray(self.frame_labels)
            if fl.shape != (px.shape[0],):
                raise ContractError(
                    f"video {self.id}: frame_labels length {fl.shape} != N {px.shape[0]}"
                )
            if not np.isin(fl, (0, 1)).all():
                raise ContractError(f"video {self.id}: frame labels must be 0/1")
            if self.video_label == 0 and fl.any():
                raise ContractError(f"video {self.id}: normal video with abnormal frame labels")

    @property
    def n_frames(self) -> int:
        return self.pixels.shape[0]

    def frame(self, i: int) -> np.ndarray:
        return self.pixels[i]


@dataclass
class ChunkView:
    """A window of chunk_size consecutive frames of one video (no pixel copy)."""

    video_id: str
    index: int
    start: int
    frames: np.ndarray = field(repr=False)  # (chunk_size, H, W, C) view


def dropped_frame_count(n_frames: int, chunk_size: int) -> int:
    return n_frames - (n_frames // chunk_size) * chunk_size


def chunk_video(video: Video, chunk_size: int = DEFAULT_CHUNK_SIZE) -> list[ChunkView]:
    """Split a video into m = floor(N/chunk_size) non-overlapping chunks.

    Raises EmptyResultError when the video is shorter than one chunk.
    """
    if chunk_size < 1:
        raise ContractError(f"chunk_size must be >= 1, got {chunk_size}")
    n = video.n_frames
    m = n // chunk_size
    if m == 0:
        raise EmptyResultError(
            f"video {video.id}: {n} frames is shorter than one chunk ({chunk_size})"
        )
    dropped = dropped_frame_count(n, chunk_size)
    if dropped:
        log.warning("video %s: dropping %d trailing frames (chunk_size=%d)",
                    video.id, dropped, chunk_size)
    return [
        ChunkView(video.id, i, i * chunk_size,
                  video.pixels[i * chunk_size : (i + 1) * chunk_size])
        for i in range(m)
    ]


def expand_chunk_scores_to_frames(scores: np.ndarray, chunk_size: int,
                                  n_frames: int) -> np.ndarray:
    """Duplicate each chunk's score across its frames; trailing frames past the
    last full chunk inherit the last chunk's score."""
    scores = np.asarray(scores, dtype=np.float64)
    m = scores.shape[0]
    if m < 1:
        raise EmptyResultError("no chunk scores to expand")
    if m * chunk_size > n_frames:
        raise ContractError(
            f"{m} chunks x {chunk_size} frames exceeds video length {n_frames}"
        )
    out = np.empty(n_frames, dtype=np.float64)
    out[: m * chunk_size] = np.repeat(scores, chunk_size)
    out[m * chunk_size :] = scores[-1]
    return out


def chunk_any_labels(frame_labels: np.ndarray, chunk_size: int) -> np.ndarray:
    """Per-chunk 0/1 labels by any-pooling frame labels (trailing frames dropped)."""
    fl = np.asarray(frame_labels)
    m = fl.shape[0] // chunk_size
    if m == 0:
        raise EmptyResultError("label vector shorter than one chunk")
    return fl[: m * chunk_size].reshape(m, chunk_size).max(axis=1).astype(np.int64)
