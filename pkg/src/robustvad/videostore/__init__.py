"""Video data model, raw file formats, dataset manifests, synthetic scenes."""

from robustvad.videostore.io import (
    DatasetManifest,
    ManifestEntry,
    load_dataset,
    load_manifest,
    load_video,
    read_frame_labels,
    read_video,
    save_manifest,
    write_frame_labels,
    write_video,
)
from robustvad.videostore.model import (
    DEFAULT_CHUNK_SIZE,
    ChunkView,
    Video,
    chunk_any_labels,
    chunk_video,
    dropped_frame_count,
    expand_chunk_scores_to_frames,
)
from robustvad.videostore.synth import (
    ANOMALY_KINDS,
    SceneSpec,
    generate_synthetic_dataset,
    generate_video,
    video_rng,
)

__all__ = [
    "ANOMALY_KINDS",
    "DEFAULT_CHUNK_SIZE",
    "ChunkView",
    "DatasetManifest",
    "ManifestEntry",
    "SceneSpec",
    "Video",
    "chunk_any_labels",
    "chunk_video",
    "dropped_frame_count",
    "expand_chunk_scores_to_frames",
    "generate_synthetic_dataset",
    "generate_video",
    "load_dataset",
    "load_manifest",
    "load_video",
    "read_frame_labels",
    "read_video",
    "save_manifest",
    "video_rng",
    "write_frame_labels",
    "write_video",
]
