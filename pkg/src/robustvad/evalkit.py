"""Frame-level evaluation: AUROC metrics, attacked evaluation, reports.

Two pooling conventions are reported side by side:

    AUC_O  every frame of every test video in one pool
    AUC_A  only frames belonging to abnormal videos (their normal frames stay
           in the pool as negatives)

AUROC is the Mann-Whitney statistic with average ranks, so exact ties get 0.5
credit. Single-class pools raise UndefinedAUCError and are reported as NA,
never silently as 0.5.

Attacked evaluation derives per-chunk attack directions from the ground-truth
frame labels of the test videos (the white-box threat model: the attacker
knows what it wants to hide and where).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from robustvad.attacks import (
    AttackConfig,
    a3_vad,
    run_attack,
    y_signs_from_frame_labels,
)
from robustvad.errors import ContractError, EmptyInputError, UndefinedAUCError
from robustvad.videostore.model import Video, expand_chunk_scores_to_frames

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("tag", "attack", "auc_o", "auc_a", "n_videos", "eps", "iters")


def auroc(scores, labels) -> float:
    """Rank-based AUROC with 0.5 tie credit."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ContractError("scores and labels must be equal-length 1-d arrays")
    if s.size == 0:
        raise EmptyInputError("empty score set")
    if not np.isin(y, (0, 1)).all():
        raise ContractError("labels must be 0/1")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(f"single-class labels (pos={n_pos}, neg={n_neg})")
    ranks = rankdata(s, method="average")
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class EvalRecord:
    """Frame-level scores for one (possibly attacked) video."""

    video_id: str
    video_label: int
    attack: str  # "clean" or the attack family
    frame_scores: np.ndarray
    frame_labels: np.ndarray
    queries: int = 0
    success_chunks: int = 0

    def __post_init__(self):
        if self.frame_scores.shape != self.frame_labels.shape:
            raise ContractError(f"{self.video_id}: score/label length mismatch")


def score_video_frames(model, video: Video) -> np.ndarray:
    """Chunk scores duplicated across frames (trailing frames get the last)."""
    s = model.chunk_scores(video.pixels)
    return expand_chunk_scores_to_frames(s, model.chunk_size, video.n_frames)


def evaluate_videos(model, videos: list[Video],
                    attack_cfg: AttackConfig | None = None) -> list[EvalRecord]:
    """Score every video, optionally after attacking it.

    The a3 family is a batch attack and runs over all videos jointly; other
    families attack each video independently.
    """
    for v in videos:
        if v.frame_labels is None:
            raise ContractError(f"evaluation needs frame labels ({v.id})")
    records = []
    if attack_cfg is None:
        for v in videos:
            records.append(EvalRecord(
                video_id=v.id, video_label=v.video_label, attack="clean",
                frame_scores=score_video_frames(model, v),
                frame_labels=np.asarray(v.frame_labels),
            ))
        return records
    if attack_cfg.family == "a3":
        ys = [y_signs_from_frame_labels(v.frame_labels, model.chunk_size) for v in videos]
        results = a3_vad(model, videos, ys, attack_cfg)
    else:
        results = [run_attack(model, v, attack_cfg) for v in videos]
    for v, res in zip(videos, results):
        records.append(EvalRecord(
            video_id=v.id, video_label=v.video_label, attack=attack_cfg.family,
            frame_scores=score_video_frames(model, res.video),
            frame_labels=np.asarray(v.frame_labels),
            queries=res.queries, success_chunks=int(res.success.sum()),
        ))
    return records


def pool_records(records: list[EvalRecord], anomaly_only: bool):
    picked = [r for r in records if not anomaly_only or r.video_label == 1]
    if not picked:
        raise EmptyInputError("no videos in pool")
    scores = np.concatenate([r.frame_scores for r in picked])
    labels = np.concatenate([r.frame_labels for r in picked])
    return scores, labels


def auc_overall(records: list[EvalRecord]) -> float:
    return auroc(*pool_records(records, anomaly_only=False))


def auc_anomaly_only(records: list[EvalRecord]) -> float:
    return auroc(*pool_records(records, anomaly_only=True))


def eval_overall(model, videos: list[Video],
                 attack_cfg: AttackConfig | None = None) -> float:
    """AUC over all frames of all videos (optionally attacked first)."""
    return auc_overall(evaluate_videos(model, videos, attack_cfg))


def eval_anomaly_only(model, videos: list[Video],
                      attack_cfg: AttackConfig | None = None) -> float:
    """AUC over frames of abnormal videos only."""
    return auc_anomaly_only(evaluate_videos(model, videos, attack_cfg))


def summarize(tag: str, records: list[EvalRecord],
              attack_cfg: AttackConfig | None = None) -> dict:
    """One report row; undefined AUCs become the string 'NA'."""
    def safe(fn):
        try:
            return fn(records)
        except (UndefinedAUCError, EmptyInputError) as exc:
            log.warning("%s: %s", tag, exc)
            return "NA"

    attack = records[0].attack if records else "clean"
    return {
        "tag": tag,
        "attack": attack,
        "auc_o": safe(auc_overall),
        "auc_a": safe(auc_anomaly_only),
        "n_videos": len(records),
        "eps": attack_cfg.eps if attack_cfg else 0.0,
        "iters": attack_cfg.iters if attack_cfg else 0,
    }


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def emit_report(rows: list[dict], path) -> None:
    """Write the summary CSV (fixed 4-decimal floats, NA for undefined)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(REPORT_COLUMNS)]
    for row in rows:
        missing = [c for c in REPORT_COLUMNS if c not in row]
        if missing:
            raise ContractError(f"report row missing columns {missing}")
        lines.append(",".join(_fmt(row[c]) for c in REPORT_COLUMNS))
    path.write_text("\n".join(lines) + "\n")


def write_score_files(records: list[EvalRecord], out_dir) -> None:
    """One text file per video: a frame score per line."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for r in records:
        p = out_dir / f"{r.video_id}.{r.attack}.txt"
        p.write_text("".join(f"{v:.10g}\n" for v in r.frame_scores))


def plot_records(records: list[EvalRecord], out_dir) -> list[Path]:
    """Optional score-vs-frame plots with the labeled window shaded."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for r in records:
        fig, ax = plt.subplots(figsize=(6, 2.2))
        ax.plot(r.frame_scores, lw=1.2)
        ax.fill_between(np.arange(len(r.frame_labels)), 0, 1,
                        where=r.frame_labels > 0, alpha=0.2, color="red")
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel("frame")
        ax.set_ylabel("score")
        ax.set_title(f"{r.video_id} ({r.attack})", fontsize=9)
        fig.tight_layout()
        p = out_dir / f"{r.video_id}.{r.attack}.png"
        fig.savefig(p, dpi=110)
        plt.close(fig)
        written.append(p)
    return written
