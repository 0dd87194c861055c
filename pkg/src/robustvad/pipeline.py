"""Two-phase training pipeline.

Phase 1 (weak): minimize the video-level MIL loss using only video labels.
Phase 2 (robust): build a chunk-labeled dataset from Phase-1 pseudo labels
and/or region-distorted normal videos, then adversarially train the scorer
with inner PGD maximization of the chunk-wise loss (optionally the TRADES
variant: clean loss + beta * consistency to the clean scores).

Weak-supervision hygiene: everything before Phase 2 touches only pixels and
video-level labels. The only path that reads ground-truth frame labels of
TRAIN videos is assemble_phase2_dataset(..., use_ground_truth=True), which
exists for the fully supervised eps-sensitivity study.

The per-epoch Phase-1 validation metric is a VIDEO-level AUC (aggregated
score vs video label) on a held-out slice: a frame-level AUC there would need
exactly the train-video frame labels the hygiene rule forbids. Phase 2
validates against its own training targets (pseudo/distortion labels).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from robustvad.attacks import project
from robustvad.errors import (ConfigurationError, ContractError, NumericError,
                              UndefinedAUCError)
from robustvad.scorer.aggregate import AggregatorKind, aggregate
from robustvad.scorer.losses import (ChunkwiseLoss, MilLoss, loss_and_input_gradient,
                                     loss_value, param_gradient)
from robustvad.scorer.network import ChunkScorer
from robustvad.scorer.params import PARAM_NAMES, ScorerConfig, ScorerParams, init_params
from robustvad.srd import SrdConfig, apply_srd
from robustvad.videostore.model import Video, chunk_any_labels
from robustvad.evalkit import auroc

log = logging.getLogger(__name__)

ASSEMBLY_MODES = ("both", "pseudo_only", "srd_only")
EPS_SCHEDULES = ("constant", "linear")


# --------------------------------------------------------------------------
# optimizer

class AdamW:
    """Decoupled-weight-decay Adam over a name -> array parameter dict."""

    def __init__(self, arrays: dict[str, np.ndarray], lr: float,
                 weight_decay: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr_now: float | None = None):
        lr = self.lr if lr_now is None else lr_now
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in arrays.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mhat = self.m[k] / c1
            vhat = self.v[k] / c2
            p -= lr * (mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * p)


def _lr_at(base_lr: float, schedule: str, epoch: int, epochs: int) -> float:
    if schedule == "constant":
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / max(1, epochs)))


def eps_at(schedule: str, eps_start: float, eps_end: float,
           epoch: int, epochs: int) -> float:
    """Constant keeps eps_end; linear moves eps_start -> eps_end exactly."""
    if schedule not in EPS_SCHEDULES:
        raise ConfigurationError(f"unknown eps schedule {schedule!r}")
    if schedule == "constant":
        return eps_end
    if epochs <= 1:
        return eps_start
    return eps_start + (eps_end - eps_start) * epoch / (epochs - 1)


# --------------------------------------------------------------------------
# phase 1: weak MIL training

@dataclass
class TrainConfig:
    epochs: int = 40
    lr: float = 1e-3  # toy-scorer default; 8e-6 is typical for large backbones
    weight_decay: float = 0.01
    batch_size: int = 8
    chunk_size: int = 16
    seed: int = 0
    lr_schedule: str = "cosine"
    val_fraction: float = 0.1
    aggregator: AggregatorKind = field(default_factory=AggregatorKind)

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        if self.lr <= 0:
            raise ConfigurationError("lr must be > 0")
        if self.chunk_size < 1:
            raise ConfigurationError("chunk_size must be >= 1")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigurationError(f"unknown lr schedule {self.lr_schedule!r}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigurationError("val_fraction must be in [0, 1)")


@dataclass
class Phase1Result:
    params: ScorerParams
    metrics: list[dict]
    aborted: bool
    val_ids: list[str]


def _split_validation(videos: list[Video], frac: float, seed: int):
    """Stratified held-out slice (at least one video per present class)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A1]))
    val: list[Video] = []
    train: list[Video] = []
    for label in (0, 1):
        group = [v for v in videos if v.video_label == label]
        if not group:
            continue
        order = rng.permutation(len(group))
        n_val = max(1, int(round(frac * len(group)))) if frac > 0 else 0
        for idx in order[:n_val]:
            val.append(group[idx])
        for idx in order[n_val:]:
            train.append(group[idx])
    return train, val


def _video_level_auc(params: ScorerParams, videos: list[Video],
                     kind: AggregatorKind) -> float | None:
    if not videos:
        return None
    scorer = ChunkScorer(params)
    scores, labels = [], []
    for v in videos:
        s, cache = scorer.chunk_scores_with_cache(v.pixels)
        scores.append(aggregate(s, kind, cache["f"]))
        labels.append(v.video_label)
    try:
        return auroc(np.asarray(scores), np.asarray(labels))
    except UndefinedAUCError:
        return None


def _finite_params(params: ScorerParams) -> bool:
    return all(np.isfinite(arr).all() for arr in params.as_dict().values())


def train_phase1(videos: list[Video], scorer_config: ScorerConfig,
                 cfg: TrainConfig) -> Phase1Result:
    """Weakly supervised training: only video labels are ever consumed.

    With an abmil aggregator its attention arrays are trained too, in place
    on cfg.aggregator.attention.
    """
    cfg.validate()
    if not videos:
        raise ContractError("no training videos")
    if scorer_config.chunk_size != cfg.chunk_size:
        raise ConfigurationError(
            f"chunk_size mismatch: scorer {scorer_config.chunk_size} vs train {cfg.chunk_size}")
    train, val = _split_validation(videos, cfg.val_fraction, cfg.seed)
    if not train:
        raise ContractError("validation split consumed every video")
    params = init_params(scorer_config, cfg.seed)
    att = cfg.aggregator.attention if cfg.aggregator.name == "abmil" else None
    trained = params.as_dict()
    if att is not None:
        trained = dict(trained, **att)
    opt = AdamW(trained, cfg.lr, cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x91]))
    metrics: list[dict] = []
    snapshot = params.copy()
    att_snapshot = {k: v.copy() for k, v in att.items()} if att is not None else None
    aborted = False
    for epoch in range(cfg.epochs):
        lr_now = _lr_at(cfg.lr, cfg.lr_schedule, epoch, cfg.epochs)
        order = rng.permutation(len(train))
        epoch_loss = 0.0
        try:
            for lo in range(0, len(order), cfg.batch_size):
                batch = [train[i] for i in order[lo : lo + cfg.batch_size]]
                items = [(v.pixels, MilLoss(v.video_label, cfg.aggregator)) for v in batch]
                total, grads, att_grads = param_gradient(params, items)
                epoch_loss += total
                if att is not None:
                    grads = dict(grads, **(att_grads or {k: np.zeros_like(v)
                                                         for k, v in att.items()}))
                scale = 1.0 / len(batch)
                grads = {k: g * scale for k, g in grads.items()}
                if not math.isfinite(total) or any(not np.isfinite(g).all() for g in grads.values()):
                    aborted = True
                    break
                trained = params.as_dict()
                if att is not None:
                    trained = dict(trained, **att)
                opt.step(trained, grads, lr_now)
                if not _finite_params(params):
                    aborted = True
                    break
            if not aborted:
                epoch_metrics = {
                    "epoch": epoch,
                    "lr": lr_now,
                    "train_loss": epoch_loss / len(train),
                    "val_auc_video": _video_level_auc(params, val, cfg.aggregator),
                }
        except NumericError as exc:
            log.warning("epoch %d diverged: %s", epoch, exc)
            aborted = True
        if aborted:
            params = snapshot  # last finite epoch boundary
            if att is not None:
                for k in att:
                    att[k][...] = att_snapshot[k]
            break
        snapshot = params.copy()
        if att is not None:
            att_snapshot = {k: v.copy() for k, v in att.items()}
        metrics.append(epoch_metrics)
    return Phase1Result(params=params, metrics=metrics, aborted=aborted,
                        val_ids=[v.id for v in val])


# --------------------------------------------------------------------------
# pseudo labels

@dataclass
class PseudoLabelSet:
    tau: float
    labels: dict[str, np.ndarray]  # video id -> (m,) 0/1 chunk labels
    provenance: str = ""  # id of the checkpoint that produced the scores

    def to_doc(self) -> dict:
        return {"tau": self.tau, "provenance": self.provenance,
                "labels": {k: v.tolist() for k, v in self.labels.items()}}

    @staticmethod
    def from_doc(doc: dict) -> "PseudoLabelSet":
        return PseudoLabelSet(
            tau=float(doc["tau"]),
            labels={k: np.asarray(v, dtype=np.int64) for k, v in doc["labels"].items()},
            provenance=str(doc.get("provenance", "")),
        )


def generate_pseudo_labels(params: ScorerParams, videos: list[Video],
                           tau: float = 0.5, provenance: str = "") -> PseudoLabelSet:
    """Chunk label 1 iff S_i > tau (strict: S_i == tau stays normal).

    Intended for abnormal train videos; reads pixels only.
    """
    if not 0.0 < tau < 1.0:
        raise ConfigurationError("tau must be in (0, 1)")
    scorer = ChunkScorer(params)
    labels = {}
    for v in videos:
        s = scorer.chunk_scores(v.pixels)
        labels[v.id] = (s > tau).astype(np.int64)
    return PseudoLabelSet(tau=tau, labels=labels, provenance=provenance)


# --------------------------------------------------------------------------
# phase 2 dataset assembly

@dataclass
class TrainItem:
    video_id: str
    pixels: np.ndarray
    targets: np.ndarray  # (m,) chunk labels in {0, 1}
    source: str  # normal | pseudo | srd | ground_truth


def assemble_phase2_dataset(train_videos: list[Video],
                            pseudo: PseudoLabelSet | None,
                            srd_cfg: SrdConfig | None,
                            chunk_size: int,
                            p_srd: float = 0.5,
                            seed: int = 0,
                            mode: str = "both",
                            use_ground_truth: bool = False) -> list[TrainItem]:
    """Merge real videos with pseudo-labeled abnormal data and distorted
    normal data into one chunk-labeled training set.

    mode: "both" | "pseudo_only" | "srd_only".  With use_ground_truth=True
    the abnormal videos take their true frame labels instead of pseudo labels
    (the supervised eps-study path; everything else stays weak).
    """
    if mode not in ASSEMBLY_MODES:
        raise ConfigurationError(f"unknown assembly mode {mode!r}")
    if not 0.0 <= p_srd <= 1.0:
        raise ConfigurationError("p_srd must be in [0, 1]")
    want_srd = mode in ("both", "srd_only") and srd_cfg is not None
    want_abnormal = mode in ("both", "pseudo_only")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x52D]))
    items: list[TrainItem] = []
    for v in train_videos:
        if v.video_label == 0:
            m = v.n_frames // chunk_size
            items.append(TrainItem(v.id, v.pixels, np.zeros(m, dtype=np.int64), "normal"))
            if want_srd and rng.uniform() < p_srd:
                distorted, _plan = apply_srd(v, srd_cfg, rng)
                items.append(TrainItem(
                    distorted.id, distorted.pixels,
                    chunk_any_labels(distorted.frame_labels, chunk_size), "srd"))
        elif want_abnormal:
            if use_ground_truth:
                if v.frame_labels is None:
                    raise ContractError(f"{v.id}: ground-truth mode needs frame labels")
                items.append(TrainItem(v.id, v.pixels,
                                       chunk_any_labels(v.frame_labels, chunk_size),
                                       "ground_truth"))
            else:
                if pseudo is None or v.id not in pseudo.labels:
                    raise ContractError(f"{v.id}: no pseudo labels available")
                items.append(TrainItem(v.id, v.pixels, pseudo.labels[v.id], "pseudo"))
    if not items:
        raise ContractError("assembled dataset is empty")
    return items


# --------------------------------------------------------------------------
# phase 2: adversarial training

@dataclass
class AdvTrainConfig:
    epochs: int = 25
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 8
    seed: int = 0
    lr_schedule: str = "cosine"
    val_fraction: float = 0.1
    inner_iters: int = 10
    inner_alpha: float | None = None  # None -> eps / 4
    norm: str = "linf"
    eps_schedule: str = "constant"
    eps_start: float = 0.5 / 255
    eps_end: float = 0.5 / 255
    beta: float = 0.0  # 0 -> plain adversarial training, > 0 -> TRADES
    reduction: str = "sum"

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1 or self.inner_iters < 0:
            raise ConfigurationError("bad phase-2 loop sizes")
        if self.lr <= 0:
            raise ConfigurationError("lr must be > 0")
        if self.eps_schedule not in EPS_SCHEDULES:
            raise ConfigurationError(f"unknown eps schedule {self.eps_schedule!r}")
        if min(self.eps_start, self.eps_end) < 0:
            raise ConfigurationError("eps must be >= 0")
        if self.eps_schedule == "linear" and self.eps_start > self.eps_end:
            raise ConfigurationError("linear schedule needs eps_start <= eps_end")
        if self.norm not in ("linf", "l2"):
            raise ConfigurationError("norm must be linf or l2")
        if self.beta < 0:
            raise ConfigurationError("beta must be >= 0")
        if self.reduction not in ("sum", "mean"):
            raise ConfigurationError("reduction must be sum or mean")


@dataclass
class Phase2Result:
    params: ScorerParams
    metrics: list[dict]
    aborted: bool
    val_ids: list[str]


def chunkwise_pgd(params: ScorerParams, pixels: np.ndarray, targets,
                  eps: float, iters: int, alpha: float | None = None,
                  norm: str = "linf", reduction: str = "sum") -> np.ndarray:
    """Inner maximization: PGD ascent on the chunk-wise loss; returns the
    perturbed pixels (within the eps-ball, clamped to [0, 1])."""
    spec = ChunkwiseLoss(np.asarray(targets, dtype=np.float64), reduction=reduction)
    alpha = eps / 4.0 if alpha is None else alpha
    x0 = np.asarray(pixels, dtype=np.float64)
    x = x0.copy()
    for _ in range(iters):
        _, g = loss_and_input_gradient(params, x, spec)
        x = project(x + alpha * np.sign(g), x0, eps, norm)
    return x


def trades_loss(params: ScorerParams, pixels: np.ndarray, targets,
                delta_gen, beta: float, reduction: str = "sum") -> float:
    """Clean chunk-wise loss + beta * consistency between perturbed and clean
    (stop-gradient) scores; delta_gen(pixels, frozen_scores) -> delta."""
    scorer = ChunkScorer(params)
    frozen = scorer.chunk_scores(pixels)
    clean_spec = ChunkwiseLoss(np.asarray(targets, dtype=np.float64), reduction=reduction)
    clean = loss_value(params, pixels, clean_spec)
    delta = delta_gen(pixels, frozen)
    adv = loss_value(params, np.clip(pixels + delta, 0.0, 1.0),
                     ChunkwiseLoss(frozen, reduction=reduction))
    return clean + beta * adv


def train_phase2(items: list[TrainItem], base_params: ScorerParams,
                 cfg: AdvTrainConfig, reinit: bool = False) -> Phase2Result:
    """Adversarial training over a chunk-labeled dataset.

    Continues from base_params (the Phase-1 checkpoint) unless reinit=True.
    Plain mode minimizes chunkwise(adv); TRADES (beta > 0) minimizes
    chunkwise(clean) + beta * consistency(adv vs frozen clean scores).
    """
    cfg.validate()
    if not items:
        raise ContractError("no phase-2 training items")
    params = init_params(base_params.config, cfg.seed) if reinit else base_params.copy()
    opt = AdamW(params.as_dict(), cfg.lr, cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x92]))
    n_val = max(1, int(round(cfg.val_fraction * len(items)))) if cfg.val_fraction > 0 else 0
    order0 = rng.permutation(len(items))
    val_items = [items[i] for i in order0[:n_val]]
    train_items = [items[i] for i in order0[n_val:]]
    if not train_items:
        raise ContractError("validation split consumed every item")
    metrics: list[dict] = []
    snapshot = params.copy()
    aborted = False
    for epoch in range(cfg.epochs):
        eps = eps_at(cfg.eps_schedule, cfg.eps_start, cfg.eps_end, epoch, cfg.epochs)
        lr_now = _lr_at(cfg.lr, cfg.lr_schedule, epoch, cfg.epochs)
        order = rng.permutation(len(train_items))
        epoch_loss = 0.0
        try:
            for lo in range(0, len(order), cfg.batch_size):
                batch = [train_items[i] for i in order[lo : lo + cfg.batch_size]]
                grad_items = []
                for item in batch:
                    targets = item.targets.astype(np.float64)
                    if cfg.beta > 0.0:
                        scorer = ChunkScorer(params)
                        frozen = scorer.chunk_scores(item.pixels)
                        adv = chunkwise_pgd(params, item.pixels, frozen, eps,
                                            cfg.inner_iters, cfg.inner_alpha,
                                            cfg.norm, cfg.reduction)
                        grad_items.append((item.pixels,
                                           ChunkwiseLoss(targets, reduction=cfg.reduction)))
                        grad_items.append((adv,
                                           ChunkwiseLoss(frozen, reduction=cfg.reduction),
                                           cfg.beta))
                    else:
                        adv = chunkwise_pgd(params, item.pixels, targets, eps,
                                            cfg.inner_iters, cfg.inner_alpha,
                                            cfg.norm, cfg.reduction)
                        grad_items.append((adv,
                                           ChunkwiseLoss(targets, reduction=cfg.reduction)))
                total = 0.0
                grads = {name: np.zeros_like(getattr(params, name)) for name in PARAM_NAMES}
                for entry in grad_items:
                    pixels, spec = entry[0], entry[1]
                    weight = entry[2] if len(entry) > 2 else 1.0
                    value, g, _ = param_gradient(params, [(pixels, spec)])
                    total += weight * value
                    for name in PARAM_NAMES:
                        grads[name] += weight * g[name]
                scale = 1.0 / len(batch)
                grads = {k: g * scale for k, g in grads.items()}
                epoch_loss += total
                if not math.isfinite(total) or any(not np.isfinite(g).all() for g in grads.values()):
                    aborted = True
                    break
                opt.step(params.as_dict(), grads, lr_now)
                if not _finite_params(params):
                    aborted = True
                    break
            if not aborted:
                epoch_metrics = {
                    "epoch": epoch,
                    "lr": lr_now,
                    "eps": eps,
                    "train_loss": epoch_loss / len(train_items),
                    "val_auc_clean": _chunk_auc(params, val_items, None, cfg),
                    "val_auc_robust": _chunk_auc(params, val_items, eps, cfg),
                }
        except NumericError as exc:
            log.warning("epoch %d diverged: %s", epoch, exc)
            aborted = True
        if aborted:
            params = snapshot
            break
        snapshot = params.copy()
        metrics.append(epoch_metrics)
    return Phase2Result(params=params, metrics=metrics, aborted=aborted,
                        val_ids=[it.video_id for it in val_items])


def _chunk_auc(params: ScorerParams, items: list[TrainItem],
               eps: float | None, cfg: AdvTrainConfig) -> float | None:
    """Chunk-level AUC against the items' own targets (no ground truth)."""
    if not items:
        return None
    scorer = ChunkScorer(params)
    scores, labels = [], []
    for item in items:
        px = item.pixels
        if eps is not None and eps > 0:
            px = chunkwise_pgd(params, px, item.targets.astype(np.float64), eps,
                               cfg.inner_iters, cfg.inner_alpha, cfg.norm,
                               cfg.reduction)
        scores.append(scorer.chunk_scores(px))
        labels.append(item.targets)
    try:
        return auroc(np.concatenate(scores), np.concatenate(labels))
    except UndefinedAUCError:
        return None
