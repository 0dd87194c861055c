"""Loss specs and their exact gradients wrt pixels and parameters.

A LossSpec picks what scalar is differentiated:

    MilLoss(y, kind)        BCE between the aggregated video score and the
                            video label (the weak-supervision objective)
    ChunkwiseLoss(targets)  sum (or mean) of per-chunk BCE terms; targets may
                            be soft (used by the consistency regularizer)
    ChunkScore(index)       one chunk's raw score S_i
    VadLoss(y_signs)        sum_i Y_i * S_i with Y_i in {+1 normal, -1 abnormal}
                            (the attack objective that inverts every chunk)

Probabilities are clamped to [BCE_CLAMP, 1 - BCE_CLAMP] before logs; the
gradients implemented here are the exact derivatives of the clamped values
(zero where the clamp is active).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from robustvad.errors import ContractError
from robustvad.scorer.aggregate import AggregatorKind, aggregate_backward, aggregate_with_cache
from robustvad.scorer.network import backward, chunks_tensor, forward
from robustvad.scorer.params import PARAM_NAMES, ScorerParams

BCE_CLAMP = 1e-7


def bce(p, target) -> float:
    """Binary cross-entropy with clamped probabilities; sums over elements."""
    p = np.clip(np.asarray(p, dtype=np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = np.asarray(target, dtype=np.float64)
    return float(np.sum(-t * np.log(p) - (1.0 - t) * np.log1p(-p)))


def bce_grad(p, target) -> np.ndarray:
    """d bce / d p, elementwise; exactly zero where the clamp is active."""
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    g = (pc - t) / (pc * (1.0 - pc))
    return np.where((p > BCE_CLAMP) & (p < 1.0 - BCE_CLAMP), g, 0.0)


@dataclass
class MilLoss:
    y: int
    kind: AggregatorKind

    def __post_init__(self):
        if self.y not in (0, 1):
            raise ContractError("video label must be 0 or 1")


@dataclass
class ChunkwiseLoss:
    targets: np.ndarray  # (m,) values in [0, 1]; hard labels are 0/1
    reduction: str = "sum"

    def __post_init__(self):
        t = np.asarray(self.targets, dtype=np.float64)
        if t.ndim != 1:
            raise ContractError("chunk targets must be 1-d")
        if t.size and (t.min() < 0.0 or t.max() > 1.0):
            raise ContractError("chunk targets must lie in [0, 1]")
        if self.reduction not in ("sum", "mean"):
            raise ContractError(f"bad reduction {self.reduction!r}")
        self.targets = t


@dataclass
class ChunkScore:
    index: int


@dataclass
class VadLoss:
    y_signs: np.ndarray  # (m,) values in {-1, +1}

    def __post_init__(self):
        y = np.asarray(self.y_signs, dtype=np.float64)
        if y.ndim != 1 or not np.isin(y, (-1.0, 1.0)).all():
            raise ContractError("vad-loss signs must be a 1-d array over {-1, +1}")
        self.y_signs = y


LossSpec = MilLoss | ChunkwiseLoss | ChunkScore | VadLoss


def value_and_score_grad(s: np.ndarray, features: np.ndarray, spec: LossSpec):
    """Loss value plus d(loss)/dS; also the feature-path gradient and
    attention-param grads when the spec aggregates through attention."""
    m = s.shape[0]
    if isinstance(spec, MilLoss):
        a, cache = aggregate_with_cache(s, spec.kind, features)
        value = bce(a, spec.y)
        ds_agg, dfeat, att_grads = aggregate_backward(cache, float(bce_grad(a, spec.y)))
        return value, ds_agg, dfeat, att_grads
    if isinstance(spec, ChunkwiseLoss):
        if spec.targets.shape[0] != m:
            raise ContractError(f"{spec.targets.shape[0]} chunk targets for {m} chunks")
        scale = 1.0 / m if spec.reduction == "mean" else 1.0
        value = scale * bce(s, spec.targets)
        return value, scale * bce_grad(s, spec.targets), None, None
    if isinstance(spec, ChunkScore):
        if not 0 <= spec.index < m:
            raise ContractError(f"chunk index {spec.index} out of range for {m} chunks")
        ds = np.zeros(m)
        ds[spec.index] = 1.0
        return float(s[spec.index]), ds, None, None
    if isinstance(spec, VadLoss):
        if spec.y_signs.shape[0] != m:
            raise ContractError(f"{spec.y_signs.shape[0]} sign entries for {m} chunks")
        return float(spec.y_signs @ s), spec.y_signs.copy(), None, None
    raise ContractError(f"unknown loss spec {spec!r}")


def loss_value(params: ScorerParams, pixels: np.ndarray, spec: LossSpec) -> float:
    chunks = chunks_tensor(params, pixels)
    s, cache = forward(params, chunks)
    value, _, _, _ = value_and_score_grad(s, cache["f"], spec)
    return value


def loss_and_input_gradient(params: ScorerParams, pixels: np.ndarray,
                            spec: LossSpec) -> tuple[float, np.ndarray]:
    """Loss value and its exact gradient wrt every pixel of the video tensor
    (trailing frames beyond the last full chunk get zero gradient)."""
    chunks = chunks_tensor(params, pixels)
    s, cache = forward(params, chunks)
    value, ds, dfeat, _ = value_and_score_grad(s, cache["f"], spec)
    dx, _ = backward(params, cache, ds, extra_df=dfeat, need_input=True)
    grad = np.zeros(pixels.shape, dtype=np.float64)
    m, t = chunks.shape[0], chunks.shape[1]
    grad[: m * t] = dx.reshape(m * t, *pixels.shape[1:])
    return value, grad


def input_gradient(params: ScorerParams, pixels: np.ndarray, spec: LossSpec) -> np.ndarray:
    return loss_and_input_gradient(params, pixels, spec)[1]


def param_gradient(params: ScorerParams, items) -> tuple[float, dict, dict | None]:
    """Total loss and summed parameter gradients over (pixels, spec) pairs.

    Returns (value, grads-by-param-name, attention-grads-or-None).
    """
    total = 0.0
    grads = {name: np.zeros_like(getattr(params, name)) for name in PARAM_NAMES}
    att_total: dict | None = None
    for pixels, spec in items:
        chunks = chunks_tensor(params, pixels)
        s, cache = forward(params, chunks)
        value, ds, dfeat, att_grads = value_and_score_grad(s, cache["f"], spec)
        _, g = backward(params, cache, ds, extra_df=dfeat,
                        need_input=False, need_params=True)
        total += value
        for name in PARAM_NAMES:
            grads[name] += g[name]
        if att_grads is not None:
            if att_total is None:
                att_total = {k: np.zeros_like(v) for k, v in att_grads.items()}
            for k, v in att_grads.items():
                att_total[k] += v
    return total, grads, att_total


def score_chunk(params: ScorerParams, chunk_pixels: np.ndarray) -> float:
    """Score one (T, H, W, C) chunk."""
    s, _ = forward(params, np.asarray(chunk_pixels, dtype=np.float64)[None])
    return float(s[0])


def mil_loss(params: ScorerParams, pixels: np.ndarray, y: int,
             kind: AggregatorKind) -> float:
    return loss_value(params, pixels, MilLoss(y=y, kind=kind))


def chunkwise_loss(params: ScorerParams, pixels: np.ndarray, targets,
                   reduction: str = "sum") -> float:
    return loss_value(params, pixels, ChunkwiseLoss(targets=np.asarray(targets),
                                                    reduction=reduction))
