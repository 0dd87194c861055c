"""Chunk scorer: network, parameters/checkpoints, aggregators, loss specs."""

from robustvad.scorer.aggregate import (
    AGGREGATOR_NAMES,
    AggregatorKind,
    aggregate,
    aggregate_backward,
    aggregate_with_cache,
    make_abmil,
)
from robustvad.scorer.losses import (
    BCE_CLAMP,
    ChunkScore,
    ChunkwiseLoss,
    LossSpec,
    MilLoss,
    VadLoss,
    bce,
    bce_grad,
    chunkwise_loss,
    input_gradient,
    loss_and_input_gradient,
    loss_value,
    mil_loss,
    param_gradient,
    score_chunk,
)
from robustvad.scorer.network import (
    ChunkScorer,
    backward,
    chunks_tensor,
    diff_augment,
    forward,
    prompt_logits,
    sigmoid,
)
from robustvad.scorer.params import (
    PARAM_NAMES,
    ScorerConfig,
    ScorerParams,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "AGGREGATOR_NAMES",
    "AggregatorKind",
    "BCE_CLAMP",
    "ChunkScore",
    "ChunkScorer",
    "ChunkwiseLoss",
    "LossSpec",
    "MilLoss",
    "PARAM_NAMES",
    "ScorerConfig",
    "ScorerParams",
    "VadLoss",
    "aggregate",
    "aggregate_backward",
    "aggregate_with_cache",
    "backward",
    "bce",
    "bce_grad",
    "chunks_tensor",
    "chunkwise_loss",
    "diff_augment",
    "forward",
    "init_params",
    "input_gradient",
    "load_checkpoint",
    "loss_and_input_gradient",
    "loss_value",
    "make_abmil",
    "mil_loss",
    "param_gradient",
    "prompt_logits",
    "save_checkpoint",
    "score_chunk",
    "sigmoid",
]
