"""Chunk scorer network: forward pass and manual backward passes.

Per chunk of T frames (T = chunk_size):
    frame-difference channels appended (first frame's diff is zero),
        gated through tanh(diff_gain * d)
    conv 3x3 stride 2 pad 1 -> tanh^2          (conv1_filters maps)
    conv 3x3 stride 2 pad 1 -> tanh            (conv2_filters maps)
    mean over the T frames, flatten
    linear projection to feature_dim
    abnormality score S = sigmoid(f . (t_a - t_n))

which is exactly the two-way softmax over the prompt logits (f.t_a, f.t_n)
taken at the abnormal side.

The difference channels pass through a fixed saturating contrast gate
tanh(diff_gain * d): object motion produces |d| well above 1/diff_gain, so
the convolution stage sees contrast-normalized motion masks instead of raw
amplitudes (the same role pixel whitening plays in front of large backbones).
The gate's slope at d = 0 is diff_gain, so scores stay highly sensitive to
small pixel changes in static regions - the operating regime the attack
experiments probe.

The first activation is squared so each unit responds to the energy of its
filter rather than its sign: the temporal mean then accumulates motion energy
from the difference channels instead of letting opposite-signed responses
telescope away (a moving edge contributes +/- pairs that would otherwise
cancel over the chunk). The second layer keeps a plain tanh.

Everything runs in float64; gradients are exact (they are checked against
central finite differences in the tests).
"""

from __future__ import annotations

import numpy as np

from robustvad import _kernels as K
from robustvad.errors import ContractError, NumericError
from robustvad.scorer.params import ScorerParams
from robustvad.videostore.model import Video


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def diff_augment(chunks: np.ndarray, gain: float) -> np.ndarray:
    """(m, T, H, W, C) -> (m, T, H, W, 2C): raw channels plus gated
    temporal-difference channels tanh(gain * (x_t - x_{t-1})); the first
    frame's difference is zero."""
    m, t, h, w, c = chunks.shape
    z = np.zeros((m, t, h, w, 2 * c), dtype=np.float64)
    z[..., :c] = chunks
    z[:, 1:, :, :, c:] = np.tanh(gain * (chunks[:, 1:] - chunks[:, :-1]))
    return z


def diff_augment_backward(dz: np.ndarray, z: np.ndarray, gain: float) -> np.ndarray:
    """Adjoint of diff_augment; z is the forward output (the gate slope is
    gain * (1 - gated^2), recovered from the stored gated values)."""
    c = dz.shape[-1] // 2
    dx = dz[..., :c].copy()
    dd = dz[:, 1:, :, :, c:] * (gain * (1.0 - z[:, 1:, :, :, c:] ** 2))
    dx[:, 1:] += dd
    dx[:, :-1] -= dd
    return dx


def chunks_tensor(params: ScorerParams, pixels: np.ndarray) -> np.ndarray:
    """Reshape the first m*chunk_size frames of a video into (m, T, H, W, C)."""
    cfg = params.config
    if pixels.ndim != 4:
        raise ContractError(f"expected (N,H,W,C) pixels, got {pixels.shape}")
    n, h, w, c = pixels.shape
    if (h, w, c) != (cfg.height, cfg.width, cfg.channels):
        raise ContractError(
            f"frame geometry {(h, w, c)} does not match scorer config "
            f"{(cfg.height, cfg.width, cfg.channels)}"
        )
    m = n // cfg.chunk_size
    if m == 0:
        raise ContractError(f"video of {n} frames is shorter than one chunk")
    used = pixels[: m * cfg.chunk_size]
    return np.ascontiguousarray(used, dtype=np.float64).reshape(
        m, cfg.chunk_size, h, w, c
    )


def forward(params: ScorerParams, chunks: np.ndarray) -> tuple[np.ndarray, dict]:
    """Score a (m, T, H, W, C) chunk batch; returns (S, cache for backward)."""
    cfg = params.config
    m, t, h, w, c = chunks.shape
    if t != cfg.chunk_size:
        raise ContractError(f"chunk length {t} != configured {cfg.chunk_size}")
    z = diff_augment(np.asarray(chunks, dtype=np.float64), cfg.diff_gain)
    zf = z.reshape(m * t, h, w, 2 * c)
    a1 = K.conv2d_forward(zf, params.w1, params.b1, 2, 1)
    q1 = np.tanh(a1)
    h1 = q1 * q1
    a2 = K.conv2d_forward(h1, params.w2, params.b2, 2, 1)
    h2 = np.tanh(a2)
    gh, gw = cfg.grid
    pooled = h2.reshape(m, t, gh, gw, cfg.conv2_filters).mean(axis=1)
    u = pooled.reshape(m, cfg.flat_dim)
    f = u @ params.proj + params.proj_b
    delta = f @ (params.t_a - params.t_n)
    s = sigmoid(delta)
    if not np.isfinite(s).all():
        bad = int(np.flatnonzero(~np.isfinite(s))[0])
        raise NumericError(f"non-finite score at chunk {bad}", chunk_index=bad)
    cache = {"chunks_shape": chunks.shape, "z": z, "q1": q1, "h1": h1,
             "h2": h2, "u": u, "f": f, "delta": delta, "s": s}
    return s, cache


def prompt_logits(params: ScorerParams, chunks: np.ndarray) -> np.ndarray:
    """(m, 2) logits (abnormal, normal); softmax over them gives (S, 1-S)."""
    s, cache = forward(params, chunks)
    f = cache["f"]
    return np.stack([f @ params.t_a, f @ params.t_n], axis=1)


def backward(params: ScorerParams, cache: dict, d_s: np.ndarray,
             extra_df: np.ndarray | None = None,
             need_input: bool = True, need_params: bool = False):
    """Backpropagate d(loss)/dS (and optionally an extra d(loss)/df term that
    bypasses S, used by attention aggregation).

    Returns (dx, grads): dx is (m, T, H, W, C) or None; grads is a dict over
    the ScorerParams arrays or None.
    """
    cfg = params.config
    m, t, h, w, c = cache["chunks_shape"]
    s, f, u = cache["s"], cache["f"], cache["u"]
    direction = params.t_a - params.t_n
    d_delta = np.asarray(d_s, dtype=np.float64) * s * (1.0 - s)
    df = d_delta[:, None] * direction
    if extra_df is not None:
        df = df + extra_df
    du = df @ params.proj.T
    gh, gw = cfg.grid
    dh2 = np.repeat(
        du.reshape(m, 1, gh, gw, cfg.conv2_filters) / t, t, axis=1
    ).reshape(m * t, gh, gw, cfg.conv2_filters)
    da2 = dh2 * (1.0 - cache["h2"] ** 2)
    gh1, gw1 = cache["h1"].shape[1], cache["h1"].shape[2]
    dh1 = K.conv2d_backward_input(da2, params.w2, 2, 1, gh1, gw1)
    q1 = cache["q1"]
    da1 = dh1 * (2.0 * q1 * (1.0 - q1 * q1))

    dx = None
    if need_input:
        dz = K.conv2d_backward_input(da1, params.w1, 2, 1, h, w)
        dx = diff_augment_backward(dz.reshape(m, t, h, w, 2 * c),
                                   cache["z"], cfg.diff_gain)

    grads = None
    if need_params:
        zf = cache["z"].reshape(m * t, h, w, 2 * c)
        gw2_, gb2_ = K.conv2d_backward_params(cache["h1"], da2, 3, 3, 2, 1)
        gw1_, gb1_ = K.conv2d_backward_params(zf, da1, 3, 3, 2, 1)
        gta = f.T @ d_delta
        grads = {
            "w1": gw1_, "b1": gb1_, "w2": gw2_, "b2": gb2_,
            "proj": u.T @ df, "proj_b": df.sum(axis=0),
            "t_a": gta, "t_n": -gta,
        }
    return dx, grads


class ChunkScorer:
    """Convenience wrapper giving attacks/eval a minimal score+gradient surface."""

    def __init__(self, params: ScorerParams):
        self.params = params

    @property
    def chunk_size(self) -> int:
        return self.params.config.chunk_size

    def num_chunks(self, n_frames: int) -> int:
        return n_frames // self.chunk_size

    def chunk_scores(self, pixels: np.ndarray) -> np.ndarray:
        """Per-chunk abnormality scores for whole-video (N,H,W,C) pixels."""
        s, _ = forward(self.params, chunks_tensor(self.params, pixels))
        return s

    def chunk_scores_with_cache(self, pixels: np.ndarray):
        return forward(self.params, chunks_tensor(self.params, pixels))

    def chunk_scores_grad(self, pixels: np.ndarray, d_s: np.ndarray) -> np.ndarray:
        """Gradient of sum(d_s * S) wrt the video pixels (zeros on trailing frames)."""
        chunks = chunks_tensor(self.params, pixels)
        _, cache = forward(self.params, chunks)
        dx, _ = backward(self.params, cache, d_s, need_input=True)
        out = np.zeros_like(pixels, dtype=np.float64)
        m, t = chunks.shape[0], chunks.shape[1]
        out[: m * t] = dx.reshape(m * t, *pixels.shape[1:])
        return out

    def score_video(self, video: Video) -> np.ndarray:
        return self.chunk_scores(video.pixels)
