"""Chunk-score aggregators for video-level MIL training and attack objectives.

MAX        hard maximum (ties -> lowest index)
LSE        log-mean-exp with sharpness r: max - ln(m)/r <= LSE <= max
SMOOTHMAX  softmax(r*S)-weighted average of S
ABMIL      gated-tanh attention over chunk FEATURES (carries its own params)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from robustvad.errors import ConfigurationError, ContractError, EmptyInputError
from robustvad.scorer.network import sigmoid

AGGREGATOR_NAMES = ("max", "lse", "smoothmax", "abmil")


@dataclass
class AggregatorKind:
    name: str = "max"
    r: float = 8.0  # sharpness for lse/smoothmax
    attention: dict[str, np.ndarray] | None = None  # abmil: V, U, w

    def __post_init__(self):
        if self.name not in AGGREGATOR_NAMES:
            raise ConfigurationError(f"unknown aggregator {self.name!r}")
        if self.name in ("lse", "smoothmax") and self.r <= 0:
            raise ConfigurationError("aggregator sharpness r must be > 0")
        if self.name == "abmil" and self.attention is None:
            raise ConfigurationError("abmil aggregator needs attention params")


def make_abmil(feature_dim: int, hidden: int = 16, seed: int = 0) -> AggregatorKind:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xAB]))
    scale = 1.0 / np.sqrt(feature_dim)
    att = {
        "V": rng.standard_normal((hidden, feature_dim)) * scale,
        "U": rng.standard_normal((hidden, feature_dim)) * scale,
        "w": rng.standard_normal(hidden) / np.sqrt(hidden),
    }
    return AggregatorKind(name="abmil", attention=att)


def _softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def aggregate_with_cache(scores: np.ndarray, kind: AggregatorKind,
                         features: np.ndarray | None = None):
    """Returns (value, cache). features (m, d) are required for abmil only."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ContractError(f"scores must be 1-d, got shape {s.shape}")
    if s.size == 0:
        raise EmptyInputError("cannot aggregate zero chunk scores")
    cache: dict = {"s": s, "kind": kind}
    if kind.name == "max":
        j = int(np.argmax(s))  # ties resolve to the lowest index
        cache["argmax"] = j
        return float(s[j]), cache
    if kind.name == "lse":
        m = s.size
        t = kind.r * s
        tmax = t.max()
        value = (tmax + np.log(np.mean(np.exp(t - tmax)))) / kind.r
        cache["weights"] = _softmax(t)
        return float(value), cache
    if kind.name == "smoothmax":
        w = _softmax(kind.r * s)
        value = float(w @ s)
        cache["weights"] = w
        cache["value"] = value
        return value, cache
    # abmil
    if features is None:
        raise ContractError("abmil aggregation needs chunk features")
    att = kind.attention
    tv = np.tanh(features @ att["V"].T)  # (m, k)
    sg = sigmoid(features @ att["U"].T)  # (m, k)
    gate = tv * sg
    e = gate @ att["w"]
    a = _softmax(e)
    value = float(a @ s)
    cache.update({"features": features, "tv": tv, "sg": sg, "gate": gate,
                  "a": a, "value": value})
    return value, cache


def aggregate(scores: np.ndarray, kind: AggregatorKind,
              features: np.ndarray | None = None) -> float:
    value, _ = aggregate_with_cache(scores, kind, features)
    return value


def aggregate_backward(cache: dict, d_value: float):
    """Returns (dS, d_features-or-None, attention-grads-or-None)."""
    kind: AggregatorKind = cache["kind"]
    s = cache["s"]
    ds = np.zeros_like(s)
    if kind.name == "max":
        ds[cache["argmax"]] = d_value
        return ds, None, None
    if kind.name == "lse":
        return d_value * cache["weights"], None, None
    if kind.name == "smoothmax":
        w, value = cache["weights"], cache["value"]
        ds = d_value * (w + kind.r * w * (s - value))
        return ds, None, None
    # abmil: value = a(f) . s
    att = kind.attention
    a, gate, tv, sg, f = cache["a"], cache["gate"], cache["tv"], cache["sg"], cache["features"]
    ds = d_value * a
    da = d_value * s
    de = a * (da - float(a @ da))  # softmax jacobian-vector product
    dgate = de[:, None] * att["w"][None, :]
    dtv = dgate * sg
    dsg = dgate * tv
    dpre_v = dtv * (1.0 - tv**2)
    dpre_u = dsg * sg * (1.0 - sg)
    dfeat = dpre_v @ att["V"] + dpre_u @ att["U"]
    att_grads = {
        "V": dpre_v.T @ f,
        "U": dpre_u.T @ f,
        "w": gate.T @ de,
    }
    return ds, dfeat, att_grads
