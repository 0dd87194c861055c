"""Scorer configuration, parameter container, and the checkpoint format.

Checkpoint layout (little-endian throughout):
    bytes 0..3  magic b"RVC1"
    uint32      format version (currently 1)
    uint32      number of entries
    entries     u16 name length, name utf-8, u8 dtype code (1=float64,
                2=uint8), u8 ndim, ndim x uint32 shape, raw payload

The scorer config rides along as a JSON blob in the uint8 entry "__config__",
so a checkpoint is self-describing. Identical params -> identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from robustvad.errors import ConfigurationError, ContractError, FormatError

CHECKPOINT_MAGIC = b"RVC1"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("w1", "b1", "w2", "b2", "proj", "proj_b", "t_n", "t_a")


def _conv_out(size: int) -> int:
    # kernel 3, stride 2, pad 1
    return (size + 2 - 3) // 2 + 1


@dataclass(frozen=True)
class ScorerConfig:
    height: int = 32
    width: int = 32
    channels: int = 3
    chunk_size: int = 16
    conv1_filters: int = 8
    conv2_filters: int = 16
    feature_dim: int = 32
    diff_gain: float = 27.0  # contrast gate on the difference channels

    def __post_init__(self):
        if self.height < 4 or self.width < 4:
            raise ConfigurationError("scorer needs at least 4x4 frames")
        if min(self.channels, self.chunk_size, self.conv1_filters,
               self.conv2_filters, self.feature_dim) < 1:
            raise ConfigurationError("scorer config values must be positive")
        if self.diff_gain <= 0:
            raise ConfigurationError("diff_gain must be > 0")

    @property
    def grid(self) -> tuple[int, int]:
        return _conv_out(_conv_out(self.height)), _conv_out(_conv_out(self.width))

    @property
    def flat_dim(self) -> int:
        gh, gw = self.grid
        return gh * gw * self.conv2_filters


@dataclass
class ScorerParams:
    """All trainable arrays plus the geometry they were built for."""

    config: ScorerConfig
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    proj: np.ndarray
    proj_b: np.ndarray
    t_n: np.ndarray  # normal prompt vector
    t_a: np.ndarray  # abnormal prompt vector

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def replace(self, arrays: dict[str, np.ndarray]) -> "ScorerParams":
        kwargs = {name: arrays.get(name, getattr(self, name)) for name in PARAM_NAMES}
        return ScorerParams(config=self.config, **kwargs)

    def copy(self) -> "ScorerParams":
        return self.replace({k: v.copy() for k, v in self.as_dict().items()})

    def validate(self):
        cfg = self.config
        c2 = 2 * cfg.channels
        expected = {
            "w1": (3, 3, c2, cfg.conv1_filters),
            "b1": (cfg.conv1_filters,),
            "w2": (3, 3, cfg.conv1_filters, cfg.conv2_filters),
            "b2": (cfg.conv2_filters,),
            "proj": (cfg.flat_dim, cfg.feature_dim),
            "proj_b": (cfg.feature_dim,),
            "t_n": (cfg.feature_dim,),
            "t_a": (cfg.feature_dim,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ContractError(f"param {name}: shape {arr.shape}, expected {shape}")


def init_params(config: ScorerConfig, seed: int) -> ScorerParams:
    """Seeded init: conv/linear weights ~ N(0, 1/fan_in), prompts ~ N(0, 1/d)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5C0]))
    c2 = 2 * config.channels
    d = config.feature_dim

    def normal(shape, fan_in):
        return rng.standard_normal(shape) / np.sqrt(fan_in)

    p = ScorerParams(
        config=config,
        w1=normal((3, 3, c2, config.conv1_filters), 9 * c2),
        b1=np.zeros(config.conv1_filters),
        w2=normal((3, 3, config.conv1_filters, config.conv2_filters),
                  9 * config.conv1_filters),
        b2=np.zeros(config.conv2_filters),
        proj=normal((config.flat_dim, d), config.flat_dim),
        proj_b=np.zeros(d),
        t_n=rng.standard_normal(d) / np.sqrt(d),
        t_a=rng.standard_normal(d) / np.sqrt(d),
    )
    p.validate()
    return p


def _write_entry(fh, name: str, arr: np.ndarray):
    raw = name.encode("utf-8")
    fh.write(np.uint16(len(raw)).tobytes())
    fh.write(raw)
    if arr.dtype == np.float64:
        code = 1
    elif arr.dtype == np.uint8:
        code = 2
    else:
        raise ContractError(f"checkpoint entry {name}: unsupported dtype {arr.dtype}")
    fh.write(bytes([code, arr.ndim]))
    fh.write(np.asarray(arr.shape, dtype="<u4").tobytes())
    fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def save_checkpoint(params: ScorerParams, path,
                    extra: dict[str, np.ndarray] | None = None) -> None:
    """Persist params (plus optional named extra arrays, e.g. attention
    weights of an abmil aggregator, stored under their given names)."""
    params.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg_blob = np.frombuffer(
        json.dumps(asdict(params.config), sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    entries = [("__config__", cfg_blob)]
    entries += [(name, np.asarray(getattr(params, name), dtype=np.float64))
                for name in PARAM_NAMES]
    for name in sorted(extra or {}):
        if name in PARAM_NAMES or name == "__config__":
            raise ContractError(f"extra checkpoint array shadows {name!r}")
        entries.append((name, np.asarray(extra[name], dtype=np.float64)))
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.uint32(CHECKPOINT_VERSION).tobytes())
        fh.write(np.uint32(len(entries)).tobytes())
        for name, arr in entries:
            _write_entry(fh, name, arr)


def load_checkpoint_full(path) -> tuple[ScorerParams, dict]:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a scorer checkpoint")
    version = int(np.frombuffer(blob[4:8], dtype="<u4")[0])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    n_entries = int(np.frombuffer(blob[8:12], dtype="<u4")[0])
    off = 12
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_entries):
        try:
            name_len = int(np.frombuffer(blob[off : off + 2], dtype="<u2")[0])
            off += 2
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            code, ndim = blob[off], blob[off + 1]
            off += 2
            shape = tuple(np.frombuffer(blob[off : off + 4 * ndim], dtype="<u4").astype(int))
            off += 4 * ndim
            dtype = {1: "<f8", 2: "u1"}[code]
            nbytes = int(np.prod(shape)) * np.dtype(dtype).itemsize
            arr = np.frombuffer(blob[off : off + nbytes], dtype=dtype).reshape(shape)
            off += nbytes
        except (KeyError, ValueError, IndexError) as exc:
            raise FormatError(f"{path}: corrupt checkpoint ({exc})") from exc
        arrays[name] = arr.astype(np.float64) if code == 1 else arr
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    if "__config__" not in arrays:
        raise FormatError(f"{path}: checkpoint missing config entry")
    cfg_doc = json.loads(bytes(arrays.pop("__config__")).decode("utf-8"))
    known = {f.name for f in fields(ScorerConfig)}
    config = ScorerConfig(**{k: v for k, v in cfg_doc.items() if k in known})
    missing = set(PARAM_NAMES) - set(arrays)
    if missing:
        raise FormatError(f"{path}: checkpoint missing arrays {sorted(missing)}")
    params = ScorerParams(config=config, **{n: arrays[n].copy() for n in PARAM_NAMES})
    params.validate()
    extra = {k: v.copy() for k, v in arrays.items() if k not in PARAM_NAMES}
    return params, extra


def load_checkpoint(path) -> ScorerParams:
    params, _ = load_checkpoint_full(path)
    return params
