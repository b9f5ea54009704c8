"""Single-head non-autoregressive transformer encoder for trajectory regression.

A D-dim feature sequence is projected to the model width, combined with a
fixed sinusoidal positional encoding, passed through post-norm encoder
blocks with one attention head each, and mapped per frame to the 12
articulator channels. Three frozen size classes (s/m/l) land within +-7%
of 2.1M / 7.5M / 15M parameters at the 13-dim baseline input; a "tiny"
class exists for fast tests and diagnostics.

Checkpoints ("AAIM") store the config followed by named float32 tensors.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import numerics as nm
from .corpus import Batch
from .dsp import CHANNELS
from .errors import (
    BadMagicError,
    ConfigError,
    DataFormatError,
    FormatVersionError,
    ShapeError,
    TruncatedPayloadError,
)

N_OUT = len(CHANNELS)

# size class -> (layers, model width, feedforward width)
SIZE_PRESETS = {
    "s": (3, 240, 960),
    "m": (4, 400, 1600),
    "l": (5, 512, 2048),
    "tiny": (2, 16, 64),
}

LN_EPS = 1e-5
_MASK_FILL = -1e30

CHECKPOINT_MAGIC = b"AAIM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    size_class: str
    input_dim: int
    model_width: int
    layers: int
    ff_width: int
    attention_heads: int = 1
    dropout: float = 0.1
    max_seq_len: int = 2000

    def validate(self) -> None:
        if self.attention_heads != 1:
            raise ConfigError(
                f"model uses a single attention head, got {self.attention_heads}")
        for field in ("input_dim", "model_width", "layers", "ff_width", "max_seq_len"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be >= 1, got {getattr(self, field)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @classmethod
    def for_size(cls, size_class: str, input_dim: int, dropout: float = 0.1,
                 max_seq_len: int = 2000) -> "ModelConfig":
        if size_class not in SIZE_PRESETS:
            raise ConfigError(
                f"unknown size class {size_class!r}, expected one of {sorted(SIZE_PRESETS)}")
        layers, width, ff = SIZE_PRESETS[size_class]
        return cls(size_class, input_dim, width, layers, ff,
                   dropout=dropout, max_seq_len=max_seq_len)


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter tensor of the architecture, by name."""
    d, f = config.model_width, config.ff_width
    shapes: dict[str, tuple[int, ...]] = {
        "in_proj.w": (config.input_dim, d),
        "in_proj.b": (d,),
    }
    for i in range(config.layers):
        p = f"enc{i}"
        for head in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{head}"] = (d, d)
        # no key bias: softmax rows are invariant to a per-row constant
        # shift, so a key bias has an identically-zero gradient
        for bias in ("bq", "bv", "bo"):
            shapes[f"{p}.attn.{bias}"] = (d,)
        shapes[f"{p}.ln1.gain"] = (d,)
        shapes[f"{p}.ln1.bias"] = (d,)
        shapes[f"{p}.ff.w1"] = (d, f)
        shapes[f"{p}.ff.b1"] = (f,)
        shapes[f"{p}.ff.w2"] = (f, d)
        shapes[f"{p}.ff.b2"] = (d,)
        shapes[f"{p}.ln2.gain"] = (d,)
        shapes[f"{p}.ln2.bias"] = (d,)
    shapes["out_proj.w"] = (d, N_OUT)
    shapes["out_proj.b"] = (N_OUT,)
    return shapes


def param_count(config: ModelConfig) -> int:
    """Closed-form parameter total for a config.

    Per layer: 4 attention weight matrices plus q/v/o biases (4d^2 + 3d),
    the feedforward pair (2df + f + d), and two normalizations (4d); plus
    the input and output projections.
    """
    d, f, ll, dd = config.model_width, config.ff_width, config.layers, config.input_dim
    per_layer = 4 * d * d + 3 * d + 2 * d * f + f + d + 4 * d
    return ll * per_layer + (dd * d + d) + (N_OUT * d + N_OUT)


@dataclass
class ModelParams:
    """Learned weights; immutable during forward, mutated only by training."""

    config: ModelConfig
    tensors: dict[str, nm.Tensor]

    def clone(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def total_size(self) -> int:
        return sum(t.size for t in self.tensors.values())


def build_model(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Deterministic initialization: scaled-uniform fan-based projections,
    ones/zeros for normalization gains/biases."""
    config.validate()
    rng = np.random.default_rng(seed)
    tensors: dict[str, nm.Tensor] = {}
    for name, shape in expected_shapes(config).items():
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif len(shape) == 1:
            data = np.zeros(shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-limit, limit, size=shape)
        tensors[name] = nm.Tensor(data)
    return ModelParams(config, tensors)


@lru_cache(maxsize=8)
def _positional_encoding(length: int, width: int) -> np.ndarray:
    position = np.arange(length)[:, None]
    index = np.arange(width)[None, :]
    angle = position / np.power(10000.0, 2.0 * (index // 2) / width)
    pe = np.where(index % 2 == 0, np.sin(angle), np.cos(angle))
    pe.setflags(write=False)
    return pe


def forward_tensor(params: ModelParams, features: nm.Tensor, mask: np.ndarray,
                   mode: str = "eval", tape: nm.GradientTape | None = None,
                   rng: np.random.Generator | None = None) -> nm.Tensor:
    """Core forward pass on a (B, Tmax, D) feature tensor and validity mask.

    Attention scores over padded key positions are pushed to an effective
    minus-infinity before the softmax, so valid-region outputs do not
    depend on how much padding a batch carries. Dropout is active only in
    train mode, which therefore needs an `rng`.
    """
    cfg = params.config
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    if train and cfg.dropout > 0.0 and rng is None:
        raise ConfigError("train-mode forward needs an rng for dropout")
    if features.data.ndim != 3:
        raise ShapeError(f"features must be (B, T, D), got shape {features.shape}")
    b, t_max, dim = features.shape
    if mask.shape != (b, t_max):
        raise ShapeError(f"mask shape {mask.shape} does not match batch ({b}, {t_max})")
    if dim != cfg.input_dim:
        raise ShapeError(f"batch features have dim {dim}, model expects {cfg.input_dim}")
    if t_max > cfg.max_seq_len:
        raise ShapeError(
            f"sequence length {t_max} exceeds positional table {cfg.max_seq_len}")
    p = params.tensors
    scale = 1.0 / math.sqrt(cfg.model_width)
    key_keep = mask[:, None, :]                 # (B, 1, T) over key positions

    x = nm.add(nm.matmul(features, p["in_proj.w"], tape), p["in_proj.b"], tape)
    x = nm.add(x, nm.Tensor(_positional_encoding(t_max, cfg.model_width)), tape)
    for i in range(cfg.layers):
        at = f"enc{i}.attn"
        q = nm.add(nm.matmul(x, p[f"{at}.wq"], tape), p[f"{at}.bq"], tape)
        k = nm.matmul(x, p[f"{at}.wk"], tape)
        v = nm.add(nm.matmul(x, p[f"{at}.wv"], tape), p[f"{at}.bv"], tape)
        scores = nm.scale(nm.matmul(q, nm.transpose_last2(k, tape), tape), scale, tape)
        scores = nm.mask_fill(scores, key_keep, _MASK_FILL, tape)
        attn = nm.softmax_rows(scores, tape)
        if train and cfg.dropout > 0.0:
            attn = nm.dropout(attn, cfg.dropout, rng, tape)
        ctx = nm.matmul(attn, v, tape)
        attn_out = nm.add(nm.matmul(ctx, p[f"{at}.wo"], tape), p[f"{at}.bo"], tape)
        x = nm.layer_norm(nm.add(x, attn_out, tape),
                          p[f"enc{i}.ln1.gain"], p[f"enc{i}.ln1.bias"], LN_EPS, tape)
        h = nm.relu(nm.add(nm.matmul(x, p[f"enc{i}.ff.w1"], tape),
                           p[f"enc{i}.ff.b1"], tape), tape)
        ff = nm.add(nm.matmul(h, p[f"enc{i}.ff.w2"], tape), p[f"enc{i}.ff.b2"], tape)
        if train and cfg.dropout > 0.0:
            ff = nm.dropout(ff, cfg.dropout, rng, tape)
        x = nm.layer_norm(nm.add(x, ff, tape),
                          p[f"enc{i}.ln2.gain"], p[f"enc{i}.ln2.bias"], LN_EPS, tape)
    return nm.add(nm.matmul(x, p["out_proj.w"], tape), p["out_proj.b"], tape)


def forward(params: ModelParams, batch: Batch, mode: str = "eval",
            tape: nm.GradientTape | None = None,
            rng: np.random.Generator | None = None) -> nm.Tensor:
    """Predict (B, Tmax, 12) trajectories for a padded batch."""
    return forward_tensor(params, nm.Tensor(batch.features), batch.mask,
                          mode=mode, tape=tape, rng=rng)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CONFIG_FIELDS = (
    ("size_class", str),
    ("input_dim", int),
    ("model_width", int),
    ("layers", int),
    ("ff_width", int),
    ("attention_heads", int),
    ("dropout", float),
    ("max_seq_len", int),
)


def _encode_config(config: ModelConfig) -> bytes:
    text = "".join(f"{name}={getattr(config, name)}\n" for name, _ in _CONFIG_FIELDS)
    blob = text.encode("utf-8")
    return struct.pack("<I", len(blob)) + blob


def _decode_config(blob: bytes, offset: int):
    (length,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    text = blob[offset:offset + length].decode("utf-8")
    values = {}
    for line in text.splitlines():
        key, _, raw = line.partition("=")
        values[key] = raw
    kwargs = {}
    try:
        for name, typ in _CONFIG_FIELDS:
            kwargs[name] = typ(values[name])
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"malformed checkpoint config block: {exc}") from exc
    return ModelConfig(**kwargs), offset + length


def save_checkpoint(path, params: ModelParams) -> None:
    """Write config plus named float32 parameter tensors."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(_encode_config(params.config))
        fh.write(struct.pack("<I", len(params.tensors)))
        for name, tensor in params.tensors.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", tensor.data.ndim))
            fh.write(struct.pack(f"<{tensor.data.ndim}I", *tensor.data.shape))
            fh.write(tensor.data.astype("<f4").tobytes())


def load_checkpoint(path) -> ModelParams:
    """Read a checkpoint, validating shapes against its config."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: expected magic {CHECKPOINT_MAGIC!r}, got {blob[:4]!r}")
    if len(blob) < 8:
        raise TruncatedPayloadError(f"{path}: truncated checkpoint header")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatVersionError(f"{path}: unsupported checkpoint version {version}")
    config, offset = _decode_config(blob, 8)
    config.validate()
    shapes = expected_shapes(config)
    try:
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        tensors: dict[str, nm.Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            raw = blob[offset:offset + 4 * size]
            if len(raw) < 4 * size:
                raise TruncatedPayloadError(f"{path}: tensor {name!r} payload truncated")
            offset += 4 * size
            data = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
            tensors[name] = nm.Tensor(data)
    except struct.error as exc:
        raise TruncatedPayloadError(f"{path}: truncated checkpoint") from exc
    missing = sorted(set(shapes) - set(tensors))
    extra = sorted(set(tensors) - set(shapes))
    if missing or extra:
        raise DataFormatError(
            f"{path}: parameter names do not match config (missing {missing}, "
            f"extra {extra})")
    for name, shape in shapes.items():
        if tensors[name].shape != shape:
            raise DataFormatError(
                f"{path}: tensor {name!r} has shape {tensors[name].shape}, "
                f"config demands {shape}")
    return ModelParams(config, tensors)
