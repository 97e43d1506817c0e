"""Binary model checkpoints ("VCMM" format).

Layout, all little-endian:

    magic      4s   b"VCMM"
    version    u16  1
    config     u32 num_layers, u32 hidden_size, u32 input_size,
               f64 learning_rate, u32 batch_size, u32 max_epochs,
               u64 seed, f64 clip_norm
    columns    u32 count, then per name: u16 byte length + UTF-8 bytes
    norm       u8 present; if 1: f64[input_size] mean, f64[input_size] std
    metadata   i32 best epoch, f64 validation PCC
    tensors    f64 arrays, per layer W_ih, W_hh, b; then head_w, head_b
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..features.matrix import NormalizationStats
from .lstm import LSTMWeights, parameter_shapes

MAGIC = b"VCMM"
VERSION = 1
_CONFIG = struct.Struct("<IIIdIIQd")


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    num_layers: int = 6
    hidden_size: int = 256
    input_size: int = 13
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 50
    seed: int = 0
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_size < 1 or self.input_size < 1:
            raise ValueError(f"invalid model dims in {self}")


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    weights: LSTMWeights
    column_names: tuple
    normalization: NormalizationStats | None = None
    epoch: int = 0
    val_pcc: float = float("nan")
    history: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        self.column_names = tuple(self.column_names)
        if not self.column_names:
            raise CheckpointError("checkpoint needs column names")
        if len(self.column_names) != self.config.input_size:
            raise CheckpointError(
                f"{len(self.column_names)} column names for input_size {self.config.input_size}"
            )
        expected = parameter_shapes(self.config.input_size, self.config.hidden_size, self.config.num_layers)
        got = [a.shape for a in self.weights.arrays()]
        if got != expected:
            raise CheckpointError("weight shapes do not match the config")


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(ckpt))


def checkpoint_to_bytes(ckpt: ModelCheckpoint) -> bytes:
    c = ckpt.config
    parts = [MAGIC, struct.pack("<H", VERSION),
             _CONFIG.pack(c.num_layers, c.hidden_size, c.input_size, c.learning_rate,
                          c.batch_size, c.max_epochs, c.seed, c.clip_norm),
             struct.pack("<I", len(ckpt.column_names))]
    for name in ckpt.column_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    if ckpt.normalization is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01")
        parts.append(np.asarray(ckpt.normalization.mean, dtype="<f8").tobytes())
        parts.append(np.asarray(ckpt.normalization.std, dtype="<f8").tobytes())
    parts.append(struct.pack("<id", ckpt.epoch, ckpt.val_pcc))
    for arr in ckpt.weights.arrays():
        parts.append(np.asarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def floats(self, shape):
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)


def load_checkpoint(path) -> ModelCheckpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())


def checkpoint_from_bytes(data: bytes) -> ModelCheckpoint:
    cur = _Cursor(data)
    if cur.take(4) != MAGIC:
        raise CheckpointError("bad magic; not a VCMM checkpoint")
    (version,) = cur.unpack("<H")
    if version > VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (this build reads <= {VERSION})")
    if version < 1:
        raise CheckpointError(f"invalid checkpoint version {version}")
    fields = _CONFIG.unpack(cur.take(_CONFIG.size))
    try:
        config = ModelConfig(*fields)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    (n_cols,) = cur.unpack("<I")
    if n_cols != config.input_size:
        raise CheckpointError(f"{n_cols} column names for input_size {config.input_size}")
    names = []
    for _ in range(n_cols):
        (length,) = cur.unpack("<H")
        names.append(cur.take(length).decode("utf-8"))
    (has_norm,) = cur.unpack("<B")
    norm = None
    if has_norm:
        mean = cur.floats((config.input_size,))
        std = cur.floats((config.input_size,))
        norm = NormalizationStats(mean, std, tuple(names))
    epoch, val_pcc = cur.unpack("<id")
    shapes = parameter_shapes(config.input_size, config.hidden_size, config.num_layers)
    arrays = [cur.floats(s) for s in shapes]
    if cur.pos != len(data):
        raise CheckpointError(f"{len(data) - cur.pos} trailing bytes after tensors")
    weights = LSTMWeights.from_arrays(arrays, config.num_layers)
    return ModelCheckpoint(config, weights, tuple(names), norm, epoch, val_pcc)
