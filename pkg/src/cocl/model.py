"""MLP encoder + projection head, frozen reference snapshots, checkpoints."""

from __future__ import annotations

import copy
import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, FormatError
from .tensor import Tensor

CHECKPOINT_MAGIC = b"COCLCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    encoder_hidden: Tuple[int, ...] = (256,)
    embed_dim: int = 128
    proj_hidden: int = 128
    proj_dim: int = 64
    # fixed input standardisation (x - shift) / scale applied before the first layer
    input_shift: float = 0.0
    input_scale: float = 1.0

    def __post_init__(self):
        if not self.input_scale > 0:
            raise ConfigError("input_scale must be positive")
        object.__setattr__(self, "encoder_hidden", tuple(int(h) for h in self.encoder_hidden))
        dims = (self.input_dim, *self.encoder_hidden, self.embed_dim, self.proj_hidden, self.proj_dim)
        if any(int(d) <= 0 for d in dims):
            raise ConfigError(f"layer dimensions must be positive, got {dims}")

    @property
    def encoder_dims(self) -> Tuple[int, ...]:
        return (self.input_dim, *self.encoder_hidden, self.embed_dim)

    @property
    def projector_dims(self) -> Tuple[int, ...]:
        return (self.embed_dim, self.proj_hidden, self.proj_dim)


@dataclass
class Linear:
    weight: Tensor  # (fan_in, fan_out)
    bias: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), T.broadcast_rows(self.bias, x.shape[0]))

    @classmethod
    def init(cls, fan_in: int, fan_out: int, rng: np.random.Generator) -> "Linear":
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=(fan_out,))
        return cls(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))


def _mlp(layers: Sequence[Linear], x: Tensor) -> Tensor:
    # ReLU between layers, none after the last
    for i, layer in enumerate(layers):
        x = layer(x)
        if i < len(layers) - 1:
            x = T.relu(x)
    return x


@dataclass
class ModelState:
    """Trainable encoder and projector parameters."""

    config: ModelConfig
    encoder: List[Linear]
    projector: List[Linear]

    def parameters(self) -> List[Tensor]:
        out = []
        for layer in (*self.encoder, *self.projector):
            out.extend((layer.weight, layer.bias))
        return out

    def encoder_parameters(self) -> List[Tensor]:
        return [p for layer in self.encoder for p in (layer.weight, layer.bias)]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def param_hash(self) -> str:
        return parameter_hash(self.parameters())


def parameter_hash(params: Sequence[Tensor]) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def init(config: ModelConfig, seed: int) -> ModelState:
    rng = np.random.default_rng(seed)
    enc_dims = config.encoder_dims
    proj_dims = config.projector_dims
    encoder = [Linear.init(a, b, rng) for a, b in zip(enc_dims[:-1], enc_dims[1:])]
    projector = [Linear.init(a, b, rng) for a, b in zip(proj_dims[:-1], proj_dims[1:])]
    return ModelState(config, encoder, projector)


def _as_input(m_config: ModelConfig, x) -> Tensor:
    x = T.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != m_config.input_dim:
        raise DimensionError(f"expected input of shape (n, {m_config.input_dim}), got {x.shape}")
    if m_config.input_shift != 0.0 or m_config.input_scale != 1.0:
        x = T.scale(T.sub(x, m_config.input_shift), 1.0 / m_config.input_scale)
    return x


def encode(m: "ModelState | ReferenceSnapshot", x) -> Tensor:
    """Pre-normalisation embedding f(x)."""
    return _mlp(m.encoder, _as_input(m.config, x))


def project(m: "ModelState | ReferenceSnapshot", x) -> Tensor:
    """Unnormalised projector output g(f(x))."""
    return _mlp(m.projector, encode(m, x))


def project_normalized(m: "ModelState | ReferenceSnapshot", x) -> Tensor:
    return T.l2_normalize(project(m, x))


@dataclass(frozen=True)
class ReferenceSnapshot:
    """Frozen copy of a ModelState. Its forward passes never record gradients."""

    config: ModelConfig
    encoder: Tuple[Linear, ...] = field(repr=False)
    projector: Tuple[Linear, ...] = field(repr=False)

    def parameters(self) -> List[Tensor]:
        return [p for layer in (*self.encoder, *self.projector) for p in (layer.weight, layer.bias)]

    def param_hash(self) -> str:
        return parameter_hash(self.parameters())

    def thaw(self) -> ModelState:
        """Trainable deep copy."""
        return ModelState(self.config, _copy_layers(self.encoder, True), _copy_layers(self.projector, True))


def _copy_layers(layers, trainable: bool) -> list:
    out = []
    for layer in layers:
        w = layer.weight.data.copy()
        b = layer.bias.data.copy()
        if not trainable:
            w.flags.writeable = False
            b.flags.writeable = False
        out.append(Linear(Tensor(w, requires_grad=trainable), Tensor(b, requires_grad=trainable)))
    return out


def snapshot(m: ModelState) -> ReferenceSnapshot:
    return ReferenceSnapshot(
        m.config,
        tuple(_copy_layers(m.encoder, False)),
        tuple(_copy_layers(m.projector, False)),
    )


# ------------------------------------------------------------------ checkpoint
#
# Binary layout, all integers little-endian:
#   8 bytes  magic "COCLCKPT"
#   u32      format version
#   u32      number of encoder layers
#   u32      number of projector layers
#   then for every layer (encoder first), weight then bias:
#     u32 ndim, ndim x u32 dims, prod(dims) x f64 values
# A JSON sidecar (<path>.json) stores the ModelConfig.


def save_checkpoint(m: "ModelState | ReferenceSnapshot", path: str) -> None:
    parts = [CHECKPOINT_MAGIC, struct.pack("<III", CHECKPOINT_VERSION, len(m.encoder), len(m.projector))]
    for p in m.parameters():
        arr = np.ascontiguousarray(p.data, dtype="<f8")
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    meta = {"format": "cocl-checkpoint", "version": CHECKPOINT_VERSION, "config": asdict(m.config)}
    _atomic_write(path, b"".join(parts))
    _atomic_write(path + ".json", json.dumps(meta, indent=2, sort_keys=True).encode())


def load_checkpoint(path: str) -> ModelState:
    with open(path, "rb") as f:
        blob = f.read()
    with open(path + ".json", "r", encoding="utf-8") as f:
        meta = json.load(f)
    config = ModelConfig(**meta["config"])

    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"checkpoint truncated: need byte {pos + n - 1}, file has {len(blob)}",
                              offset=len(blob), path=path)
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    if take(8) != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", offset=0, path=path)
    version, n_enc, n_proj = struct.unpack("<III", take(12))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=8, path=path)
    arrays = []
    for _ in range(2 * (n_enc + n_proj)):
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        arrays.append(np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64))
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes in checkpoint", offset=pos, path=path)

    def layers(chunk):
        return [Linear(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))
                for w, b in zip(chunk[0::2], chunk[1::2])]

    m = ModelState(config, layers(arrays[: 2 * n_enc]), layers(arrays[2 * n_enc:]))
    expected = init(config, 0)
    for got, want in zip(m.parameters(), expected.parameters()):
        if got.shape != want.shape:
            raise FormatError(f"layer shape {got.shape} does not match config ({want.shape})", path=path)
    return m


def _atomic_write(path: str, payload: bytes) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


def clone(m: ModelState) -> ModelState:
    return copy.deepcopy(m)
