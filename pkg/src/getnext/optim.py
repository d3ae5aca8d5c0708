"""Parameter initialisation, Adam, and the binary checkpoint container."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Tensor

CHECKPOINT_MAGIC = b"GNXTCKPT"
CHECKPOINT_VERSION = 1


def make_rng(seed: int) -> np.random.Generator:
    """The single generator a run threads through init, shuffling and dropout."""
    return np.random.Generator(np.random.PCG64(seed))


def init_weight(rng: np.random.Generator, fan_in: int, fan_out: int, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True, name=name)


def init_bias(width: int, name: str) -> Tensor:
    return Tensor(np.zeros((1, width)), requires_grad=True, name=name)


def init_embedding(rng: np.random.Generator, n_items: int, dim: int, name: str) -> Tensor:
    return Tensor(rng.normal(0.0, 0.1, size=(n_items, dim)), requires_grad=True, name=name)


@dataclass
class AdamState:
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], state: AdamState,
              grads: Mapping[str, np.ndarray] | None = None) -> None:
    """One Adam update in place; weight decay enters as ``grad += wd * param``.

    ``grads`` defaults to each parameter's ``.grad``.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name in sorted(params):
        p = params[name]
        g = p.grad if grads is None else grads[name]
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step: gradient {g.shape} vs parameter {name} {p.data.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def zero_grads(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


# ---------------------------------------------------------------------------
# checkpoint container
#
#   magic "GNXTCKPT" | u32 version | u32 count
#   count x ( u16 name_len | name utf-8 | u32 rows | u32 cols | rows*cols f64 )
#   all integers and floats little-endian, blobs in ascending name order
# ---------------------------------------------------------------------------

def checkpoint_bytes(params: Mapping[str, Tensor | np.ndarray]) -> bytes:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params))]
    for name in sorted(params):
        arr = params[name]
        arr = arr.data if isinstance(arr, Tensor) else np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"checkpoint blob {name!r} must be 2-D, got {arr.shape}")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<II", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_checkpoint(path, params: Mapping[str, Tensor | np.ndarray]) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if not buf.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    version, count = struct.unpack_from("<II", buf, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off += 8
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + n].decode("utf-8")
        off += n
        rows, cols = struct.unpack_from("<II", buf, off)
        off += 8
        size = rows * cols * 8
        out[name] = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols).astype(np.float64)
        off += size
    if off != len(buf):
        raise ValueError(f"{path}: trailing bytes after {count} blobs")
    return out


def params_checksum(params: Mapping[str, Tensor | np.ndarray]) -> str:
    return hashlib.sha256(checkpoint_bytes(params)).hexdigest()
