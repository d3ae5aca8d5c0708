"""User/category embedding tables, time2vec, and the two fusion layers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .optim import init_bias, init_embedding, init_weight
from .tensor import Tensor

N_SLOTS = 48


def time_slot_value(q) -> float:
    """The scalar time2vec consumes: 30-minute slot of the local day over 48."""
    return q.slot / N_SLOTS


@dataclass
class EmbeddingTable:
    weights: Tensor

    @classmethod
    def create(cls, rng, n_items: int, dim: int, name: str) -> "EmbeddingTable":
        return cls(init_embedding(rng, n_items, dim, name))

    @property
    def n_items(self) -> int:
        return self.weights.rows

    @property
    def dim(self) -> int:
        return self.weights.cols

    def __call__(self, index) -> Tensor:
        idx = np.asarray(index, dtype=np.intp).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_items):
            raise IndexError(f"embedding index out of range [0, {self.n_items})")
        return T.take_rows(self.weights, idx)


@dataclass
class Time2Vec:
    """``out[0] = w0 t + p0``, ``out[i] = sin(wi t + pi)`` for ``i >= 1``."""

    omega: Tensor   # 1 x dim
    phi: Tensor     # 1 x dim

    @classmethod
    def create(cls, rng, dim: int) -> "Time2Vec":
        return cls(Tensor(rng.uniform(-1.0, 1.0, (1, dim)), requires_grad=True, name="t2v_omega"),
                   Tensor(rng.uniform(-1.0, 1.0, (1, dim)), requires_grad=True, name="t2v_phi"))

    @property
    def dim(self) -> int:
        return self.omega.cols

    def __call__(self, t) -> Tensor:
        if not isinstance(t, Tensor):
            arr = np.asarray(t, dtype=np.float64).reshape(-1, 1)
            if arr.size and (arr.min() < 0.0 or arr.max() >= 1.0):
                raise ValueError("time2vec input must lie in [0, 1)")
            t = Tensor(arr)
        lin = T.add(T.matmul(t, self.omega), self.phi)
        if self.dim == 1:
            return lin
        return T.concat_cols([T.slice_cols(lin, 0, 1), T.sin(T.slice_cols(lin, 1, self.dim))])


@dataclass
class FusionLayer:
    """``leaky_relu([a; b] W + bias)`` with a square ``W``."""

    weight: Tensor
    bias: Tensor
    slope: float = 0.2

    @classmethod
    def create(cls, rng, width: int, prefix: str, slope: float = 0.2) -> "FusionLayer":
        return cls(init_weight(rng, width, width, f"{prefix}_W"), init_bias(width, f"{prefix}_b"), slope)

    @property
    def in_dim(self) -> int:
        return self.weight.rows

    def __call__(self, a: Tensor, b: Tensor) -> Tensor:
        if a.cols + b.cols != self.in_dim:
            raise T.ShapeError(f"fuse: {a.shape} + {b.shape} does not match layer input {self.in_dim}")
        return T.leaky_relu(T.add(T.matmul(T.concat_cols([a, b]), self.weight), self.bias), self.slope)


def fuse(a: Tensor, b: Tensor, layer: FusionLayer) -> Tensor:
    return layer(a, b)


def checkin_embeddings(e_p: Tensor, e_u: Tensor, e_t: Tensor, e_c: Tensor,
                       fuse_pu: FusionLayer | None, fuse_ct: FusionLayer | None) -> Tensor:
    """Row-wise ``[fuse(e_p, e_u); fuse(e_t, e_c)]``.

    A ``None`` layer means plain concatenation.
    """
    pu = fuse_pu(e_p, e_u) if fuse_pu is not None else T.concat_cols([e_p, e_u])
    ct = fuse_ct(e_t, e_c) if fuse_ct is not None else T.concat_cols([e_t, e_c])
    return T.concat_cols([pu, ct])
