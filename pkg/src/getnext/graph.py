"""Spectral GCN over the flow map and the transition attention map."""

from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np

from . import tensor as T
from .optim import init_bias, init_weight
from .tensor import Tensor


def init_gcn(rng, n_features: int, hidden: Sequence[int], out_dim: int) -> dict[str, Tensor]:
    """``gcn_W1..gcn_W{L+1}``: hidden layers then the output projection."""
    widths = [n_features, *hidden, out_dim]
    params = {}
    for layer, (fan_in, fan_out) in enumerate(zip(widths, widths[1:]), start=1):
        params[f"gcn_W{layer}"] = init_weight(rng, fan_in, fan_out, f"gcn_W{layer}")
        params[f"gcn_b{layer}"] = init_bias(fan_out, f"gcn_b{layer}")
    return params


def _check_stochastic(lap: np.ndarray) -> None:
    if not np.allclose(lap.sum(axis=1), 1.0, atol=1e-9):
        warnings.warn("propagation matrix is not row-stochastic", RuntimeWarning, stacklevel=3)


def _propagate(lap: Tensor, h: Tensor, w: Tensor) -> Tensor:
    # pick the cheaper association of L H W
    if h.cols <= w.cols:
        return T.matmul(T.matmul(lap, h), w)
    return T.matmul(lap, T.matmul(h, w))


def gcn_forward(lap, x, params: dict[str, Tensor], slope: float = 0.2, dropout: float = 0.0,
                rng=None, train: bool = False) -> Tensor:
    """POI embeddings ``e_P`` (N x out_dim) from propagation matrix and node features.

    Hidden layers apply ``leaky_relu(L H W + b)``; dropout precedes the final
    affine propagation, which has no activation.
    """
    lap = lap if isinstance(lap, Tensor) else Tensor(lap)
    h = x if isinstance(x, Tensor) else Tensor(x)
    if lap.rows != lap.cols or lap.rows != h.rows:
        raise T.ShapeError(f"gcn_forward: propagation {lap.shape} vs features {h.shape}")
    _check_stochastic(lap.data)
    n_layers = sum(1 for k in params if k.startswith("gcn_W"))
    for layer in range(1, n_layers):
        h = T.leaky_relu(T.add(_propagate(lap, h, params[f"gcn_W{layer}"]), params[f"gcn_b{layer}"]), slope)
    h = T.dropout(h, dropout, rng, train)
    return T.add(_propagate(lap, h, params[f"gcn_W{n_layers}"]), params[f"gcn_b{n_layers}"])


def init_transition_attention(rng, n_features: int, dim: int) -> dict[str, Tensor]:
    return {
        "tam_W1": init_weight(rng, n_features, dim, "tam_W1"),
        "tam_W2": init_weight(rng, n_features, dim, "tam_W2"),
        "tam_a1": init_weight(rng, dim, 1, "tam_a1"),
        "tam_a2": init_weight(rng, dim, 1, "tam_a2"),
    }


def source_target_scores(x, params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """``(X W1 a1, X W2 a2)``, each N x 1."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    s1 = T.matmul(T.matmul(x, params["tam_W1"]), params["tam_a1"])
    s2 = T.matmul(T.matmul(x, params["tam_W2"]), params["tam_a2"])
    return s1, s2


def transition_attention(lap, x, params: dict[str, Tensor]) -> Tensor:
    """Full N x N map ``Phi[i, j] = (s1[i] + s2[j]) * (L[i, j] + 1)``."""
    lap_arr = lap.data if isinstance(lap, Tensor) else np.asarray(lap, dtype=np.float64)
    s1, s2 = source_target_scores(x, params)
    if lap_arr.shape != (s1.rows, s1.rows):
        raise T.ShapeError(f"transition_attention: propagation {lap_arr.shape} vs {s1.rows} nodes")
    return T.mul(T.add(s1, T.transpose(s2)), Tensor(lap_arr + 1.0))


def transition_attention_rows(lap, x, params: dict[str, Tensor], rows) -> Tensor:
    """Rows ``rows`` of the transition attention map without forming all N x N."""
    lap_arr = lap.data if isinstance(lap, Tensor) else np.asarray(lap, dtype=np.float64)
    idx = np.asarray(rows, dtype=np.intp).reshape(-1)
    s1, s2 = source_target_scores(x, params)
    return T.mul(T.add(T.take_rows(s1, idx), T.transpose(s2)), Tensor(lap_arr[idx] + 1.0))


def row_lookup(phi, poi_index: int) -> np.ndarray:
    arr = phi.data if isinstance(phi, Tensor) else np.asarray(phi)
    if not 0 <= poi_index < arr.shape[0]:
        raise IndexError(f"POI index {poi_index} outside [0, {arr.shape[0]})")
    return arr[poi_index].copy()
