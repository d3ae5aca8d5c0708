"""The tensor engine, checked against central finite differences.

Run: python demos/02_gradient_check.py
"""
import numpy as np

from getnext import tensor as T
from getnext.tensor import Tensor

rng = np.random.default_rng(0)

# A tiny attention block: softmax(X Wq (X Wk)^T) X Wv, then layer norm and a
# cross-entropy readout.  Everything the model uses is a composition of these.
x = Tensor(rng.normal(size=(4, 6)))
params = {name: Tensor(rng.normal(size=(6, 6)) * 0.5, requires_grad=True, name=name)
          for name in ("Wq", "Wk", "Wv")}
mask = np.tril(np.ones((4, 4), dtype=bool))   # causal


def loss():
    q, k, v = (T.matmul(x, params[n]) for n in ("Wq", "Wk", "Wv"))
    attn = T.softmax_rows(T.matmul(q, T.transpose(k)), mask)
    h = T.layer_norm_rows(T.matmul(attn, v))
    return T.cross_entropy_rows(h, [0, 3, 1, 5])


# reverse mode: record on a tape, then walk it backwards
with T.Tape() as tape:
    value = loss()
T.backward(value)
print(f"loss {value.item():.6f}, {len(tape)} recorded ops")

# central differences, one entry at a time
eps, worst = 1e-6, 0.0
with T.no_tape():
    for name, p in params.items():
        for idx in np.ndindex(p.shape):
            old = p.data[idx]
            p.data[idx] = old + eps
            up = loss().item()
            p.data[idx] = old - eps
            down = loss().item()
            p.data[idx] = old
            numeric = (up - down) / (2 * eps)
            err = abs(numeric - p.grad[idx]) / max(abs(numeric), abs(p.grad[idx]), 1e-5)
            worst = max(worst, err)
print(f"worst relative error over {sum(p.data.size for p in params.values())} entries: {worst:.2e}")
