"""Transformer encoder, prediction heads, loss, and the assembled recommender.

A mini-batch of trajectories is stacked into one ``rows x d`` matrix; the
attention mask keeps trajectories apart (block diagonal) and, by default,
causal, so every row only sees earlier check-ins of its own trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import graph
from . import tensor as T
from .config import TrainConfig
from .dataset import Dataset, Trajectory
from .embeddings import EmbeddingTable, FusionLayer, Time2Vec, checkin_embeddings, time_slot_value
from .optim import init_bias, init_embedding, init_weight
from .tensor import Tensor


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    poi: np.ndarray
    user: np.ndarray
    cat: np.ndarray
    slot_time: np.ndarray      # time2vec input, slot / 48
    next_poi: np.ndarray
    next_cat: np.ndarray
    next_time: np.ndarray      # seconds since local midnight / 86400
    segment: np.ndarray
    position: np.ndarray
    supervised: np.ndarray     # row indices that have a next check-in
    trajectory_ids: list[str]

    @property
    def n_rows(self) -> int:
        return len(self.poi)

    def last_rows(self) -> np.ndarray:
        """Final supervised row of each trajectory."""
        sup = self.supervised
        seg = self.segment[sup]
        keep = np.r_[seg[1:] != seg[:-1], True] if len(sup) else np.zeros(0, bool)
        return sup[keep]


def seen_part(d: Dataset, traj: Trajectory, min_len: int = 2) -> list | None:
    """Check-ins with trainable ids, or None if fewer than ``min_len`` survive."""
    if traj.user_id not in d.user_index:
        return None
    qs = [q for q in traj.checkins if d.is_seen(q)]
    return qs if len(qs) >= min_len else None


def make_batch(d: Dataset, trajectories: Sequence[Trajectory], min_len: int = 2) -> Batch:
    """Stack trajectories into a batch, skipping unseen users/POIs/categories."""
    cols = {k: [] for k in ("poi", "user", "cat", "slot_time", "next_poi", "next_cat",
                            "next_time", "segment", "position")}
    supervised, ids = [], []
    row = 0
    for traj in trajectories:
        qs = seen_part(d, traj, min_len)
        if qs is None:
            continue
        seg = len(ids)
        ids.append(traj.trajectory_id)
        for pos, q in enumerate(qs):
            nxt = qs[pos + 1] if pos + 1 < len(qs) else q
            cols["poi"].append(d.poi_index[q.poi_id])
            cols["user"].append(d.user_index[q.user_id])
            cols["cat"].append(d.category_index[q.category_id])
            cols["slot_time"].append(time_slot_value(q))
            cols["next_poi"].append(d.poi_index[nxt.poi_id])
            cols["next_cat"].append(d.category_index[nxt.category_id])
            cols["next_time"].append(nxt.day_fraction)
            cols["segment"].append(seg)
            cols["position"].append(pos)
            if pos + 1 < len(qs):
                supervised.append(row)
            row += 1
    ints = ("poi", "user", "cat", "next_poi", "next_cat", "segment", "position")
    arrays = {k: np.asarray(v, dtype=np.intp if k in ints else np.float64) for k, v in cols.items()}
    return Batch(**arrays, supervised=np.asarray(supervised, dtype=np.intp), trajectory_ids=ids)


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------

def positional_encoding(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    div = np.exp(np.arange(0, d, 2) * (-np.log(10000.0) / d))
    pe = np.zeros((max_len, d))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div)[:, : d // 2]
    return pe


def attention_mask(segment, position, causal: bool = True) -> np.ndarray:
    """``mask[i, j]``: row ``i`` may attend to row ``j``."""
    seg = np.asarray(segment)
    same = seg[:, None] == seg[None, :]
    if not causal:
        return same
    pos = np.asarray(position)
    return same & (pos[None, :] <= pos[:, None])


def init_encoder(rng, d: int, n_layers: int, heads: int, ff_dim: int) -> dict[str, Tensor]:
    dh = d // heads
    p = {}
    for l in range(n_layers):
        pre = f"enc{l}_"
        for h in range(heads):
            for kind in "qkv":
                p[f"{pre}W{kind}{h}"] = init_weight(rng, d, dh, f"{pre}W{kind}{h}")
                p[f"{pre}b{kind}{h}"] = init_bias(dh, f"{pre}b{kind}{h}")
        p[pre + "Wo"] = init_weight(rng, d, d, pre + "Wo")
        p[pre + "bo"] = init_bias(d, pre + "bo")
        p[pre + "W1"] = init_weight(rng, d, ff_dim, pre + "W1")
        p[pre + "b1"] = init_bias(ff_dim, pre + "b1")
        p[pre + "W2"] = init_weight(rng, ff_dim, d, pre + "W2")
        p[pre + "b2"] = init_bias(d, pre + "b2")
        for ln in ("ln1", "ln2"):
            p[f"{pre}{ln}_g"] = Tensor(np.ones((1, d)), requires_grad=True, name=f"{pre}{ln}_g")
            p[f"{pre}{ln}_b"] = init_bias(d, f"{pre}{ln}_b")
    return p


def _layer_norm(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    return T.add(T.mul(T.layer_norm_rows(x), g), b)


def encode(seq: Tensor, params: Mapping[str, Tensor], *, heads: int, n_layers: int | None = None,
           segment=None, position=None, causal: bool = True, scaled: bool = False,
           pos_table: np.ndarray | None = None, dropout: float = 0.0, rng=None,
           train: bool = False, attention_out: list | None = None) -> Tensor:
    """Run the stacked encoder layers over a ``rows x d`` matrix.

    Without ``segment``/``position`` the input is a single trajectory.  If
    ``attention_out`` is a list, each head's attention matrix is appended.
    """
    k, d = seq.shape
    if segment is None:
        segment = np.zeros(k, dtype=np.intp)
    if position is None:
        position = np.arange(k)
    if pos_table is None:
        pos_table = positional_encoding(int(np.max(position, initial=0)) + 1, d)
    if pos_table.shape[1] != d:
        raise T.ShapeError(f"encode: input width {d} vs positional table {pos_table.shape}")
    if len(position) and np.max(position) >= pos_table.shape[0]:
        raise ValueError(f"trajectory longer than max_len={pos_table.shape[0]}")
    if n_layers is None:
        n_layers = sum(1 for name in params if name.endswith("_Wo"))
    mask = attention_mask(segment, position, causal)
    x = T.add(seq, Tensor(pos_table[np.asarray(position)]))
    factor = 1.0 / np.sqrt(d // heads) if scaled else None
    for l in range(n_layers):
        pre = f"enc{l}_"
        outs = []
        for h in range(heads):
            q = T.add(T.matmul(x, params[f"{pre}Wq{h}"]), params[f"{pre}bq{h}"])
            kk = T.add(T.matmul(x, params[f"{pre}Wk{h}"]), params[f"{pre}bk{h}"])
            v = T.add(T.matmul(x, params[f"{pre}Wv{h}"]), params[f"{pre}bv{h}"])
            s = T.matmul(q, T.transpose(kk))
            if factor is not None:
                s = T.scale(s, factor)
            a = T.softmax_rows(s, mask)
            if attention_out is not None:
                attention_out.append(a.data)
            outs.append(T.matmul(a, v))
        mh = T.add(T.matmul(T.concat_cols(outs) if heads > 1 else outs[0], params[pre + "Wo"]), params[pre + "bo"])
        x = _layer_norm(T.add(x, T.dropout(mh, dropout, rng, train)), params[pre + "ln1_g"], params[pre + "ln1_b"])
        ff = T.relu(T.add(T.matmul(x, params[pre + "W1"]), params[pre + "b1"]))
        ff = T.add(T.matmul(ff, params[pre + "W2"]), params[pre + "b2"])
        x = _layer_norm(T.add(x, T.dropout(ff, dropout, rng, train)), params[pre + "ln2_g"], params[pre + "ln2_b"])
    return x


def running_mean(seq: Tensor, segment, position) -> Tensor:
    """Causal per-trajectory mean pooling (the encoder-free ablation)."""
    mask = attention_mask(segment, position, causal=True).astype(np.float64)
    mask /= mask.sum(axis=1, keepdims=True)
    return T.matmul(Tensor(mask), seq)


# ---------------------------------------------------------------------------
# heads, recommendation, loss
# ---------------------------------------------------------------------------

def init_heads(rng, d: int, n_pois: int, n_categories: int) -> dict[str, Tensor]:
    return {
        "head_poi_W": init_weight(rng, d, n_pois, "head_poi_W"),
        "head_poi_b": init_bias(n_pois, "head_poi_b"),
        "head_time_W": init_weight(rng, d, 1, "head_time_W"),
        "head_time_b": init_bias(1, "head_time_b"),
        "head_cat_W": init_weight(rng, d, n_categories, "head_cat_W"),
        "head_cat_b": init_bias(n_categories, "head_cat_b"),
    }


def heads(enc: Tensor, params: Mapping[str, Tensor]) -> tuple[Tensor, Tensor, Tensor]:
    """POI logits (k x N), next-time estimate (k x 1), category logits (k x Gamma)."""
    def affine(name):
        return T.add(T.matmul(enc, params[f"head_{name}_W"]), params[f"head_{name}_b"])
    return affine("poi"), affine("time"), affine("cat")


def rank_scores(scores: np.ndarray, top_k: int | None = None) -> np.ndarray:
    """Indices by descending score, ties to the lower index."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    order = np.lexsort((np.arange(scores.size), -scores))
    return order if top_k is None else order[:min(top_k, scores.size)]


def recommend(y_poi, phi, last_poi_index: int, top_k: int) -> list[int]:
    """Top-k POIs from the last logit row plus the last POI's transition row.

    ``phi`` is the full N x N map, or a 1-D array already holding the row.
    """
    y = y_poi.data if isinstance(y_poi, Tensor) else np.asarray(y_poi)
    scores = y[-1].astype(np.float64).copy()
    if phi is not None:
        if not isinstance(phi, Tensor) and np.ndim(phi) == 1:
            scores += np.asarray(phi, dtype=np.float64)
        else:
            scores += graph.row_lookup(phi, last_poi_index)
    return [int(i) for i in rank_scores(scores, top_k)]


@dataclass
class Targets:
    poi: np.ndarray
    time: np.ndarray
    cat: np.ndarray


def loss(y_poi: Tensor, y_time: Tensor, y_cat: Tensor, targets: Targets,
         phi_rows: Tensor | None = None, time_weight: float = 10.0,
         single_decoder: bool = False) -> Tensor:
    """``CE(poi) + time_weight * MSE(time) + CE(category)`` averaged over rows.

    Inputs hold supervised rows only; ``phi_rows`` (same shape as ``y_poi``)
    is added to the POI logits before the cross-entropy.
    """
    if y_poi.rows == 0:
        raise ValueError("loss: no supervised positions")
    logits = T.add(y_poi, phi_rows) if phi_rows is not None else y_poi
    total = T.cross_entropy_rows(logits, targets.poi)
    if single_decoder:
        return total
    total = T.add(total, T.scale(T.mse(y_time, np.asarray(targets.time).reshape(-1, 1)), time_weight))
    return T.add(total, T.cross_entropy_rows(y_cat, targets.cat))


# ---------------------------------------------------------------------------
# assembled model
# ---------------------------------------------------------------------------

@dataclass
class Outputs:
    y_poi: Tensor
    y_time: Tensor
    y_cat: Tensor
    phi_rows: Tensor | None


class GETNext:
    """All trainable parameters plus the forward pass over batches.

    ``params`` maps checkpoint blob names to tensors; which names exist
    depends on the ablation flags in ``config``.
    """

    def __init__(self, config: TrainConfig, n_pois: int, n_users: int, n_categories: int,
                 n_features: int, rng: np.random.Generator | None = None,
                 params: Mapping[str, np.ndarray] | None = None):
        self.config = config
        self.n_pois, self.n_users, self.n_categories = n_pois, n_users, n_categories
        self.n_features = n_features
        c = config
        if params is None:
            params = {k: v for k, v in self._init(rng).items()}
        else:
            params = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=k)
                      for k, v in params.items()}
        self.params: dict[str, Tensor] = dict(sorted(params.items()))
        self._check_shapes()
        self.pos_table = positional_encoding(c.max_len, c.model_dim)
        self.user_emb = EmbeddingTable(self.params["user_emb"])
        self.cat_emb = EmbeddingTable(self.params["cat_emb"])
        self.t2v = Time2Vec(self.params["t2v_omega"], self.params["t2v_phi"])
        if c.no_fusion_concat_only:
            self.fuse_pu = self.fuse_ct = None
        else:
            self.fuse_pu = FusionLayer(self.params["fuse_pu_W"], self.params["fuse_pu_b"], c.leaky_slope)
            self.fuse_ct = FusionLayer(self.params["fuse_ct_W"], self.params["fuse_ct_b"], c.leaky_slope)

    def _init(self, rng) -> dict[str, Tensor]:
        c = self.config
        if rng is None:
            raise ValueError("GETNext needs a generator to initialise parameters")
        p: dict[str, Tensor] = {}
        if c.uses_gcn:
            p.update(graph.init_gcn(rng, self.n_features, c.gcn_hidden, c.poi_dim))
        else:
            p["poi_emb"] = init_embedding(rng, self.n_pois, c.poi_dim, "poi_emb")
        if c.uses_graph:
            p.update(graph.init_transition_attention(rng, self.n_features, c.tam_dim))
        p["user_emb"] = init_embedding(rng, self.n_users, c.poi_dim, "user_emb")
        p["cat_emb"] = init_embedding(rng, self.n_categories, c.time_dim, "cat_emb")
        t2v = Time2Vec.create(rng, c.time_dim)
        p["t2v_omega"], p["t2v_phi"] = t2v.omega, t2v.phi
        if not c.no_fusion_concat_only:
            for prefix, width in (("fuse_pu", 2 * c.poi_dim), ("fuse_ct", 2 * c.time_dim)):
                layer = FusionLayer.create(rng, width, prefix, c.leaky_slope)
                p[f"{prefix}_W"], p[f"{prefix}_b"] = layer.weight, layer.bias
        if not c.no_transformer_use_mean:
            p.update(init_encoder(rng, c.model_dim, c.encoder_layers, c.heads, c.ff_dim))
        p.update(init_heads(rng, c.model_dim, self.n_pois, self.n_categories))
        return p

    def _check_shapes(self) -> None:
        c, p = self.config, self.params
        expect = {"user_emb": (self.n_users, c.poi_dim), "cat_emb": (self.n_categories, c.time_dim),
                  "head_poi_W": (c.model_dim, self.n_pois), "head_cat_W": (c.model_dim, self.n_categories)}
        if c.uses_gcn:
            expect["gcn_W1"] = (self.n_features, c.gcn_hidden[0] if c.gcn_hidden else c.poi_dim)
        else:
            expect["poi_emb"] = (self.n_pois, c.poi_dim)
        if c.uses_graph:
            expect["tam_W1"] = (self.n_features, c.tam_dim)
        for name, shape in expect.items():
            if name not in p:
                raise KeyError(f"missing parameter {name!r}")
            if p[name].shape != shape:
                raise T.ShapeError(f"parameter {name} has shape {p[name].shape}, expected {shape}")

    # -- pieces ---------------------------------------------------------------

    def poi_embeddings(self, flow, rng=None, train: bool = False) -> Tensor:
        c = self.config
        if not c.uses_gcn:
            return self.params["poi_emb"]
        return graph.gcn_forward(flow.laplacian, flow.node_features, self.params, c.leaky_slope,
                                 c.dropout, rng, train)

    def transition_map(self, flow) -> np.ndarray | None:
        if not self.config.uses_graph:
            return None
        with T.no_tape():
            return graph.transition_attention(flow.laplacian, flow.node_features, self.params).data

    def embed(self, batch: Batch, flow, rng=None, train: bool = False) -> Tensor:
        c = self.config
        e_p = T.take_rows(self.poi_embeddings(flow, rng, train), batch.poi)
        e_u = self.user_emb(batch.user)
        if c.no_time_cat:
            pu = self.fuse_pu(e_p, e_u) if self.fuse_pu is not None else T.concat_cols([e_p, e_u])
            return T.concat_cols([pu, Tensor(np.zeros((batch.n_rows, 2 * c.time_dim)))])
        e_t = self.t2v(batch.slot_time)
        e_c = self.cat_emb(batch.cat)
        return checkin_embeddings(e_p, e_u, e_t, e_c, self.fuse_pu, self.fuse_ct)

    def forward(self, batch: Batch, flow, rng=None, train: bool = False) -> Outputs:
        c = self.config
        x = self.embed(batch, flow, rng, train)
        if c.no_transformer_use_mean:
            enc = running_mean(x, batch.segment, batch.position)
        else:
            enc = encode(x, self.params, heads=c.heads, n_layers=c.encoder_layers,
                         segment=batch.segment, position=batch.position, causal=c.causal_mask,
                         scaled=c.attention_scaling, pos_table=self.pos_table,
                         dropout=c.dropout, rng=rng, train=train)
        y_poi, y_time, y_cat = heads(enc, self.params)
        phi_rows = None
        if c.uses_graph:
            phi_rows = graph.transition_attention_rows(flow.laplacian, flow.node_features,
                                                       self.params, batch.poi)
        return Outputs(y_poi, y_time, y_cat, phi_rows)

    def batch_loss(self, batch: Batch, flow, rng=None, train: bool = False) -> Tensor:
        c = self.config
        out = self.forward(batch, flow, rng, train)
        sup = batch.supervised
        phi = T.take_rows(out.phi_rows, sup) if out.phi_rows is not None and c.phi_in_loss else None
        targets = Targets(batch.next_poi[sup], batch.next_time[sup], batch.next_cat[sup])
        return loss(T.take_rows(out.y_poi, sup), T.take_rows(out.y_time, sup),
                    T.take_rows(out.y_cat, sup), targets, phi, c.time_loss_weight, c.single_decoder)

    def scores(self, batch: Batch, flow, rows=None) -> np.ndarray:
        """Final recommendation scores (logits plus transition row) for ``rows``."""
        rows = batch.supervised if rows is None else np.asarray(rows, dtype=np.intp)
        with T.no_tape():
            out = self.forward(batch, flow, train=False)
        s = out.y_poi.data[rows]
        if out.phi_rows is not None:
            s = s + out.phi_rows.data[rows]
        return s

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}


def recommend_next(model: GETNext, d: Dataset, flow, user_id: str, checkins: Sequence,
                   top_k: int = 10) -> list[str]:
    """Top-k next POI ids for a user's current trajectory prefix."""
    if user_id not in d.user_index:
        raise KeyError(f"user {user_id!r} has no training history")
    for q in checkins:
        if not d.is_seen(q):
            raise KeyError(f"POI {q.poi_id!r} has no training history")
    if not checkins:
        raise ValueError("empty trajectory prefix")
    batch = make_batch(d, [Trajectory("query", user_id, list(checkins))], min_len=1)
    last = batch.n_rows - 1
    with T.no_tape():
        out = model.forward(batch, flow, train=False)
    y = out.y_poi.data[last:last + 1]
    phi = out.phi_rows.data[last] if out.phi_rows is not None else None
    ranked = recommend(y, phi, int(batch.poi[last]), top_k)
    ids = sorted(d.poi_index, key=d.poi_index.get)
    return [ids[i] for i in ranked]
