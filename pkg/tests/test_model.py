import numpy as np
import pytest

from getnext import dataset as ds
from getnext import model as M
from getnext import tensor as T
from getnext.config import ABLATIONS
from getnext.optim import make_rng
from getnext.tensor import Tensor

from conftest import small_config
from gradcheck import max_relative_error


def encoder(d=8, layers=2, heads=2, ff=16, seed=0):
    return M.init_encoder(make_rng(seed), d, layers, heads, ff)


def test_encode_shape():
    params = encoder()
    for k in (1, 3, 7):
        x = Tensor(make_rng(k).normal(size=(k, 8)))
        assert M.encode(x, params, heads=2).shape == (k, 8)


def test_encode_causal():
    params = encoder(seed=1)
    rng = make_rng(2)
    x = rng.normal(size=(5, 8))
    base = M.encode(Tensor(x), params, heads=2).data
    for j in range(5):
        y = x.copy()
        y[j] += rng.normal(size=8)
        out = M.encode(Tensor(y), params, heads=2).data
        assert np.abs(out[:j] - base[:j]).max(initial=0.0) <= 1e-12
        assert not np.allclose(out[j], base[j])


def test_unmasked_mode_leaks_future():
    params = encoder(seed=1)
    x = make_rng(3).normal(size=(4, 8))
    y = x.copy()
    y[3] += 1.0
    a = M.encode(Tensor(x), params, heads=2, causal=False).data
    b = M.encode(Tensor(y), params, heads=2, causal=False).data
    assert not np.allclose(a[0], b[0])


def test_attention_rows_and_block_mask():
    params = encoder(layers=1)
    segment = np.array([0, 0, 0, 1, 1])
    position = np.array([0, 1, 2, 0, 1])
    maps = []
    M.encode(Tensor(make_rng(4).normal(size=(5, 8))), params, heads=2, segment=segment,
             position=position, attention_out=maps)
    mask = M.attention_mask(segment, position)
    for a in maps:
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(a[~mask] == 0.0)


def test_batched_equals_separate():
    params = encoder(seed=5)
    rng = make_rng(6)
    a, b = rng.normal(size=(3, 8)), rng.normal(size=(2, 8))
    joint = M.encode(Tensor(np.vstack([a, b])), params, heads=2,
                     segment=np.array([0, 0, 0, 1, 1]), position=np.array([0, 1, 2, 0, 1])).data
    np.testing.assert_allclose(joint[:3], M.encode(Tensor(a), params, heads=2).data, atol=1e-12)
    np.testing.assert_allclose(joint[3:], M.encode(Tensor(b), params, heads=2).data, atol=1e-12)


def test_encode_too_long():
    with pytest.raises(ValueError):
        M.encode(Tensor(np.zeros((4, 8))), encoder(), heads=2, pos_table=M.positional_encoding(3, 8))


def test_scaling_flag_changes_output():
    params = encoder(seed=7)
    x = Tensor(make_rng(8).normal(size=(4, 8)) * 3)
    assert not np.allclose(M.encode(x, params, heads=2).data,
                           M.encode(x, params, heads=2, scaled=True).data)


def test_running_mean():
    x = Tensor(np.arange(8.0).reshape(4, 2))
    out = M.running_mean(x, np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1])).data
    np.testing.assert_allclose(out, [[0, 1], [1, 2], [4, 5], [5, 6]])


def test_heads_zero_weights():
    params = M.init_heads(make_rng(0), 6, 5, 3)
    for p in params.values():
        p.data[:] = 0
    outs = M.heads(Tensor(np.ones((2, 6))), params)
    assert [o.shape for o in outs] == [(2, 5), (2, 1), (2, 3)]
    assert all(np.all(o.data == 0) for o in outs)


def test_heads_single_row_and_gradient():
    rng = make_rng(1)
    params = M.init_heads(rng, 4, 5, 3)
    for p in params.values():
        p.data = rng.normal(size=p.shape)
    enc = Tensor(rng.normal(size=(1, 4)), requires_grad=True)
    assert [o.rows for o in M.heads(enc, params)] == [1, 1, 1]
    enc3 = Tensor(rng.normal(size=(3, 4)))
    targets = M.Targets(np.array([0, 4, 2]), np.array([0.1, 0.5, 0.9]), np.array([2, 0, 1]))
    worst, _ = max_relative_error(params, lambda: M.loss(*M.heads(enc3, params), targets))
    assert worst < 1e-4


def test_recommend_examples():
    assert M.recommend(np.array([[1.0, 0, 0]]), np.array([[0, 2.0, 0]] * 3), 0, 3) == [1, 0, 2]
    y = np.array([[0.3, 0.9, 0.1, 0.5]])
    assert M.recommend(y, np.zeros((4, 4)), 2, 4) == [1, 3, 0, 2]
    phi = np.array([[0.0, 0, 0, 0], [0.2, 0.1, 0.4, 0.3], [0, 0, 0, 0], [0, 0, 0, 0]])
    assert M.recommend(np.zeros((1, 4)), phi, 1, 2) == [2, 3]


def test_recommend_ties_clamp_and_shift():
    assert M.recommend(np.zeros((1, 3)), None, 0, 10) == [0, 1, 2]
    y = np.array([[0.2, 0.7, 0.1]])
    assert M.recommend(y + 123.0, None, 0, 3) == M.recommend(y, None, 0, 3)


def test_loss_perfect_prediction():
    targets = M.Targets(np.array([1, 0]), np.array([0.25, 0.75]), np.array([0, 1]))
    poi = Tensor(np.array([[-50.0, 50.0], [50.0, -50.0]]))
    cat = Tensor(np.array([[50.0, -50.0], [-50.0, 50.0]]))
    assert M.loss(poi, Tensor([[0.25], [0.75]]), cat, targets).item() < 1e-12


def test_loss_uniform_poi_is_log_n():
    targets = M.Targets(np.array([1, 3]), np.zeros(2), np.zeros(2, dtype=int))
    out = M.loss(Tensor(np.zeros((2, 7))), Tensor(np.zeros((2, 1))), Tensor(np.zeros((2, 1))), targets)
    assert out.item() == pytest.approx(np.log(7))


def test_time_term_quadratic():
    targets = M.Targets(np.array([0]), np.array([0.5]), np.array([0]))
    zero = Tensor(np.zeros((1, 1)))

    def time_term(err):
        return M.loss(zero, Tensor([[0.5 + err]]), zero, targets).item()
    assert time_term(0.2) == pytest.approx(10 * 0.04)
    assert time_term(0.4) == pytest.approx(4 * time_term(0.2))


def test_loss_rejects_empty():
    empty = Tensor(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        M.loss(empty, Tensor(np.zeros((0, 1))), empty, M.Targets(*(np.zeros(0),) * 3))


def test_make_batch_layout(cycle_data):
    d, _ = cycle_data
    b = M.make_batch(d, d.train[:2])
    n0, n1 = len(d.train[0]), len(d.train[1])
    assert b.n_rows == n0 + n1
    np.testing.assert_array_equal(b.segment, [0] * n0 + [1] * n1)
    assert len(b.supervised) == n0 + n1 - 2
    np.testing.assert_array_equal(b.last_rows(), [n0 - 2, n0 + n1 - 2])
    assert np.all(b.next_poi[:n0 - 1] == b.poi[1:n0])
    assert np.all((0 <= b.slot_time) & (b.slot_time < 1))


def test_make_batch_skips_unseen(cycle_data):
    d, _ = cycle_data
    t = d.train[0]
    ghost = ds.Trajectory("g", "ghost", [ds.CheckIn("ghost", q.poi_id, q.category_id, q.lat, q.lon,
                                                    q.timestamp) for q in t.checkins])
    odd = ds.Trajectory("o", t.user_id, [t.checkins[0], ds.CheckIn(t.user_id, "nowhere", "c", 0, 0, 1)])
    b = M.make_batch(d, [ghost, odd, t])
    assert b.trajectory_ids == [t.trajectory_id]


ABLATION_PARAMS = {
    "no_graph": ({"poi_emb"}, ("gcn_", "tam_")),
    "no_gcn_use_table": ({"poi_emb", "tam_W1"}, ("gcn_",)),
    "no_transformer_use_mean": (set(), ("enc",)),
    "no_time_cat": (set(), ()),
    "no_fusion_concat_only": (set(), ("fuse_",)),
    "single_decoder": (set(), ()),
}


@pytest.mark.parametrize("flag", ABLATIONS)
def test_ablation_parameters_and_gradients(flag, uniform_data):
    d, flow = uniform_data
    cfg = small_config(**{flag: True}, poi_dim=2, time_dim=2, gcn_hidden=(3,), tam_dim=2, ff_dim=4,
                       heads=1, dropout=0.0)
    model = M.GETNext(cfg, d.n_pois, d.n_users, d.n_categories, flow.n_features, make_rng(0))
    present, absent = ABLATION_PARAMS[flag]
    assert present <= set(model.params)
    if absent:
        assert not any(k.startswith(absent) for k in model.params)
    batch = M.make_batch(d, d.train[:2])
    out = model.forward(batch, flow)
    assert out.y_poi.shape == (batch.n_rows, d.n_pois)
    # a handful of parameters is enough to exercise every code path
    subset = {k: v for k, v in model.params.items() if v.data.size <= 40}
    worst, _ = max_relative_error(subset, lambda: model.batch_loss(batch, flow))
    assert worst < 1e-4


def test_model_rejects_wrong_shapes(uniform_data):
    d, flow = uniform_data
    cfg = small_config()
    model = M.GETNext(cfg, d.n_pois, d.n_users, d.n_categories, flow.n_features, make_rng(0))
    with pytest.raises(T.ShapeError):
        M.GETNext(cfg, d.n_pois + 1, d.n_users, d.n_categories, flow.n_features, params=model.arrays())
    arrays = model.arrays()
    del arrays["user_emb"]
    with pytest.raises(KeyError):
        M.GETNext(cfg, d.n_pois, d.n_users, d.n_categories, flow.n_features, params=arrays)


def test_scores_equal_logits_plus_phi(uniform_data):
    d, flow = uniform_data
    model = M.GETNext(small_config(), d.n_pois, d.n_users, d.n_categories, flow.n_features, make_rng(1))
    batch = M.make_batch(d, d.validation[:3] or d.train[:3])
    out = model.forward(batch, flow)
    phi = model.transition_map(flow)
    rows = batch.supervised
    np.testing.assert_allclose(model.scores(batch, flow),
                               out.y_poi.data[rows] + phi[batch.poi[rows]], atol=1e-12)


def test_recommend_next_rejects_unknown(uniform_data):
    d, flow = uniform_data
    model = M.GETNext(small_config(), d.n_pois, d.n_users, d.n_categories, flow.n_features, make_rng(1))
    q = d.train[0].checkins[0]
    assert len(M.recommend_next(model, d, flow, q.user_id, [q], top_k=3)) == 3
    with pytest.raises(KeyError):
        M.recommend_next(model, d, flow, "stranger", [q])
