import numpy as np
import pytest

from getnext.optim import (AdamState, adam_step, checkpoint_bytes, init_bias, init_embedding,
                           init_weight, load_checkpoint, make_rng, params_checksum, save_checkpoint)
from getnext.tensor import Tensor


def scalar(value, grad):
    p = Tensor([[value]], requires_grad=True, name="p")
    p.grad = np.array([[grad]])
    return {"p": p}


def test_zero_gradient_no_decay_is_fixed_point():
    params = {"w": Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)}
    before = params["w"].data.copy()
    adam_step(params, AdamState(lr=0.1))
    np.testing.assert_array_equal(params["w"].data, before)


def test_first_step_moves_about_lr():
    # m_hat = g and v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps)
    params = scalar(3.0, 1.0)
    adam_step(params, AdamState(lr=0.1))
    assert params["p"].data[0, 0] == pytest.approx(3.0 - 0.1 / (1.0 + 1e-8), abs=1e-12)


def test_weight_decay_adds_to_gradient():
    a, b = scalar(2.0, 0.0), scalar(2.0, 0.5 * 2.0)
    adam_step(a, AdamState(lr=0.01, weight_decay=0.5))
    adam_step(b, AdamState(lr=0.01))
    assert a["p"].data[0, 0] == b["p"].data[0, 0]


def test_identical_states_give_identical_results():
    results = []
    for _ in range(2):
        params = scalar(1.0, 0.3)
        state = AdamState(lr=0.05, weight_decay=1e-3)
        for _ in range(3):
            adam_step(params, state)
        results.append(params["p"].data.copy())
    np.testing.assert_array_equal(*results)


def test_shape_mismatch_rejected():
    params = {"w": Tensor(np.zeros((2, 2)), requires_grad=True)}
    with pytest.raises(ValueError):
        adam_step(params, AdamState(), grads={"w": np.zeros((3, 2))})


def test_initialisers():
    rng = make_rng(0)
    w = init_weight(rng, 16, 4, "w")
    assert w.shape == (16, 4) and np.abs(w.data).max() <= 0.25
    assert np.all(init_bias(5, "b").data == 0)
    e = init_embedding(make_rng(1), 2000, 5, "e")
    assert abs(e.data.std() - 0.1) < 0.005


def test_make_rng_is_reproducible():
    assert np.array_equal(make_rng(42).random(5), make_rng(42).random(5))


def test_checkpoint_roundtrip(tmp_path):
    params = {"b": np.array([[1.5, -2.0]]), "a": np.arange(6.0).reshape(2, 3)}
    save_checkpoint(tmp_path / "c.bin", params)
    back = load_checkpoint(tmp_path / "c.bin")
    assert list(back) == ["a", "b"]
    for k in params:
        np.testing.assert_array_equal(back[k], params[k])


def test_checkpoint_layout():
    blob = checkpoint_bytes({"w": np.array([[1.0]])})
    assert blob[:8] == b"GNXTCKPT"
    assert blob[8:16] == (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
    assert blob[16:18] == (1).to_bytes(2, "little") and blob[18:19] == b"w"
    assert blob[19:27] == (1).to_bytes(4, "little") * 2
    assert np.frombuffer(blob[27:], "<f8")[0] == 1.0


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.bin")


def test_checksum_tracks_content():
    a = {"w": np.zeros((2, 2))}
    b = {"w": np.zeros((2, 2))}
    assert params_checksum(a) == params_checksum(b)
    b["w"][0, 0] = 1e-300
    assert params_checksum(a) != params_checksum(b)
