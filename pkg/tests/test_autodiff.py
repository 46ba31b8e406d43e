import numpy as np
import pytest

from relic import autodiff as ad


def finite_diff(f, xs, eps=1e-5):
    """Central finite differences of a scalar f w.r.t. each array in xs."""
    grads = []
    for x in xs:
        g = np.zeros_like(x)
        flat = x.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f()
            flat[i] = orig - eps
            fm = f()
            flat[i] = orig
            gf[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def check_grads(build, arrays, tol=1e-6):
    """build(tensors) -> scalar Tensor; compares backward against finite differences."""
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    loss = build(tensors)
    ad.backward(loss)
    got = [t.grad for t in tensors]

    def f():
        return build([ad.Tensor(a) for a in arrays]).item()

    want = finite_diff(f, arrays)
    for g, w in zip(got, want):
        assert g is not None
        scale = np.maximum(np.abs(w), 1.0)
        assert np.max(np.abs(g - w) / scale) < tol


rng = np.random.default_rng(0)


def test_matmul_known_product():
    a = ad.Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    b = ad.Tensor(np.eye(3)[:, :2])
    out = ad.matmul(a, b)
    np.testing.assert_allclose(out.data, [[1.0, 2.0], [4.0, 5.0]])


def test_softmax_of_zeros_is_uniform():
    out = ad.softmax(ad.Tensor([0.0, 0.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5])


def test_layer_norm_of_constant_vector_is_bias():
    x = ad.Tensor(np.full((3, 4), 7.0))
    gain = ad.Tensor(np.ones(4))
    bias = ad.Tensor(np.zeros(4))
    out = ad.layer_norm(x, gain, bias)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_shape_mismatch_message_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 3\)"):
        ad.add(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((4, 3))))


def test_grad_of_sum_is_ones():
    x = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    ad.backward(ad.sum_(x))
    np.testing.assert_allclose(x.grad, np.ones((3, 4)))


def test_masked_entries_get_zero_grad():
    x = ad.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    mask = np.array([[True, False, False], [False, True, False]])
    out = ad.sum_(ad.softmax(ad.masked_fill(x, mask, -1e30)))
    ad.backward(out)
    assert np.all(x.grad[mask] == 0.0)


def test_non_scalar_loss_rejected():
    x = ad.Tensor(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(ad.add(x, x))


def test_unreached_params_get_zero_grad():
    store = ad.ParamStore()
    used = store.param("used", np.ones((2, 2)))
    store.param("unused", np.ones(3))
    ad.backward(ad.sum_(ad.mul(used, used)), params=store)
    np.testing.assert_allclose(store["unused"].grad, 0.0)


@pytest.mark.parametrize("op", ["add", "mul", "matmul", "softmax", "log_softmax",
                                "tanh", "gelu", "layer_norm", "concat", "mean",
                                "huber", "masked_fill", "expand"])
def test_gradients_match_finite_differences(op):
    if op in ("add", "mul"):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4,))
        check_grads(lambda ts: ad.sum_(ad.mul(getattr(ad, op)(ts[0], ts[1]), ts[0])), [a, b])
    elif op == "matmul":
        a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
        check_grads(lambda ts: ad.sum_(ad.tanh(ad.matmul(ts[0], ts[1]))), [a, b])
    elif op in ("softmax", "log_softmax"):
        x = rng.normal(size=(3, 5))
        w = rng.normal(size=(3, 5))
        check_grads(lambda ts: ad.sum_(ad.mul(getattr(ad, op)(ts[0], -1), ad.Tensor(w))), [x])
    elif op in ("tanh", "gelu", "huber"):
        x = rng.normal(size=(2, 6))
        check_grads(lambda ts: ad.sum_(getattr(ad, op)(ts[0])), [x])
    elif op == "layer_norm":
        x, g, b = rng.normal(size=(3, 4)), rng.normal(size=(4,)), rng.normal(size=(4,))
        w = rng.normal(size=(3, 4))
        check_grads(
            lambda ts: ad.sum_(ad.mul(ad.layer_norm(ts[0], ts[1], ts[2]), ad.Tensor(w))),
            [x, g, b])
    elif op == "concat":
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 3))
        check_grads(lambda ts: ad.sum_(ad.tanh(ad.concat(ts, axis=0))), [a, b])
    elif op == "mean":
        x = rng.normal(size=(3, 4))
        check_grads(lambda ts: ad.mean(ad.mul(ts[0], ts[0])), [x])
    elif op == "masked_fill":
        x = rng.normal(size=(3, 4))
        mask = rng.random((3, 4)) < 0.3
        check_grads(lambda ts: ad.sum_(ad.softmax(ad.masked_fill(ts[0], mask, -1e30))), [x])
    elif op == "expand":
        x = rng.normal(size=(1, 4))
        check_grads(lambda ts: ad.sum_(ad.tanh(ad.expand(ts[0], (3, 4)))), [x])


def test_embedding_lookup_grad_accumulates_repeats():
    table = ad.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    idx = np.array([[0, 2], [2, 2]])
    out = ad.sum_(ad.embedding_lookup(table, idx))
    ad.backward(out)
    np.testing.assert_allclose(table.grad[2], 3.0)
    np.testing.assert_allclose(table.grad[0], 1.0)
    np.testing.assert_allclose(table.grad[1], 0.0)


def test_take_index_grad_scatter():
    x = ad.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    idx = np.array([0, 1, 2, 1])
    ad.backward(ad.sum_(ad.take_index(x, idx)))
    want = np.zeros((4, 3))
    want[np.arange(4), idx] = 1.0
    np.testing.assert_allclose(x.grad, want)


def test_adam_zero_gradient_leaves_params_unchanged():
    store = ad.ParamStore()
    p = store.param("w", np.array([1.0, -2.0]))
    p.grad = np.zeros(2)
    store.adam_step(lr=0.1)
    np.testing.assert_allclose(p.data, [1.0, -2.0])


def test_adam_single_step_matches_hand_computation():
    # f(x) = x^2 at x=1: grad 2; m_hat = 2, v_hat = 4, update = lr * 2/2 = lr.
    store = ad.ParamStore()
    p = store.param("x", np.array([1.0]))
    p.grad = np.array([2.0])
    store.adam_step(lr=0.1)
    np.testing.assert_allclose(p.data, [1.0 - 0.1 * (2.0 / (2.0 + 1e-8))], rtol=1e-12)


def test_adam_runs_are_bit_identical():
    def run():
        store = ad.ParamStore()
        p = store.param("w", np.linspace(-1, 1, 6).reshape(2, 3))
        for step in range(5):
            store.zero_grad()
            loss = ad.sum_(ad.mul(p, p))
            ad.backward(loss, params=store)
            store.adam_step(lr=0.05)
        return p.data.tobytes()

    assert run() == run()


def test_checkpoint_round_trip(tmp_path):
    arrays = {"a": rng.normal(size=(3, 2)), "b": np.arange(5, dtype=np.float32)}
    manifest = {"seed": 7, "step": 12, "config": {"d": 8}}
    path = tmp_path / "ckpt.bin"
    ad.save_checkpoint(path, arrays, manifest)
    loaded, got_manifest = ad.load_checkpoint(path)
    assert got_manifest == manifest
    for k, v in arrays.items():
        np.testing.assert_array_equal(loaded[k], v)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "ckpt.bin"
    path.write_bytes(b"XXXXrest")
    with pytest.raises(ValueError, match="RLCP"):
        ad.load_checkpoint(path)


def test_no_grad_skips_tape():
    x = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    with ad.no_grad():
        y = ad.mul(x, x)
    assert y._parents == ()
