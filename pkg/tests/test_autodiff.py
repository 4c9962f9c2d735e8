import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from picot import autodiff as ad
from oracles import central_difference


def grad_check(build, shapes, seed, tol=1e-4, positive=False):
    """Compare backward() against central differences for every input of ``build``."""
    rng = np.random.default_rng(seed)
    arrays = [rng.uniform(0.5, 2.0, s) if positive else rng.normal(size=s) for s in shapes]
    leaves = [ad.Tensor(a, requires_grad=True) for a in arrays]
    build(*leaves).backward()
    for leaf, arr in zip(leaves, arrays):
        def f():
            return float(build(*[ad.Tensor(a) for a in arrays]).data)
        numeric = np.array(central_difference(f, arr)).reshape(arr.shape)
        analytic = leaf.grad
        scale = np.maximum(np.abs(numeric), np.abs(analytic)).max()
        err = np.abs(numeric - analytic).max() / max(scale, 1e-8)
        assert err < tol, (err, numeric, analytic)


def _weighted(t, seed=99):
    w = np.random.default_rng(seed).normal(size=t.shape)
    return ad.sum(ad.mul(t, ad.Tensor(w)))


PRIMITIVES = {
    "add": (lambda a, b: _weighted(a + b), [(3, 4), (4,)], False),
    "sub": (lambda a, b: _weighted(a - b), [(3, 4), (3, 1)], False),
    "mul": (lambda a, b: _weighted(a * b), [(2, 3), (2, 3)], False),
    "div": (lambda a, b: _weighted(a / b), [(2, 3), (2, 3)], True),
    "pow": (lambda a: _weighted(ad.pow_const(a, 1.5)), [(5,)], True),
    "exp": (lambda a: _weighted(ad.exp(a)), [(5,)], False),
    "log": (lambda a: _weighted(ad.log(a)), [(5,)], True),
    "sqrt": (lambda a: _weighted(ad.sqrt(a)), [(5,)], True),
    "sigmoid": (lambda a: _weighted(ad.sigmoid(a)), [(6,)], False),
    "gelu": (lambda a: _weighted(ad.gelu(a)), [(2, 5)], False),
    "sum_axis": (lambda a: _weighted(ad.sum(a, axis=0)), [(3, 4)], False),
    "mean": (lambda a: ad.mean(ad.mul(a, a)), [(3, 4)], False),
    "logsumexp": (lambda a: ad.logsumexp(a), [(7,)], False),
    "matmul": (lambda a, b: _weighted(a @ b), [(3, 4), (4, 2)], False),
    "matmul_batched": (lambda a, b: _weighted(a @ b), [(2, 3, 4), (4, 5)], False),
    "matmul_bmm": (lambda a, b: _weighted(a @ b), [(2, 3, 4), (2, 4, 3)], False),
    "transpose": (lambda a: _weighted(ad.transpose(a, (1, 0, 2))), [(2, 3, 2)], False),
    "reshape": (lambda a: _weighted(ad.reshape(a, (6, 2))), [(3, 4)], False),
    "index": (lambda a: _weighted(ad.index(a, (np.array([0, 2, 0]), np.array([1, 1, 1])))), [(3, 3)], False),
    "concat": (lambda a, b: _weighted(ad.concat_rows([a, b])), [(2, 3), (1, 3)], False),
    "softmax": (lambda a: _weighted(ad.softmax(a)), [(3, 5)], False),
    "layer_norm": (lambda x, g, b: _weighted(ad.layer_norm(x, g, b)), [(4, 6), (6,), (6,)], False),
    "l2_distance": (lambda a, b: ad.l2_distance(a, b), [(5,), (5,)], False),
    "pairwise_l2": (lambda h: _weighted(ad.pairwise_l2(h)), [(4, 3)], False),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", range(3))
def test_primitive_gradients(name, seed):
    build, shapes, positive = PRIMITIVES[name]
    grad_check(build, shapes, seed, positive=positive)


def test_embedding_lookup_gradient_accumulates_repeats():
    table = ad.Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    out = ad.embedding_lookup(table, np.array([[1, 1], [3, 0]]))
    ad.sum(out).backward()
    np.testing.assert_array_equal(table.grad[:, 0], [1.0, 2.0, 0.0, 1.0])


def test_bce_gradient_and_oracle():
    from oracles import bce_direct
    rng = np.random.default_rng(0)
    z = rng.normal(size=5) * 3
    y = (rng.random(5) > 0.5).astype(float)
    assert abs(float(ad.bce_with_logits(ad.Tensor(z), y).data) - bce_direct(z, y)) < 1e-9
    grad_check(lambda t: ad.bce_with_logits(t, y), [(5,)], 1)


def test_sum_of_weights_has_unit_gradient():
    w = ad.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    ad.sum(w).backward()
    np.testing.assert_array_equal(w.grad, np.ones(3))


def test_mean_of_squares_gradient_is_half_w():
    w = ad.Tensor(np.array([1.0, -2.0, 3.0, 0.5]), requires_grad=True)
    ad.mean(ad.mul(w, w)).backward()
    np.testing.assert_allclose(w.grad, w.data / 2, rtol=0, atol=1e-15)


def test_shared_subexpression_accumulates():
    x = ad.Tensor(np.array(3.0), requires_grad=True)
    y = x * x
    (y + y).backward()
    assert float(x.grad) == 12.0


def test_backward_requires_scalar():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ad.NotScalar):
        (x * 2.0).backward()


def test_shape_mismatch():
    with pytest.raises(ad.ShapeMismatch):
        ad.add(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((4,))))
    with pytest.raises(ad.ShapeMismatch):
        ad.l2_distance(ad.Tensor(np.ones(2)), ad.Tensor(np.ones(3)))


@pytest.mark.parametrize("op", [
    lambda: ad.log(ad.Tensor(np.array([0.0]))),
    lambda: ad.exp(ad.Tensor(np.array([1000.0]))),
    lambda: ad.sqrt(ad.Tensor(np.array([-1.0]))),
    lambda: ad.Tensor(np.array([1.0])) / ad.Tensor(np.array([0.0])),
])
def test_non_finite_raises(op):
    with np.errstate(all="ignore"), pytest.raises(ad.NonFinite):
        op()


def test_no_grad_records_nothing():
    x = ad.Tensor(np.ones(2), requires_grad=True)
    with ad.no_grad():
        y = x * 3.0
    assert not y.requires_grad


def test_l2_distance_gradient_finite_at_coincidence():
    a = ad.Tensor(np.ones(4), requires_grad=True)
    b = ad.Tensor(np.ones(4), requires_grad=True)
    ad.l2_distance(a, b).backward()
    assert np.all(np.isfinite(a.grad)) and np.all(a.grad == 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 10_000))
def test_logsumexp_matches_direct(n, _, seed):
    x = np.random.default_rng(seed).normal(size=n) * 5
    assert abs(float(ad.logsumexp(ad.Tensor(x)).data) - np.log(np.exp(x).sum())) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_forward_and_gradient_bit_identical(seed):
    def run():
        rng = np.random.default_rng(seed)
        h = ad.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        g, b = ad.Tensor(np.ones(3), requires_grad=True), ad.Tensor(np.zeros(3), requires_grad=True)
        loss = ad.logsumexp(ad.reshape(ad.pairwise_l2(ad.layer_norm(h, g, b)), (25,)))
        loss.backward()
        return loss.data.tobytes(), h.grad.tobytes(), g.grad.tobytes()
    assert run() == run()


# -- optimizer ------------------------------------------------------------------


def test_adamw_zero_grad_no_decay_is_identity():
    p = {"w": np.array([1.0, -2.0])}
    ad.adamw_step(p, {"w": np.zeros(2)}, ad.AdamWState(), lr=0.1)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adamw_first_step_hand_computed():
    p = {"p": np.array(1.0)}
    ad.adamw_step(p, {"p": np.array(1.0)}, ad.AdamWState(), lr=0.1, betas=(0.9, 0.999))
    # m_hat = v_hat = 1 after bias correction, so the step is lr * 1 / (1 + eps)
    assert abs(float(p["p"]) - 0.9) < 1e-6


def test_adamw_decoupled_decay_with_zero_grads():
    p = {"w": np.array([2.0, -4.0])}
    ad.adamw_step(p, {}, ad.AdamWState(), lr=0.1, weight_decay=0.5)
    np.testing.assert_allclose(p["w"], [2.0 - 0.1 * 0.5 * 2.0, -4.0 + 0.1 * 0.5 * 4.0], rtol=0, atol=1e-15)


def test_adamw_shape_mismatch():
    with pytest.raises(ad.ShapeMismatch):
        ad.adamw_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, ad.AdamWState(), lr=0.1)


def test_adamw_minimizes_quadratic():
    p = {"x": np.array([3.0, -1.0])}
    state = ad.AdamWState()
    for _ in range(2000):
        ad.adamw_step(p, {"x": 2 * p["x"]}, state, lr=0.01)
    assert np.abs(p["x"]).max() < 1e-2


# -- checkpoints ----------------------------------------------------------------


def test_checkpoint_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(3)
    tensors = {"b": rng.normal(size=(2, 3)), "a": np.array(1.5), "c": rng.normal(size=(4,))}
    path = tmp_path / "x.pict"
    ad.save_tensors(path, tensors)
    back = ad.load_tensors(path)
    assert sorted(back) == sorted(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].tobytes() == tensors[k].tobytes()
    assert path.read_bytes()[:4] == b"PICT"


def test_checkpoint_is_order_independent(tmp_path):
    a = {"x": np.ones(2), "y": np.zeros(3)}
    ad.save_tensors(tmp_path / "1.pict", a)
    ad.save_tensors(tmp_path / "2.pict", dict(reversed(list(a.items()))))
    assert (tmp_path / "1.pict").read_bytes() == (tmp_path / "2.pict").read_bytes()


@pytest.mark.parametrize("payload", [b"NOPE\x01\x00\x00\x00", b"PICT\x09\x00\x00\x00", b"PICT\x01\x00\x00\x00\x05\x00"])
def test_checkpoint_rejects_bad_files(tmp_path, payload):
    path = tmp_path / "bad.pict"
    path.write_bytes(payload)
    with pytest.raises(ad.CheckpointError):
        ad.load_tensors(path)
