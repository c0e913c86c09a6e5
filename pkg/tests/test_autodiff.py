import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from papn import autodiff as ad
from papn.autodiff import Tensor


def leaf(rng, *shape, scale=1.0):
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True)


def check(f, params, tol=1e-4, skip=None):
    for (analytic, numeric), p in zip(ad.gradcheck(f, params), params):
        err = ad.relative_error(analytic, numeric)
        if skip is not None:
            err = np.where(skip(p.data), 0.0, err)
        assert err.max() < tol, f"max relative error {err.max():.2e}"


# -- matmul -------------------------------------------------------------------
def test_matmul_identity():
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(ad.matmul(np.eye(2), x).data, x)


def test_matmul_hand_values():
    out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert out.data.tolist() == [[3.0], [7.0]]


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ad.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient():
    rng = np.random.default_rng(0)
    a, b = leaf(rng, 3, 3), leaf(rng, 3, 3)
    check(lambda: ad.tsum(ad.matmul(a, b)), [a, b])


def test_batched_matmul_gradient_broadcast():
    rng = np.random.default_rng(1)
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 2)
    check(lambda: ad.tsum(ad.tanh(ad.matmul(a, b))), [a, b])


# -- softmax ------------------------------------------------------------------
def test_softmax_uniform():
    assert np.allclose(ad.softmax(Tensor([0.0, 0.0, 0.0])).data, 1 / 3, atol=0, rtol=1e-15)


def test_softmax_masked_entry_is_exact_zero():
    out = ad.softmax(Tensor([5.0, -np.inf])).data
    assert out[0] == 1.0 and out[1] == 0.0


def test_softmax_matches_direct_evaluation():
    x = np.array([1.0, 2.0, 3.0])
    direct = np.exp(x) / np.exp(x).sum()
    assert np.allclose(ad.softmax(Tensor(x)).data, direct, rtol=1e-14)


def test_softmax_all_masked_raises():
    with pytest.raises(ad.DegenerateSliceError):
        ad.softmax(Tensor([[-np.inf, -np.inf], [0.0, 1.0]]), axis=-1)


def test_softmax_masked_position_gets_zero_gradient():
    x = Tensor([0.3, -0.2, 1.0], requires_grad=True)
    p = ad.softmax(ad.masked_fill(x, [1, 0, 1], -np.inf))
    ad.tsum(p * Tensor([1.0, 2.0, 3.0])).backward()
    assert x.grad[1] == 0.0


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (4, 5), elements=st.floats(-30, 30)))
def test_softmax_rows_sum_to_one(x):
    p = ad.softmax(Tensor(x), axis=-1).data
    assert np.all(np.abs(p.sum(axis=-1) - 1.0) < 1e-9)


def test_softmax_and_log_softmax_gradients():
    rng = np.random.default_rng(2)
    x = leaf(rng, 3, 4)
    w = rng.standard_normal((3, 4))
    check(lambda: ad.tsum(ad.softmax(x, axis=-1) * w), [x])
    check(lambda: ad.tsum(ad.log_softmax(x, axis=0) * w), [x])


# -- leaky relu -----------------------------------------------------------------
def test_leaky_relu_values():
    assert ad.leaky_relu(Tensor(2.0), 0.01).item() == 2.0
    assert ad.leaky_relu(Tensor(-1.0), 0.01).item() == pytest.approx(-0.01)


def test_leaky_relu_subgradient_at_zero_is_slope():
    x = Tensor([0.0], requires_grad=True)
    ad.tsum(ad.leaky_relu(x, 0.01)).backward()
    assert x.grad[0] == 0.01


def test_leaky_relu_gradient():
    rng = np.random.default_rng(3)
    x = leaf(rng, 20)
    check(lambda: ad.tsum(ad.leaky_relu(x, 0.01) * ad.leaky_relu(x, 0.01)), [x],
          skip=lambda d: np.abs(d) < 1e-3)


# -- layer norm -----------------------------------------------------------------
def test_layer_norm_constant_slice_is_zero():
    out = ad.layer_norm(Tensor(np.full((2, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert np.all(out.data == 0.0)


def test_layer_norm_two_values():
    out = ad.layer_norm(Tensor([1.0, 3.0]), Tensor([1.0, 1.0]), Tensor([0.0, 0.0]))
    # sigma = sqrt(1 + 1e-5)
    assert np.allclose(out.data, [-1.0, 1.0], atol=1e-4)
    assert np.allclose(out.data, np.array([-1.0, 1.0]) / np.sqrt(1 + 1e-5), rtol=1e-15)


def test_layer_norm_gradient():
    rng = np.random.default_rng(4)
    x, g, b = leaf(rng, 3, 5), leaf(rng, 5), leaf(rng, 5)
    w = rng.standard_normal((3, 5))
    check(lambda: ad.tsum(ad.layer_norm(x, g, b) * w), [x, g, b])


# -- elementwise suite ----------------------------------------------------------
def test_concat_values():
    assert ad.concat([Tensor([1.0, 2.0]), Tensor([3.0])], axis=0).data.tolist() == [1, 2, 3]


def test_sum_axis_values():
    assert ad.tsum(Tensor(np.ones((2, 3))), axis=1).data.tolist() == [3.0, 3.0]


def test_broadcast_mismatch_raises():
    with pytest.raises(ad.DimensionError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_max_min_route_gradient_to_first_index():
    x = Tensor([[1.0, 3.0, 3.0], [2.0, 2.0, 0.0]], requires_grad=True)
    ad.tsum(ad.tmax(x, axis=1)).backward()
    assert x.grad.tolist() == [[0, 1, 0], [1, 0, 0]]
    x.zero_grad()
    ad.tsum(ad.tmin(x, axis=0)).backward()
    assert x.grad.tolist() == [[1, 0, 0], [0, 1, 1]]


def test_masked_fill_writes_value_where_mask_zero():
    out = ad.masked_fill(Tensor([1.0, 2.0, 3.0]), [1, 0, 1], -7.0)
    assert out.data.tolist() == [1.0, -7.0, 3.0]


@pytest.mark.parametrize("name,fn", [
    ("add", lambda a, b: a + b),
    ("sub", lambda a, b: a - b),
    ("mul", lambda a, b: a * b),
    ("div", lambda a, b: a / (ad.exp(b) + 1.0)),
    ("tanh", lambda a, b: ad.tanh(a) * b),
    ("sigmoid", lambda a, b: ad.sigmoid(a) * b),
    ("exp", lambda a, b: ad.exp(a) * b),
    ("log", lambda a, b: ad.log(ad.exp(a) + 1.0) * b),
    ("sqrt", lambda a, b: ad.sqrt(a * a + 1.0) * b),
    ("concat", lambda a, b: ad.concat([a, b], axis=1) * 1.5),
    ("stack", lambda a, b: ad.stack([a, b], axis=0) * 2.0),
    ("sum", lambda a, b: ad.tsum(a * b, axis=0)),
    ("mean", lambda a, b: ad.mean(a * b, axis=1)),
    ("max", lambda a, b: ad.tmax(a * b, axis=1)),
    ("min", lambda a, b: ad.tmin(a + b, axis=0)),
    ("masked_fill", lambda a, b: ad.masked_fill(a, [[1, 0, 1, 1]] * 3, 0.5) * b),
    ("where", lambda a, b: ad.where(np.eye(3, 4) > 0, a, b)),
    ("getitem", lambda a, b: a[[0, 0, 2], [1, 1, 3]] * b[0, :3]),
    ("transpose", lambda a, b: ad.matmul(ad.transpose(a), b)),
    ("reshape", lambda a, b: a.reshape(4, 3) * b.reshape(4, 3)),
    ("broadcast", lambda a, b: a * b[:1]),
    ("relu", lambda a, b: ad.relu(a) * b),
])
def test_primitive_gradients(name, fn):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    w = None

    def f():
        nonlocal w
        out = fn(a, b)
        if w is None:
            w = np.random.default_rng(5).standard_normal(out.shape)
        return ad.tsum(out * w)

    skip = (lambda d: np.abs(d) < 1e-3) if name == "relu" else None
    check(f, [a, b], skip=skip)


# -- graph semantics ------------------------------------------------------------
def test_root_gradient_is_one():
    x = Tensor([1.0, 2.0], requires_grad=True)
    root = ad.tsum(x * x)
    root.backward()
    assert root.grad == 1.0


def test_backward_twice_doubles_gradients():
    rng = np.random.default_rng(6)
    a, b = leaf(rng, 2, 2), leaf(rng, 2, 2)
    out = ad.tsum(ad.tanh(ad.matmul(a, b)))
    out.backward()
    first = a.grad.copy(), b.grad.copy()
    out.backward()
    assert np.array_equal(a.grad, 2 * first[0])
    assert np.array_equal(b.grad, 2 * first[1])


def test_shared_subexpression_visited_once():
    x = Tensor(3.0, requires_grad=True)
    y = x * x
    z = y + y
    z.backward()
    assert x.grad == 12.0


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with ad.no_grad():
        y = x * 2.0
    assert y._backward is None and y._parents == ()


def test_deterministic_given_seed():
    def run():
        rng = np.random.default_rng(11)
        a, b = leaf(rng, 4, 4), leaf(rng, 4, 4)
        return ad.tsum(ad.softmax(ad.matmul(a, b), axis=-1) * b).item()

    assert run() == run()
