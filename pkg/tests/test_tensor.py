import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from t2tvit import tensor as T
from t2tvit.gradcheck import gradient_error
from t2tvit.nn import Parameter
from t2tvit.tensor import Tensor


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


@pytest.fixture
def f64():
    with T.precision(np.float64):
        yield np.random.default_rng(7)


def test_matmul_identity_and_hand_values():
    out = T.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
    np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])
    np.testing.assert_array_equal((Tensor([[1, 2]]) @ Tensor([[3], [4]])).data, [[11]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 5)))


def test_matmul_gradient(f64):
    a, b = rand(f64, 4, 5), rand(f64, 5, 3)
    assert gradient_error(lambda: (a @ b * Tensor(np.arange(12.0).reshape(4, 3))).sum(), [a, b]) < 1e-4


def test_batched_matmul_broadcast_gradient(f64):
    a, b = rand(f64, 2, 3, 4, 5), rand(f64, 5, 2)
    assert gradient_error(lambda: ((a @ b) ** 2).sum(), [a, b]) < 1e-4
    assert b.grad.shape == (5, 2)


def test_softmax_uniform_and_stability():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=1e-6)
    out = T.softmax(Tensor([1000.0, 0.0])).data
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-30)


def test_softmax_gradient(f64):
    x = rand(f64, 3, 4)
    w = Tensor(f64.standard_normal((3, 4)))
    assert gradient_error(lambda: (T.softmax(x, axis=-1) * w).sum(), [x]) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_rows_stochastic(values):
    out = T.softmax(Tensor(np.array(values, dtype=np.float64))).data
    assert np.all(out >= 0) and np.all(out <= 1)
    assert abs(out.sum() - 1.0) < 1e-6


def test_layer_norm_constant_vector_is_zero():
    x = Tensor(np.full((2, 6), 3.5))
    out = T.layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)))
    np.testing.assert_array_equal(out.data, np.zeros((2, 6)))


def test_layer_norm_normalizes(f64):
    x = Tensor(f64.standard_normal((5, 32)) * 3 + 2)
    out = T.layer_norm(x, Tensor(np.ones(32)), Tensor(np.zeros(32))).data
    assert np.abs(out.mean(axis=-1)).max() < 1e-5
    assert np.abs(out.var(axis=-1) - 1).max() < 1e-3


def test_layer_norm_gradient(f64):
    x, g, b = rand(f64, 3, 8), rand(f64, 8), rand(f64, 8)
    w = Tensor(f64.standard_normal((3, 8)))
    assert gradient_error(lambda: (T.layer_norm(x, g, b) * w).sum(), [x, g, b]) < 1e-4


def test_gelu_zero_and_gradient(f64):
    assert T.gelu(Tensor(0.0)).item() == 0.0
    x = rand(f64, 10)
    assert gradient_error(lambda: T.gelu(x) * T.gelu(x), [x]) < 1e-4


@pytest.mark.parametrize(
    "op",
    [
        lambda x, y: x + y,
        lambda x, y: x - y,
        lambda x, y: x * y,
        lambda x, y: x / (y * y + 1.0),
        lambda x, y: T.exp(x) * T.tanh(y),
        lambda x, y: T.sigmoid(x) + T.log(y * y + 1.0),
        lambda x, y: T.relu(x) * y,
        lambda x, y: (x**3).mean(axis=0) * y.sum(axis=0),
        lambda x, y: T.concat([x, y], axis=1).transpose(1, 0).reshape(-1, 2),
        lambda x, y: x[1:, ::2] * y[:-1, 1::2],
        lambda x, y: T.log_softmax(x, axis=-1) * y,
    ],
)
def test_elementwise_and_structural_gradients(f64, op):
    x, y = rand(f64, 3, 4), rand(f64, 3, 4)
    assert gradient_error(lambda: op(x, y) * 1.3, [x, y]) < 1e-4


def test_add_broadcast_unbroadcasts(f64):
    x, b = rand(f64, 4, 3), rand(f64, 3)
    (x + b).sum().backward()
    np.testing.assert_array_equal(b.grad, np.full(3, 4.0))


def test_pad2d_shape_and_gradient(f64):
    assert T.pad2d(Tensor(np.zeros((224, 224, 3))), 2).shape == (228, 228, 3)
    x = rand(f64, 2, 3, 3, 2)
    assert gradient_error(lambda: (T.pad2d(x, 1) ** 2).sum(), [x]) < 1e-4


def test_unfold_gradient(f64):
    x = rand(f64, 2, 6, 5, 2)
    w = Tensor(f64.standard_normal((2, 3, 3, 18)))
    assert gradient_error(lambda: (T.unfold2d(x, 3, 2, 1) * w).sum(), [x]) < 1e-4


def test_reshape_round_trip_and_transpose_bijection():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((49, 5)))
    grid = x.reshape(7, 7, 5)
    np.testing.assert_array_equal(grid.reshape(49, 5).data, x.data)
    t = x.transpose(1, 0)
    np.testing.assert_array_equal(np.sort(t.data, axis=None), np.sort(x.data, axis=None))


def test_backward_sum_gives_ones_and_square_gives_twice():
    w = Parameter((3, 2))
    w.data = np.arange(6.0).reshape(3, 2)
    w.sum().backward()
    np.testing.assert_array_equal(w.grad, np.ones((3, 2)))
    w.grad = None
    (w * w).sum().backward()
    np.testing.assert_array_equal(w.grad, 2 * w.data)


def test_backward_accumulates_without_zeroing():
    w = Tensor(np.ones(3), requires_grad=True)
    (w * 2.0).sum().backward()
    (w * 2.0).sum().backward()
    np.testing.assert_array_equal(w.grad, np.full(3, 4.0))


def test_backward_rejects_non_scalar():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (w * 2.0).backward()


def test_shared_subgraph_visited_once():
    w = Tensor(np.array([2.0]), requires_grad=True)
    h = w * w
    (h + h * 3.0).sum().backward()
    # d/dw (4 w^2) = 8 w
    np.testing.assert_allclose(w.grad, [16.0])


def test_no_grad_builds_no_graph():
    w = Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = w * 3.0
    assert not y.requires_grad


def test_precision_switch():
    assert T.get_default_dtype() == np.float32
    assert Tensor([1, 2]).dtype == np.float32
    with T.precision(np.float64):
        assert Tensor([1, 2]).dtype == np.float64
        assert Parameter((2,)).dtype == np.float64
    assert (Tensor(np.ones(2, dtype=np.float32)) * 0.5).dtype == np.float32


def test_parameter_init_reproducible_from_seed():
    a, b = Parameter((50,)), Parameter((50,))
    a.name = b.name = "blocks.0.weight"
    a.initialize(3)
    b.initialize(3)
    np.testing.assert_array_equal(a.data, b.data)
    assert np.abs(a.data).max() <= 0.04 + 1e-7
    b.initialize(4)
    assert not np.array_equal(a.data, b.data)
