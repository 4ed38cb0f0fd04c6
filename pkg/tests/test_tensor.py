import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from compvqa import tensor as T
from compvqa.errors import ShapeError, UsageError
from compvqa.tensor import ParamStore, Tensor


def leaf(values):
    return Tensor(np.asarray(values, dtype=float), requires_grad=True)


def grad_of(fn, x):
    x = leaf(x)
    T.backward(fn(x))
    return x.grad


# -- activations ---------------------------------------------------------------


def test_relu_values_and_gradient():
    assert T.relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    assert T.relu(Tensor([0.0, 0.0])).data.tolist() == [0.0, 0.0]
    assert grad_of(lambda x: T.sum(T.relu(x)), [-1.0, 2.0]).tolist() == [0.0, 1.0]


def test_relu_gradient_at_zero_is_zero():
    assert grad_of(lambda x: T.sum(T.relu(x)), [0.0]).tolist() == [0.0]


def test_sigmoid_basics():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    with np.errstate(over="raise", invalid="raise"):
        low = T.sigmoid(Tensor([-100.0, -1000.0, 1000.0])).data
    assert low[0] == pytest.approx(0.0, abs=1e-40) and low[1] >= 0.0 and low[2] == 1.0
    assert grad_of(lambda x: T.sum(T.sigmoid(x)), [0.0])[0] == pytest.approx(0.25)


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)
    with np.errstate(over="raise", invalid="raise"):
        np.testing.assert_allclose(T.softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])
    # e^0 / (e^0 + 3) with the second logit ln 3
    np.testing.assert_allclose(T.softmax(Tensor([0.0, np.log(3.0)])).data, [0.25, 0.75], atol=1e-12)


def test_softmax_invalid_axis():
    with pytest.raises(UsageError):
        T.softmax(Tensor(np.zeros((2, 3))), axis=2)


def test_masked_softmax_ignores_masked_keys_and_zeroes_empty_rows():
    x = Tensor(np.array([[1.0, 2.0, 50.0], [0.0, 0.0, 0.0]]))
    mask = np.array([[True, True, False], [False, False, False]])
    out = T.softmax(x, axis=-1, mask=mask).data
    np.testing.assert_allclose(out[0], [1 / (1 + np.e), np.e / (1 + np.e), 0.0])
    assert out[1].tolist() == [0.0, 0.0, 0.0]


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-1e4, 1e4, allow_nan=False)))
def test_softmax_slices_sum_to_one(x):
    out = T.softmax(Tensor(x), axis=-1).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


def test_log_softmax_matches_log_of_softmax():
    x = np.random.default_rng(0).normal(size=(3, 5))
    np.testing.assert_allclose(T.log_softmax(Tensor(x)).data, np.log(T.softmax(Tensor(x)).data))


# -- primitives ----------------------------------------------------------------


def test_matmul_hand_computed():
    a = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    b = Tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    # rows: [1+3, 2+3], [4+6, 5+6]
    assert T.matmul(a, b).data.tolist() == [[4.0, 5.0], [10.0, 11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))
    assert issubclass(ShapeError, UsageError)


def test_add_shape_mismatch_is_usage_error():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))


def test_hadamard_with_ones_is_identity():
    x = np.random.default_rng(1).normal(size=(3, 4))
    assert np.array_equal(T.mul(Tensor(x), Tensor(np.ones((3, 4)))).data, x)


def test_broadcast_row():
    p = Tensor([1.0, 2.0, 3.0])
    out = T.broadcast_row(p, 4).data
    assert out.shape == (4, 3) and all(row.tolist() == [1.0, 2.0, 3.0] for row in out)


def test_broadcast_row_gradient_sums_rows():
    assert grad_of(lambda p: T.sum(T.broadcast_row(p, 4)), [1.0, 2.0]).tolist() == [4.0, 4.0]


def test_transpose_and_sum_axis():
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(T.transpose(Tensor(x)).data, x.T)
    assert T.sum(Tensor(x), axis=0).data.tolist() == [3.0, 5.0, 7.0]
    with pytest.raises(UsageError):
        T.sum(Tensor(x), axis=3)


# -- dropout -------------------------------------------------------------------


def test_dropout_eval_and_p_zero_are_identity():
    x = Tensor(np.random.default_rng(2).normal(size=(5, 5)))
    rng = np.random.default_rng(0)
    assert T.dropout(x, 0.5, training=False, rng=rng) is x or np.array_equal(
        T.dropout(x, 0.5, training=False, rng=rng).data, x.data)
    assert np.array_equal(T.dropout(x, 0.0, training=True, rng=rng).data, x.data)


def test_dropout_zero_fraction_and_scaling():
    x = Tensor(np.ones(100_000))
    out = T.dropout(x, 0.5, training=True, rng=np.random.default_rng(123)).data
    frac = float(np.mean(out == 0.0))
    assert 0.49 <= frac <= 0.51
    assert set(np.unique(out)) <= {0.0, 2.0}


def test_dropout_preserves_expectation():
    x = Tensor(np.full(100_000, 3.0))
    out = T.dropout(x, 0.2, training=True, rng=np.random.default_rng(7)).data
    assert abs(out.mean() - 3.0) / 3.0 < 0.01


@pytest.mark.parametrize("p", [1.0, 1.5, -0.1])
def test_dropout_rejects_bad_probability(p):
    with pytest.raises(UsageError):
        T.dropout(Tensor(np.ones(3)), p, training=True, rng=np.random.default_rng(0))


# -- weight norm ---------------------------------------------------------------


def test_weight_norm_examples():
    w = T.weight_norm(Tensor([[3.0, 4.0], [1.0, 0.0]]), Tensor([5.0, 2.0])).data
    np.testing.assert_allclose(w, [[3.0, 4.0], [2.0, 0.0]])


def test_weight_norm_zero_row_is_an_error():
    with pytest.raises(UsageError):
        T.weight_norm(Tensor([[0.0, 0.0], [1.0, 0.0]]), Tensor([1.0, 1.0]))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(0.1, 5.0)),
       arrays(np.float64, (3,), elements=st.floats(-3.0, 3.0)))
def test_weight_norm_row_norm_equals_abs_gain(v, g):
    w = T.weight_norm(Tensor(v), Tensor(g)).data
    np.testing.assert_allclose(np.linalg.norm(w, axis=1), np.abs(g), atol=1e-6)


def test_weight_normalised_linear_map_gradcheck():
    rng = np.random.default_rng(3)
    store = ParamStore()
    store.add("v", rng.normal(size=(4, 3)))
    store.add("g", rng.uniform(0.5, 2.0, size=4))
    x = Tensor(rng.normal(size=(5, 3)))

    def f():
        w = T.weight_norm(store["v"], store["g"])
        return T.sum(T.square(T.tanh(T.matmul(x, T.transpose(w)))))

    assert T.finite_diff_check(f, store) <= 1e-4


# -- backward ------------------------------------------------------------------


def test_backward_sum_gives_ones():
    assert grad_of(T.sum, np.arange(4.0)).tolist() == [1.0] * 4


def test_backward_rejects_non_scalar():
    with pytest.raises(UsageError):
        T.backward(T.mul(leaf([1.0, 2.0]), 2.0))


def test_unused_parameter_gets_zero_gradient():
    store = ParamStore()
    store.add("w", np.ones(3))
    store.add("unused", np.ones(2))
    grads = T.backward(T.sum(store["w"]), store)
    assert grads["unused"].tolist() == [0.0, 0.0]


def test_frozen_parameter_receives_no_gradient():
    store = ParamStore()
    store.add("a", np.ones(2))
    store.add("b", np.ones(2))
    store.freeze(["b"])
    grads = T.backward(T.sum(store["a"] * store["b"]), store)
    assert "b" not in grads and store["b"].grad is None


def test_gradient_accumulates_across_shared_uses():
    # d/dx (x*x + x) = 2x + 1
    assert grad_of(lambda x: T.sum(x * x + x), [2.0, -1.0]).tolist() == [5.0, -1.0]


# -- finite differences --------------------------------------------------------


def test_finite_diff_quadratic_and_constant():
    store = ParamStore()
    store.add("w", np.random.default_rng(4).normal(size=6))
    assert T.finite_diff_check(lambda: T.sum(T.square(store["w"])), store) < 1e-8
    assert T.finite_diff_check(lambda: T.sum(Tensor(np.ones(3))) * 1.0 + T.sum(store["w"]) * 0.0,
                               store) == 0.0


RELU_INPUTS: list = []


def _tracked_relu(a):
    RELU_INPUTS.append(np.abs(a.data).min())
    return T.relu(a)


UNARY = [T.tanh, T.sigmoid, T.softplus, T.exp, lambda a: T.log(T.square(a) + 1.0),
         lambda a: T.sqrt(T.square(a) + 1.0), lambda a: T.softmax(a, axis=-1),
         lambda a: T.log_softmax(a, axis=-1), _tracked_relu, lambda a: a * a, lambda a: -a]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, len(UNARY) - 1), min_size=1, max_size=4), st.integers(0, 2**31 - 1))
def test_random_compositions_match_finite_differences(ops, seed):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    store.add("x", rng.uniform(-1.5, 1.5, size=(2, 3)))
    store.add("w", rng.normal(size=(3, 3)))

    def f():
        y = T.matmul(store["x"], store["w"])
        for i in ops:
            y = UNARY[i](y)
        return T.mean(y * y) + T.sum(T.div(y, 3.0))

    RELU_INPUTS.clear()
    with np.errstate(all="ignore"):
        value = f().item()
    # only smooth, finite, moderately scaled instances: relu inputs clear of the
    # kink by far more than the step, no overflow (e.g. exp(exp(y)))
    assume(np.isfinite(value) and abs(value) < 1e6)
    assume(not RELU_INPUTS or min(RELU_INPUTS) > 1e-3)
    # central differences carry roundoff of about eps*|f|/h, so gradients far below
    # that (saturated tanh, tiny coordinates next to large ones) are compared
    # absolutely: the bound becomes |a - n| <= 1e-9 * max(1, |f|)
    assert T.finite_diff_check(f, store, floor=1e-5 * max(1.0, abs(value))) <= 1e-4


def test_finite_diff_floor_handles_saturated_coordinates():
    store = ParamStore()
    store.add("x", np.array([0.3, 12.0]))
    f = lambda: T.sum(T.tanh(T.square(store["x"])))  # noqa: E731
    assert T.finite_diff_check(f, store, floor=1e-6) <= 1e-4


# -- parameter store -----------------------------------------------------------


def test_param_store_names_unique_and_state_round_trip():
    store = ParamStore()
    store.add("a", np.arange(3.0))
    with pytest.raises(UsageError):
        store.add("a", np.zeros(1))
    other = ParamStore()
    other.add("a", np.zeros(3))
    other.load_state_dict(store.state_dict())
    assert other["a"].data.tolist() == [0.0, 1.0, 2.0]
    with pytest.raises(ShapeError):
        other.load_state_dict({"a": np.zeros(4)})
