import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from acrm import numerics as nx
from acrm.encoders import init_lstm, lstm_step
from acrm.numerics import Tensor

finite = st.floats(-30, 30, allow_nan=False)


def leaf(x):
    return Tensor(np.array(x, dtype=np.float64), requires_grad=True)


# forward primitives ---------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(nx.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)


def test_tanh_zero():
    assert np.array_equal(nx.tanh(Tensor(np.zeros((2, 3)))).data, np.zeros((2, 3)))


def test_concat_shape():
    out = nx.concat([Tensor(np.ones((4, 2))), Tensor(np.ones((4, 3)))])
    assert out.shape == (4, 5)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(nx.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    with pytest.raises(nx.ShapeError, match=r"\(2, 3\).*\(4,\)"):
        nx.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))


def test_log_of_non_positive_raises():
    with pytest.raises(nx.NumericalError):
        nx.log(Tensor([1.0, 0.0]))


def test_softmax_is_stable_for_large_inputs():
    out = nx.softmax(Tensor([1000.0, 1000.0])).data
    np.testing.assert_allclose(out, [0.5, 0.5])


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_softmax_rows_are_distributions(z):
    p = nx.softmax(Tensor(z)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)


@given(
    arrays(np.float64, 6, elements=finite),
    arrays(bool, 6).filter(lambda m: m.any()),
)
def test_masked_softmax_zeroes_masked_positions(z, mask):
    p = nx.softmax(Tensor(z), mask=mask).data
    assert np.all(p[~mask] == 0.0)
    np.testing.assert_allclose(p[mask].sum(), 1.0, atol=1e-12)
    np.testing.assert_allclose(p[mask], nx.softmax(Tensor(z[mask])).data, atol=1e-12)


def test_masked_mean_ignores_masked_entries():
    x = Tensor([[1.0, 2.0, 100.0]])
    assert nx.mean(x, axis=-1, mask=[[1, 1, 0]]).data[0] == 1.5


def test_var_is_population_variance():
    assert nx.var(Tensor([1.0, 3.0])).item() == 1.0


# backward -------------------------------------------------------------------

def test_square_gradient():
    x = leaf(3.0)
    nx.backward(x * x)
    assert x.grad == 6.0


def test_product_gradients():
    x, y = leaf(2.0), leaf(5.0)
    nx.backward(x * y)
    assert (x.grad, y.grad) == (5.0, 2.0)


@given(arrays(np.float64, 5, elements=finite))
def test_sum_of_softmax_has_zero_gradient(z):
    x = leaf(z)
    nx.backward(nx.sum(nx.softmax(x)))
    np.testing.assert_allclose(x.grad, 0.0, atol=1e-12)


def test_backward_rejects_non_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(nx.ShapeError):
        nx.backward(x * 2.0)


def test_ignored_leaf_gets_zero_gradient():
    x, unused = leaf([1.0, 2.0]), leaf(np.ones((2, 2)))
    nx.backward(nx.sum(x * x), leaves=[x, unused])
    assert np.array_equal(unused.grad, np.zeros((2, 2)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_gradient_accumulates_over_shared_subexpressions():
    x = leaf(2.0)
    y = x * x
    nx.backward(y + y * 3.0)
    assert x.grad == 16.0


def test_no_grad_records_nothing():
    x = leaf(1.0)
    with nx.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.parents == ()


# grad_check -----------------------------------------------------------------

def test_grad_check_square():
    assert nx.scalar_grad_check(lambda x: x * x, 3.0) < 1e-8


def test_grad_check_reports_nan_as_failure():
    x = leaf(1.0)
    assert nx.grad_check(lambda: x * Tensor(np.nan), [x]) == float("inf")


def test_grad_check_detects_a_wrong_adjoint():
    # forward doubles, adjoint claims triple
    x = leaf([0.3, -0.2])
    wrong = lambda: nx.sum(nx.tensor._make(x.data * 2.0, (x,), lambda g: (g * 3.0,)))  # noqa: E731
    assert nx.grad_check(wrong, [x]) > 0.2


ELEMENTWISE = {
    "tanh": nx.tanh,
    "sigmoid": nx.sigmoid,
    "exp": nx.exp,
    "log": lambda x: nx.log(x * x + 1.0),
    "sqrt": lambda x: nx.sqrt(x * x + 0.5),
    "softmax": lambda x: nx.softmax(x, axis=-1),
    "masked_softmax": lambda x: nx.softmax(x, mask=[[1, 0, 1, 1]] * 3),
    "log_softmax": lambda x: nx.log_softmax(x, mask=[[1, 1, 0, 1]] * 3),
    "mean": lambda x: nx.mean(x, axis=0),
    "masked_mean": lambda x: nx.mean(x, axis=1, mask=[[1, 1, 0, 0]] * 3),
    "var": lambda x: nx.var(x, axis=-1),
    "div": lambda x: x / (x * x + 2.0),
    "narrow": lambda x: nx.narrow(x, 1, 3),
    "take": lambda x: nx.take(x, [2, 0, 2]),
    "reshape": lambda x: nx.reshape(x, (4, 3)),
}


@pytest.mark.parametrize("name", sorted(ELEMENTWISE))
def test_primitive_adjoints(name):
    rng = np.random.default_rng(sorted(ELEMENTWISE).index(name))
    weights = rng.normal(size=ELEMENTWISE[name](Tensor(np.zeros((3, 4)))).shape)
    x = leaf(rng.normal(size=(3, 4)))
    assert nx.grad_check(lambda: nx.sum(ELEMENTWISE[name](x) * weights), [x]) < 1e-7


def test_matmul_and_broadcast_adjoints():
    rng = np.random.default_rng(1)
    a, b, c, v = leaf(rng.normal(size=(2, 3, 4))), leaf(rng.normal(size=(4, 5))), leaf(rng.normal(size=(5,))), leaf(rng.normal(size=5))
    bb = leaf(rng.normal(size=(2, 5, 3)))
    w = rng.normal(size=(2, 3, 3))

    def f():
        y = nx.matmul(a, b) + c
        return nx.sum(nx.matmul(y, bb) * w) + nx.sum(nx.matmul(y, v))

    assert nx.grad_check(f, [a, b, c, v, bb]) < 1e-7


# lstm ------------------------------------------------------------------------

def test_lstm_scan_matches_composite_steps_and_gradients():
    rng = np.random.default_rng(3)
    p = init_lstm(rng, 3, 4)
    x = leaf(rng.normal(size=(2, 5, 3)))
    mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]])
    w = rng.normal(size=(2, 5, 4))
    for reverse in (False, True):
        fused = nx.lstm_scan(x, p.w_in, p.w_rec, p.bias, mask=mask, reverse=reverse)

        def composite():
            total = Tensor(0.0)
            for b in range(2):
                L = int(mask[b].sum())
                h, c = Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4)))
                steps = range(L - 1, -1, -1) if reverse else range(L)
                for t in steps:
                    h, c = lstm_step(nx.reshape(nx.narrow(nx.narrow(x, b, b + 1, 0), t, t + 1, 1), (1, 3)), h, c, p)
                    total = total + nx.sum(h * w[b, t])
            return total

        assert abs(nx.sum(fused * w).item() - composite().item()) < 1e-12
        params = [x, p.w_in, p.w_rec, p.bias]
        assert nx.grad_check(lambda: nx.sum(nx.lstm_scan(x, p.w_in, p.w_rec, p.bias, mask=mask, reverse=reverse) * w), params) < 1e-7
        assert nx.grad_check(composite, params) < 1e-7


# adam -----------------------------------------------------------------------

def test_adam_first_step_moves_by_lr():
    p = {"w": leaf(1.0)}
    state = nx.AdamState(lr=0.001)
    nx.adam_step(p, {"w": np.array(0.5)}, state)
    assert state.t == 1
    assert math.isclose(p["w"].item(), 0.999, abs_tol=1e-9)


def test_adam_zero_gradient_leaves_params():
    p = {"w": leaf([1.0, -2.0])}
    state = nx.AdamState()
    nx.adam_step(p, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])
    assert state.t == 1


def test_adam_monotone_under_fixed_positive_gradient():
    p = {"w": leaf(0.0)}
    state = nx.AdamState()
    values = []
    for _ in range(2):
        nx.adam_step(p, {"w": np.array(0.3)}, state)
        values.append(p["w"].item())
    assert 0.0 > values[0] > values[1]


def test_adam_rejects_nan_gradient():
    with pytest.raises(nx.NumericalError):
        nx.adam_step({"w": leaf(0.0)}, {"w": np.array(np.nan)}, nx.AdamState())


@settings(max_examples=25)
@given(st.floats(-5, 5), st.floats(0.01, 5))
def test_adam_is_deterministic(x0, g):
    results = []
    for _ in range(2):
        p = {"w": leaf(x0)}
        s = nx.AdamState()
        for _ in range(3):
            nx.adam_step(p, {"w": np.array(g)}, s)
        results.append(p["w"].item())
    assert results[0] == results[1]


def test_sqrt_at_zero_has_zero_slope():
    x = leaf([0.0, 4.0])
    nx.backward(nx.sum(nx.sqrt(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 0.25])
