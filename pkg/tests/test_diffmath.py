import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from abductive import diffmath as dm
from abductive.diffmath import Param, ParamStore

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def P(name, v):
    return Param(name, np.asarray(v, dtype=float))


# -- worked examples --------------------------------------------------------------


@pytest.mark.parametrize("w,b,want", [
    ([[1, 0], [0, 1]], [0, 0], [[1, 2]]),
    ([[0, 0], [0, 0]], [3, 4], [[3, 4]]),
    ([[1, 1], [1, 1]], [1, 0], [[4, 3]]),
])
def test_linear_examples(w, b, want):
    out, _ = dm.linear([[1, 2]], P("w", w), P("b", b))
    np.testing.assert_array_equal(out, want)


def test_linear_shape_error_names_both_shapes():
    with pytest.raises(dm.DimensionError, match=r"\(1, 3\).*\(2, 2\)"):
        dm.linear([[1, 2, 3]], P("w", np.eye(2)), P("b", [0, 0]))


def test_linear_rejects_non_finite_input():
    with pytest.raises(dm.NumericError, match="w"):
        dm.linear([[np.nan, 1]], P("w", np.eye(2)), P("b", [0, 0]))


@pytest.mark.parametrize("x,want", [
    ([[-1, 2]], [[0, 2]]),
    ([[0]], [[0]]),
    ([[3.5, -0.5, 0.25]], [[3.5, 0, 0.25]]),
])
def test_relu_examples(x, want):
    np.testing.assert_array_equal(dm.relu(x)[0], want)


def test_relu_subgradient_at_zero_is_zero():
    _, mask = dm.relu(np.array([[0.0, 1.0]]))
    np.testing.assert_array_equal(dm.relu_backward(np.ones((1, 2)), mask), [[0, 1]])


@pytest.mark.parametrize("a,b,want", [
    ([1, 0], [1, 0], 1.0),
    ([1, 0], [0, 1], 0.0),
    ([1, 0], [2, 0], 0.8),
    ([1, 0], [-1, 0], -1.0),
])
def test_jaccard_examples(a, b, want):
    w, _ = dm.jaccard_affinity(np.array([a, b], dtype=float))
    assert w[0, 1] == pytest.approx(want, abs=1e-7)
    assert w[1, 0] == w[0, 1]


@pytest.mark.parametrize("x,gain,shift,want", [
    ([[1, 1, 1]], [1, 1, 1], [0, 0, 0], [[0, 0, 0]]),
    ([[1, -1]], [1, 1], [0, 0], [[1, -1]]),
    ([[0, 2]], [2, 2], [1, 1], [[-1, 3]]),
])
def test_layer_norm_examples(x, gain, shift, want):
    out, _ = dm.layer_norm(np.array(x, float), P("g", gain), P("s", shift))
    np.testing.assert_allclose(out, want, atol=1e-4)


def test_dropout_eval_and_zero_rate_are_identity(rng):
    x = rng.normal(size=(3, 4))
    assert dm.dropout(x, 0.5, train=False)[0] is x
    assert dm.dropout(x, 0.0, train=True, rng=rng)[0] is x


def test_dropout_kept_entries_scaled():
    x = np.ones((1, 4))
    out, mask = dm.dropout(x, 0.5, train=True, rng=np.random.default_rng(7))
    replay = np.random.default_rng(7).random((1, 4)) >= 0.5
    np.testing.assert_array_equal(out, np.where(replay, 2.0, 0.0))
    np.testing.assert_array_equal(dm.dropout_backward(np.ones((1, 4)), mask), out)


@pytest.mark.parametrize("p", [1.0, 1.5, -0.1])
def test_dropout_rate_error(p):
    with pytest.raises(dm.ParameterError):
        dm.dropout(np.ones(3), p, train=True, rng=np.random.default_rng(0))


@pytest.mark.parametrize("x,want", [
    ([[0, 0]], [[0.5, 0.5]]),
    ([[1000, 1000]], [[0.5, 0.5]]),
    ([[0.0, np.log(3.0)]], [[0.25, 0.75]]),
])
def test_softmax_examples(x, want):
    np.testing.assert_allclose(dm.softmax_rows(np.array(x, float))[0], want, atol=1e-15)


def test_bilinear_examples():
    out, _ = dm.bilinear_form([[1.0, 2.0]], P("W", np.zeros((2, 2, 2))), [[3.0, 4.0]])
    np.testing.assert_array_equal(out, [[0, 0]])
    W = np.zeros((2, 2, 2))
    W[0, 0, 0] = W[1, 1, 1] = 1.0
    out, _ = dm.bilinear_form([[2.0, 3.0]], P("W", W), [[4.0, 5.0]])
    np.testing.assert_array_equal(out, [[8, 15]])
    out, _ = dm.bilinear_form([[1.5]], P("W", [[[2.0]]]), [[-3.0]])
    np.testing.assert_array_equal(out, [[-9.0]])


def test_bilinear_shape_error():
    with pytest.raises(dm.DimensionError):
        dm.bilinear_form([[1.0, 2.0]], P("W", np.zeros((3, 3, 3))), [[1.0, 2.0]])


@pytest.mark.parametrize("x,want", [
    ([[1, 2], [3, 0]], [[3, 2]]),
    ([[-1, -2], [-3, -1]], [[-1, -1]]),
    ([[4, 5]], [[4, 5]]),
])
def test_max_pool_examples(x, want):
    np.testing.assert_array_equal(dm.max_pool_set(np.array(x, float))[0], want)


def test_max_pool_ties_route_to_lowest_row():
    _, cache = dm.max_pool_set(np.array([[1.0, 2.0], [1.0, 2.0]]))
    g = dm.max_pool_set_backward(np.array([[1.0, 1.0]]), cache)
    np.testing.assert_array_equal(g, [[1, 1], [0, 0]])


@pytest.mark.parametrize("x,want", [
    ([[0, 2], [2, 0]], [[1, 1]]),
    ([[1, 1], [2, 2], [3, 3]], [[2, 2]]),
    ([[4, 5]], [[4, 5]]),
])
def test_mean_pool_examples(x, want):
    np.testing.assert_array_equal(dm.mean_pool_set(np.array(x, float))[0], want)


@pytest.mark.parametrize("fn", [dm.max_pool_set, dm.mean_pool_set])
def test_pool_empty_set(fn):
    with pytest.raises(dm.EmptySetError):
        fn(np.zeros((0, 3)))


# -- gradient checker ---------------------------------------------------------------


def _store(**arrays):
    s = ParamStore()
    for k, v in arrays.items():
        s.add(k, v)
    return s


def test_grad_check_linear_is_exact(rng):
    x = rng.normal(size=(3, 4))
    s = _store(w=rng.normal(size=(4, 2)), b=rng.normal(size=2))

    def f(s):
        out, cache = dm.linear(x, s["w"], s["b"])
        dm.linear_backward(np.ones_like(out), cache)
        return out.sum()

    assert dm.grad_check(f, s) < 1e-6


def test_grad_check_jaccard(rng):
    s = _store(r=rng.normal(size=(3, 4)))

    def f(s):
        w, cache = dm.jaccard_affinity(s["r"].value)
        s["r"].grad += dm.jaccard_affinity_backward(np.ones_like(w), cache)
        return w.sum()

    assert dm.grad_check(f, s) < 1e-4


def test_grad_check_bilinear(rng):
    h, o = rng.normal(size=(1, 3)), rng.normal(size=(2, 3))
    s = _store(W=rng.normal(size=(3, 3, 3)))

    def f(s):
        out, cache = dm.bilinear_form(h, s["W"], o)
        dm.bilinear_form_backward(np.ones_like(out), cache)
        return out.sum()

    assert dm.grad_check(f, s) < 1e-4


def test_grad_check_catches_wrong_gradient(rng):
    s = _store(w=rng.normal(size=(3,)))

    def f(s):
        s["w"].grad += 3.0 * s["w"].value  # true gradient is 2w
        return float(s["w"].value @ s["w"].value)

    assert dm.grad_check(f, s) > 0.1
    err, name = dm.directional_grad_check(f, s, rng)
    assert err > 0.1 and name == "w"


def test_grad_check_non_finite_names_parameter():
    s = _store(w=[1.0, 2.0])

    def f(s):
        s["w"].grad += np.array([np.inf, 0.0])
        return 1.0

    with pytest.raises(dm.NumericError, match="w"):
        dm.grad_check(f, s)


def test_param_store_flatten_shares_memory(rng):
    s = _store(a=rng.normal(size=(2, 3)), b=rng.normal(size=4))
    before = {p.name: p.value.copy() for p in s}
    s.flatten()
    assert s.flat_value.size == 10
    for p in s:
        np.testing.assert_array_equal(p.value, before[p.name])
    s["a"].value[0, 0] = 99.0
    assert s.flat_value[0] == 99.0
    s["b"].grad += 1.0
    assert s.flat_grad[6:].sum() == 4.0
    s.zero_grad()
    assert not s.flat_grad.any()
    with pytest.raises(RuntimeError):
        s.add("c", [1.0])


def test_param_store_duplicate_name():
    s = _store(a=[1.0])
    with pytest.raises(KeyError):
        s.add("a", [2.0])


# -- properties ----------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 5)), elements=finite))
def test_jaccard_symmetric_and_bounded(r):
    w, _ = dm.jaccard_affinity(r)
    np.testing.assert_array_equal(w, w.T)
    assert np.all(np.abs(w) <= 1.0 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=finite))
def test_softmax_rows_are_distributions(x):
    y, _ = dm.softmax_rows(x)
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 5)), elements=finite),
       st.randoms(use_true_random=False))
def test_pooling_is_permutation_invariant(x, rnd):
    perm = list(range(x.shape[0]))
    rnd.shuffle(perm)
    for fn in (dm.max_pool_set, dm.mean_pool_set):
        a, b = fn(x)[0], fn(x[perm])[0]
        np.testing.assert_allclose(a, b, atol=1e-12)
    y = x[:1]
    np.testing.assert_array_equal(dm.max_pool_set(y)[0], dm.mean_pool_set(y)[0])


@settings(max_examples=40, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 4), st.integers(2, 6)),
              elements=st.floats(-5, 5, allow_nan=False)))
def test_layer_norm_rows_standardized(x):
    d = x.shape[1]
    out, _ = dm.layer_norm(x, P("g", np.ones(d)), P("s", np.zeros(d)))
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-9)
    assert np.all(out.var(axis=1) <= 1.0 + 1e-9)
