import numpy as np
import pytest
from hypothesis import given, strategies as st

from degp import ndcore as nd
from degp.ndcore import NotPositiveDefiniteError, ShapeError, Tape, Tensor

from conftest import central_diff, rel_err


def grad_of(fn, *arrays):
    leaves = [Tensor(a) for a in arrays]
    with Tape() as tape:
        tape.watch(*leaves)
        out = fn(*leaves)
    return out, tape.gradient(out, leaves)


# -- forward primitives ------------------------------------------------------

def test_matmul_identity():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(nd.matmul(A, np.eye(2)).data, A)


def test_relu_definition():
    np.testing.assert_array_equal(nd.relu([-1.0, 0.0, 2.0]).data, [0.0, 0.0, 2.0])


def test_sum_of_squares():
    assert nd.sum(nd.square([3.0, 4.0])).item() == 25.0


def test_shape_mismatch_is_invalid_argument():
    with pytest.raises(ShapeError):
        nd.add(np.ones(3), np.ones(4))
    with pytest.raises(ShapeError):
        nd.matmul(np.ones((2, 3)), np.ones((2, 3)))
    assert issubclass(ShapeError, ValueError)


def test_logsumexp_and_log_softmax_stable():
    x = np.array([[1000.0, 1000.0], [0.0, -np.log(3.0)]])
    np.testing.assert_allclose(nd.logsumexp(x, axis=-1).data, [1000 + np.log(2), np.log(1 + 1 / 3)])
    ls = nd.log_softmax(x, axis=-1).data
    np.testing.assert_allclose(np.exp(ls).sum(axis=-1), 1.0)


def test_concat_and_getitem():
    a, b = np.arange(4.0).reshape(2, 2), np.arange(4.0, 6.0).reshape(1, 2)
    c = nd.concat([a, b], axis=0)
    np.testing.assert_array_equal(c.data, np.vstack([a, b]))
    np.testing.assert_array_equal(nd.getitem(c, (slice(1, 3), 0)).data, [2.0, 4.0])


def test_tensors_are_immutable():
    t = Tensor(np.ones(3))
    with pytest.raises(ValueError):
        t.data[0] = 5.0


# -- backward -----------------------------------------------------------------

def test_backward_sum_square():
    _, (g,) = grad_of(lambda x: nd.sum(nd.square(x)), np.array([3.0, 4.0]))
    np.testing.assert_allclose(g, [6.0, 8.0])


def test_gradient_of_constant_is_zero():
    x = Tensor(np.array([1.0, 2.0]))
    with Tape() as tape:
        tape.watch(x)
        out = nd.sum(nd.square(np.array([1.0, 1.0])))
    np.testing.assert_array_equal(tape.gradient(out, [x])[0], [0.0, 0.0])


def test_non_scalar_output_rejected():
    x = Tensor(np.ones(3))
    with Tape() as tape:
        tape.watch(x)
        y = nd.square(x)
    with pytest.raises(ShapeError):
        tape.gradient(y, [x])


def test_backward_alias_matches_tape_gradient():
    x = Tensor(np.array([1.0, -2.0]))
    with Tape() as tape:
        tape.watch(x)
        out = nd.sum(nd.exp(x))
    np.testing.assert_allclose(nd.backward(tape, out, [x])[0], np.exp(x.data))


def test_matmul_trace_composite_vs_finite_differences(rng):
    A = rng.standard_normal((4, 3))
    W = rng.standard_normal((3, 4))

    def f(w):
        return nd.sum(nd.diag(nd.matmul(nd.relu(nd.matmul(A, w)) + 0.1, np.ones((4, 4))))).item()

    _, (g,) = grad_of(lambda w: nd.sum(nd.diag(nd.matmul(nd.relu(nd.matmul(A, w)) + 0.1, np.ones((4, 4))))), W)
    assert rel_err(g, central_diff(f, W, 1e-5)) < 1e-6


UNARY = {
    "exp": nd.exp,
    "log": lambda x: nd.log(nd.add(nd.square(x), 1.0)),
    "square": nd.square,
    "relu": lambda x: nd.relu(nd.add(x, 0.0)),
    "neg": nd.neg,
    "logsumexp": lambda x: nd.logsumexp(x, axis=-1),
    "log_softmax": lambda x: nd.log_softmax(x, axis=-1),
    "transpose": nd.transpose,
    "reshape": lambda x: nd.reshape(x, (-1,)),
    "mean": lambda x: nd.mean(x, axis=0),
    "getitem": lambda x: nd.getitem(x, (slice(None), [0, 0, 2])),
    "concat": lambda x: nd.concat([x, nd.square(x)], axis=1),
    "div": lambda x: nd.div(x, nd.add(nd.square(x), 1.5)),
    "mul": lambda x: nd.mul(x, x),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@given(seed=st.integers(0, 10_000))
def test_primitive_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 4))
    if name == "relu":  # keep away from the kink
        x = np.where(np.abs(x) < 0.05, 0.5, x)
    w = rng.standard_normal(UNARY[name](Tensor(x)).shape)
    fn = UNARY[name]
    _, (g,) = grad_of(lambda t: nd.sum(nd.mul(fn(t), w)), x)
    fd = central_diff(lambda a: float(np.sum(fn(Tensor(a)).data * w)), x, 1e-5)
    assert rel_err(g, fd) < 1e-5


@given(seed=st.integers(0, 10_000))
def test_binary_broadcast_gradients(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((1, 4))
    for op in (nd.add, nd.sub, nd.mul):
        _, (ga, gb) = grad_of(lambda x, y: nd.sum(nd.square(op(x, y))), a, b)
        fa = central_diff(lambda v: float(np.sum(op(v, b).data ** 2)), a, 1e-5)
        fb = central_diff(lambda v: float(np.sum(op(a, v).data ** 2)), b, 1e-5)
        assert rel_err(ga, fa) < 1e-5 and rel_err(gb, fb) < 1e-5


@given(seed=st.integers(0, 10_000))
def test_batched_matmul_gradient(seed):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 2))
    _, (ga, gb) = grad_of(lambda x, y: nd.sum(nd.square(nd.matmul(x, y))), A, B)
    assert rel_err(ga, central_diff(lambda v: float(np.sum((v @ B) ** 2)), A, 1e-5)) < 1e-5
    assert rel_err(gb, central_diff(lambda v: float(np.sum((A @ v) ** 2)), B, 1e-5)) < 1e-5


# -- Cholesky and solves ------------------------------------------------------------

def test_cholesky_identity():
    np.testing.assert_array_equal(nd.cholesky(np.eye(3)).data, np.eye(3))


def test_cholesky_reconstruction():
    A = np.array([[4.0, 2.0], [2.0, 3.0]])
    L = nd.cholesky(A).data
    assert np.max(np.abs(L @ L.T - A)) < 1e-12
    assert np.allclose(np.triu(L, 1), 0.0)


def test_cholesky_not_positive_definite_names_index():
    with pytest.raises(NotPositiveDefiniteError) as exc:
        nd.cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert exc.value.index == 1
    assert "1" in str(exc.value)


@given(n=st.integers(1, 8), seed=st.integers(0, 10_000))
def test_cholesky_roundtrip(n, seed):
    rng = np.random.default_rng(seed)
    L = np.tril(rng.standard_normal((n, n)))
    L[np.diag_indices(n)] = np.abs(L[np.diag_indices(n)]) + 0.5
    A = L @ L.T
    L2 = nd.cholesky(A).data
    assert np.max(np.abs(L2 @ L2.T - A)) < 1e-10 * np.max(np.abs(A))
    np.testing.assert_allclose(L2, L, atol=1e-8)


@given(seed=st.integers(0, 10_000))
def test_cholesky_and_solve_gradients(seed):
    rng = np.random.default_rng(seed)
    n = 4
    X = rng.standard_normal((n, n))
    A = X @ X.T + n * np.eye(n)
    B = rng.standard_normal((n, 2))
    W = rng.standard_normal((n, 2))

    def f(a, b):
        a = nd.mul(nd.add(a, nd.transpose(a)), 0.5)  # symmetric perturbations only
        return nd.sum(nd.mul(nd.solve_triangular(nd.cholesky(a), b), W))

    _, (gA, gB) = grad_of(f, A, B)
    fdA = central_diff(lambda a: f(Tensor(a), Tensor(B)).item(), A, 1e-5)
    fdB = central_diff(lambda b: f(Tensor(A), Tensor(b)).item(), B, 1e-5)
    assert rel_err(gA, fdA) < 1e-5
    assert rel_err(gB, fdB) < 1e-5


def test_logdet_pd_gradient_is_inverse(rng):
    X = rng.standard_normal((5, 5))
    A = X @ X.T + 5 * np.eye(5)
    _, (g,) = grad_of(nd.logdet_pd, A)
    np.testing.assert_allclose(g, np.linalg.inv(A), atol=1e-10)


# -- determinant lemma ----------------------------------------------------------------

def test_lowrank_logdet_pure_jitter():
    assert nd.lowrank_logdet(np.zeros((4, 3)), 0.5).item() == pytest.approx(4 * np.log(0.5), abs=1e-14)


def test_lowrank_logdet_dense_oracle(rng):
    Gc = rng.standard_normal((12, 3))
    dense = np.linalg.slogdet(Gc @ Gc.T / 3 + 0.1 * np.eye(12))[1]
    assert nd.lowrank_logdet(Gc, 0.1).item() == pytest.approx(dense, rel=1e-9)


@pytest.mark.parametrize("lam", [0.0, -1.0])
def test_lowrank_logdet_rejects_nonpositive_lambda(lam):
    with pytest.raises(ValueError):
        nd.lowrank_logdet(np.ones((3, 2)), lam)


@given(D=st.integers(1, 32), M=st.integers(1, 8), seed=st.integers(0, 10_000),
       loglam=st.floats(-4, 1))
def test_lowrank_logdet_matches_dense(D, M, seed, loglam):
    rng = np.random.default_rng(seed)
    Gc = rng.standard_normal((D, M))
    lam = 10.0 ** loglam
    dense = nd.dense_logdet(Gc @ Gc.T / M + lam * np.eye(D))
    assert abs(nd.lowrank_logdet(Gc, lam).item() - dense) <= 1e-9 * max(abs(dense), 1.0)


def test_lowrank_logdet_gradient(rng):
    Gc = rng.standard_normal((6, 3))
    _, (g,) = grad_of(lambda G: nd.lowrank_logdet(G, 0.3), Gc)
    fd = central_diff(lambda G: nd.dense_logdet(G @ G.T / 3 + 0.3 * np.eye(6)), Gc, 1e-5)
    assert rel_err(g, fd) < 1e-6
