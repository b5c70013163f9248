"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations work at matrix granularity on top of numpy.  A :class:`Tape`
records only the operations whose inputs depend on a watched leaf, so
forward-only evaluation (no active tape) costs nothing extra.

    >>> w = Tensor([3.0, 4.0])
    >>> with Tape() as tape:
    ...     tape.watch(w)
    ...     y = sum(square(w))
    >>> tape.gradient(y, [w])[0]
    array([6., 8.])
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import lapack, solve_triangular as _solve_tri

__all__ = [
    "Tensor", "Tape", "ShapeError", "NotPositiveDefiniteError", "NumericError",
    "as_tensor", "backward", "add", "sub", "mul", "div", "neg", "matmul", "relu",
    "exp", "log", "square", "sum", "mean", "reshape", "transpose", "getitem",
    "concat", "logsumexp", "log_softmax", "cholesky", "solve_triangular", "diag",
    "logdet_pd", "lowrank_logdet", "dense_logdet", "cholesky_array",
]


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    def __init__(self, index: int, msg: str | None = None):
        self.index = index
        super().__init__(msg or f"matrix is not positive definite (pivot {index} is non-positive)")


class NumericError(FloatingPointError):
    """A non-finite value appeared where a finite one is required."""


class Tensor:
    """Immutable wrapper around a float64 ndarray."""

    __slots__ = ("data",)
    __array_priority__ = 100

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, copy=True)
        arr.flags.writeable = False
        self.data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.flags.writeable:
            arr.flags.writeable = False
        t.data = arr
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={np.array2string(self.data, threshold=8)})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# tape


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    needs: tuple[bool, ...]
    vjp: Callable


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive operations for one backward pass.

    Single-threaded: the tape is bound to the thread that enters it.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._tracked: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            if not isinstance(t, Tensor):
                raise TypeError("only Tensor leaves can be watched")
            self._tracked[id(t)] = t

    def tracks(self, t) -> bool:
        return isinstance(t, Tensor) and id(t) in self._tracked

    def _push(self, out: Tensor, inputs: tuple, needs: tuple[bool, ...], vjp: Callable) -> None:
        self._tracked[id(out)] = out
        self.nodes.append(_Node(out, inputs, needs, vjp))

    def gradient(self, output: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
        """Adjoints of scalar ``output`` with respect to each leaf.

        Leaves the output does not depend on get a zero array.
        """
        if output.data.size != 1:
            raise ShapeError(f"gradient needs a scalar output, got shape {output.shape}")
        adj: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        for node in reversed(self.nodes):
            g = adj.pop(id(node.out), None)
            if g is None:
                continue
            grads = node.vjp(g, node.needs)
            for x, need, gx in zip(node.inputs, node.needs, grads):
                if not need or gx is None:
                    continue
                k = id(x)
                if k in adj:
                    adj[k] = adj[k] + gx
                else:
                    adj[k] = gx
        return [np.asarray(adj.get(id(t), np.zeros_like(t.data)), dtype=np.float64).reshape(t.shape)
                for t in leaves]


def backward(tape: Tape, output: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
    return tape.gradient(output, leaves)


def _record(value: np.ndarray, inputs: tuple, vjp: Callable) -> Tensor:
    out = Tensor._wrap(value)
    tape = _active_tape()
    if tape is not None:
        needs = tuple(tape.tracks(x) for x in inputs)
        if any(needs):
            tape._push(out, inputs, needs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _val(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _bshape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    _bshape(av, bv, "add")
    return _record(av + bv, (a, b), lambda g, n: (
        _unbroadcast(g, av.shape) if n[0] else None,
        _unbroadcast(g, bv.shape) if n[1] else None))


def sub(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    _bshape(av, bv, "sub")
    return _record(av - bv, (a, b), lambda g, n: (
        _unbroadcast(g, av.shape) if n[0] else None,
        _unbroadcast(-g, bv.shape) if n[1] else None))


def mul(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    _bshape(av, bv, "mul")
    return _record(av * bv, (a, b), lambda g, n: (
        _unbroadcast(g * bv, av.shape) if n[0] else None,
        _unbroadcast(g * av, bv.shape) if n[1] else None))


def div(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    _bshape(av, bv, "div")
    out = av / bv
    return _record(out, (a, b), lambda g, n: (
        _unbroadcast(g / bv, av.shape) if n[0] else None,
        _unbroadcast(-g * out / bv, bv.shape) if n[1] else None))


def neg(a) -> Tensor:
    return _record(-_val(a), (a,), lambda g, n: (-g,))


def relu(a) -> Tensor:
    av = _val(a)
    mask = av > 0
    return _record(np.where(mask, av, 0.0), (a,), lambda g, n: (g * mask,))


def exp(a) -> Tensor:
    out = np.exp(_val(a))
    return _record(out, (a,), lambda g, n: (g * out,))


def log(a) -> Tensor:
    av = _val(a)
    return _record(np.log(av), (a,), lambda g, n: (g / av,))


def square(a) -> Tensor:
    av = _val(a)
    return _record(av * av, (a,), lambda g, n: (2.0 * g * av,))


# ---------------------------------------------------------------------------
# reductions and shape


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    av = _val(a)
    out = av.sum(axis=axis, keepdims=keepdims)

    def vjp(g, n):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, av.shape).copy(),)

    return _record(out, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    av = _val(a)
    count = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a, shape) -> Tensor:
    av = _val(a)
    try:
        out = av.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {av.shape} to {shape}") from None
    return _record(out, (a,), lambda g, n: (g.reshape(av.shape),))


def transpose(a, axes=None) -> Tensor:
    av = _val(a)
    out = np.transpose(av, axes)
    inv = None if axes is None else np.argsort(axes)
    return _record(out, (a,), lambda g, n: (np.transpose(g, inv),))


def getitem(a, idx) -> Tensor:
    av = _val(a)
    out = av[idx]

    basic = all(isinstance(i, (slice, int)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def vjp(g, n):
        full = np.zeros_like(av)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _record(np.array(out), (a,), vjp)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    vals = [_val(p) for p in parts]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    cuts = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g, n):
        return tuple(np.split(g, cuts, axis=axis))

    return _record(out, tuple(parts), vjp)


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    av = _val(a)
    mx = av.max(axis=axis, keepdims=True)
    se = np.exp(av - mx)
    tot = se.sum(axis=axis, keepdims=True)
    out_k = mx + np.log(tot)
    soft = se / tot
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def vjp(g, n):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _record(out, (a,), vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    return sub(a, logsumexp(a, axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product; leading batch dimensions broadcast as in numpy."""
    av, bv = _val(a), _val(b)
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")
    out = np.matmul(av, bv)

    def vjp(g, n):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape) if n[0] else None
        gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape) if n[1] else None
        return ga, gb

    return _record(out, (a, b), vjp)


def diag(a) -> Tensor:
    """Diagonal of a square matrix as a vector."""
    av = _val(a)
    if av.ndim != 2 or av.shape[0] != av.shape[1]:
        raise ShapeError(f"diag: expected a square matrix, got {av.shape}")
    return _record(np.diag(av).copy(), (a,), lambda g, n: (np.diag(g),))


def cholesky_array(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric PD ndarray (upper triangle ignored)."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ShapeError(f"cholesky: expected a non-empty square matrix, got {A.shape}")
    L, info = lapack.dpotrf(A, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return L


def _phi(X: np.ndarray) -> np.ndarray:
    out = np.tril(X)
    out[np.diag_indices_from(out)] *= 0.5
    return out


def cholesky(a) -> Tensor:
    av = _val(a)
    L = cholesky_array(av)

    def vjp(g, n):
        # A_bar = sym(L^-T phi(L^T g) L^-1)
        P = _phi(L.T @ g)
        S = _solve_tri(L, _solve_tri(L, P.T, lower=True, trans="T").T, lower=True, trans="T")
        return (0.5 * (S + S.T),)

    return _record(L, (a,), vjp)


def solve_triangular(L, B, lower: bool = True) -> Tensor:
    """Solve ``L X = B`` for triangular ``L``."""
    Lv, Bv = _val(L), _val(B)
    if Lv.ndim != 2 or Lv.shape[0] != Lv.shape[1] or Bv.shape[0] != Lv.shape[0]:
        raise ShapeError(f"solve_triangular: incompatible shapes {Lv.shape} and {Bv.shape}")
    X = _solve_tri(Lv, Bv, lower=lower)

    def vjp(g, n):
        gB = _solve_tri(Lv, g, lower=lower, trans="T")
        gL = None
        if n[0]:
            outer = -(gB.reshape(len(gB), -1) @ X.reshape(len(X), -1).T)
            gL = np.tril(outer) if lower else np.triu(outer)
        return gL, (gB if n[1] else None)

    return _record(X, (L, B), vjp)


def logdet_pd(a) -> Tensor:
    """log|A| for symmetric PD ``A`` via its Cholesky factor."""
    return mul(sum(log(diag(cholesky(a)))), 2.0)


def dense_logdet(A: np.ndarray) -> float:
    L = cholesky_array(A)
    return 2.0 * float(np.log(np.diag(L)).sum())


def lowrank_logdet(Gc, lam: float) -> Tensor:
    """log|(1/M) Gc Gc^T + lam I_D| by the matrix determinant lemma.

    Costs O(D M^2): only the M x M capacitance matrix is factorized.
    """
    if not lam > 0:
        raise ValueError(f"lowrank_logdet: lambda must be positive, got {lam}")
    G = as_tensor(Gc)
    if G.ndim != 2:
        raise ShapeError(f"lowrank_logdet: expected D x M factor, got {G.shape}")
    D, M = G.shape
    cap = add(np.eye(M), mul(matmul(transpose(G), G), 1.0 / (M * lam)))
    return add(logdet_pd(cap), D * float(np.log(lam)))
