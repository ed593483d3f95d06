"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation takes :class:`Tensor` (or array-like) inputs. When at least
one input lives on a :class:`Tape` the result is recorded on that tape, so a
later :meth:`Tape.backward` can propagate adjoints. Inputs without a tape are
constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "ShapeError",
    "as_tensor",
    "relu_pow",
    "relu_pow_grad",
    "relu_poly",
    "matmul",
    "transpose",
    "reshape",
    "add",
    "sub",
    "neg",
    "hadamard",
    "scale",
    "square",
    "sum",
    "mean",
    "weighted_sum",
    "backward",
    "input_derivative",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """Immutable float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "index")

    def __init__(self, data, tape: Tape | None = None, index: int | None = None):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.tape = tape
        self.index = index

    @classmethod
    def _wrap(cls, arr: np.ndarray, tape=None, index=None) -> Tensor:
        # Internal results are fresh arrays; skip the defensive copy.
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.flags.writeable = False
        t.data, t.tape, t.index = arr, tape, index
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def finite(self) -> bool:
        """False when any entry overflowed to inf or became NaN."""
        return bool(np.all(np.isfinite(self.data)))

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        taped = "" if self.tape is None else f", node={self.index}"
        return f"Tensor(shape={self.shape}{taped})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return hadamard(self, other)

    def __rmul__(self, other):
        return hadamard(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Node:
    op: str
    inputs: tuple[int, ...]
    # Maps the output adjoint to one adjoint per input.
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    shape: tuple[int, ...]


@dataclass
class Tape:
    """Append-only record of operations; node inputs always precede the node."""

    nodes: list[_Node] = field(default_factory=list)

    def leaf(self, data) -> Tensor:
        """Register a differentiable input (parameter or network input)."""
        value = data.data if isinstance(data, Tensor) else data
        t = Tensor(value)
        return self._push("leaf", t.data, (), None, t)

    def _push(self, op, data, inputs, vjp, out: Tensor | None = None) -> Tensor:
        index = len(self.nodes)
        self.nodes.append(_Node(op, inputs, vjp, np.shape(data)))
        if out is None:
            return Tensor._wrap(data, self, index)
        out.tape, out.index = self, index
        return out

    def backward(self, root: Tensor) -> Gradients:
        """Propagate adjoints from a scalar ``root`` to every reachable node."""
        if root.tape is not self:
            raise ValueError("backward: root was not recorded on this tape")
        if root.data.size != 1:
            raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
        adj: list[np.ndarray | None] = [None] * (root.index + 1)
        adj[root.index] = np.ones(root.shape)
        for i in range(root.index, -1, -1):
            g = adj[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            for j, gj in zip(node.inputs, node.vjp(g)):
                if gj is None:
                    continue
                adj[j] = gj if adj[j] is None else adj[j] + gj
        return Gradients(self, adj)


class Gradients:
    """Adjoints produced by :meth:`Tape.backward`; unreachable nodes get zeros."""

    def __init__(self, tape: Tape, adjoints: list[np.ndarray | None]):
        self._tape = tape
        self._adj = adjoints

    def __getitem__(self, t: Tensor) -> np.ndarray:
        if t.tape is not self._tape:
            raise KeyError("tensor is not on this tape")
        g = self._adj[t.index] if t.index < len(self._adj) else None
        return np.zeros(t.shape) if g is None else g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*ts: Tensor) -> Tape | None:
    tape = None
    for t in ts:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("operands recorded on different tapes")
            tape = t.tape
    return tape


def _record(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor._wrap(data)
    # Constants get no node; their adjoint slot is dropped.
    idx = [t.index for t in inputs if t.tape is not None]
    live = [t.tape is not None for t in inputs]

    def pruned(g):
        grads = vjp(g)
        return [gi for gi, keep in zip(grads, live) if keep]

    return tape._push(op, data, tuple(idx), pruned)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _ipow(r: np.ndarray, k: int) -> np.ndarray:
    # Repeated squaring; numpy's generic float pow is several times slower.
    out = None
    base = r
    while k:
        if k & 1:
            out = base if out is None else out * base
        k >>= 1
        if k:
            base = base * base
    return np.ones_like(r) if out is None else out


def _relu_basis(x: np.ndarray, j: int, m: int) -> np.ndarray | None:
    """``D^m relu^j`` evaluated at ``x``; None stands for identically zero."""
    with np.errstate(over="ignore", invalid="ignore"):
        if j == 0:
            return x if m == 0 else (np.ones_like(x) if m == 1 else None)
        if m > j:
            return None
        c = math.perm(j, m)
        if m == j:
            return c * (x > 0).astype(np.float64)
        r = _ipow(np.maximum(x, 0.0), j - m)
        return r if c == 1 else c * r


def relu_pow(x, k: int) -> Tensor:
    """Elementwise ``max(0, x)**k``; the identity when ``k == 0``."""
    if k < 0 or int(k) != k:
        raise ValueError(f"relu_pow: k must be a non-negative integer, got {k}")
    k = int(k)
    x = as_tensor(x)
    if k == 0:
        return _record("relu_pow0", x.data, (x,), lambda g: (g,))
    X = x.data
    return _record(f"relu_pow{k}", _relu_basis(X, k, 0), (x,), lambda g: (g * _relu_basis(X, k, 1),))


def relu_pow_grad(x, k: int) -> Tensor:
    """Derivative of ``relu_pow(., k)`` as a differentiable tensor op.

    Used for tangent propagation (the H1 loss needs dN/dx inside the graph).
    The value at ``x == 0`` is 0 for ``k == 1``.
    """
    x = as_tensor(x)
    if k == 0:
        return Tensor(np.ones(x.shape))
    X = x.data

    def vjp(g):
        d = _relu_basis(X, k, 2)
        return (np.zeros_like(g) if d is None else g * d,)

    return _record(f"relu_pow_grad{k}", _relu_basis(X, k, 1), (x,), vjp)


def _power_stack(Z: np.ndarray, n: int) -> np.ndarray:
    """``P[0] = [Z > 0]`` and ``P[p] = relu(Z)**p`` for ``p = 1..n``."""
    P = np.empty((n + 1,) + Z.shape)
    P[0] = Z > 0
    if n:
        np.maximum(Z, 0.0, out=P[1])
        with np.errstate(over="ignore", invalid="ignore"):
            for p in range(2, n + 1):
                np.multiply(P[p - 1], P[1], out=P[p])
    return P


def _poly_coeffs(A: np.ndarray, m: int) -> np.ndarray:
    """Row ``p`` weights ``P[p]`` in ``sum_{j >= 1} A[j] D^m relu^j``."""
    n = A.shape[0] - 1
    C = np.zeros_like(A)
    for j in range(max(m, 1), n + 1):
        C[j - m] = A[j] * math.perm(j, m)
    return C


def relu_poly(z, alpha, order: int = 0) -> Tensor:
    """``sum_j alpha[j] * D^order relu^j(z)`` for ``j = 0..n``.

    ``z`` is ``(N, d)`` and ``alpha`` is ``(n + 1, d)``. With ``order == 0``
    this is the PSENet activation; ``order == 1`` gives its slope, which the
    tangent pass needs. Fusing the sum keeps the tape short.
    """
    z, alpha = as_tensor(z), as_tensor(alpha)
    if alpha.data.ndim != 2 or z.data.ndim != 2 or z.shape[1] != alpha.shape[1]:
        raise ShapeError(f"relu_poly: incompatible shapes {z.shape} and {alpha.shape}")
    Z, A = z.data, alpha.data
    n = A.shape[0] - 1
    P = _power_stack(Z, n)

    def evaluate(m: int) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            rows = n - m + 1  # P[p] pairs with j = p + m
            if rows > 0:
                out = np.einsum("pd,pnd->nd", _poly_coeffs(A, m)[:rows], P[:rows])
            else:
                out = np.zeros(Z.shape)
            if m == 0:
                out += A[0] * Z
            elif m == 1:
                out += A[0]
            return out

    def vjp(g):
        gz = ga = None
        with np.errstate(over="ignore", invalid="ignore"):
            if z.tape is not None:
                gz = g * evaluate(order + 1)
            if alpha.tape is not None:
                S = np.einsum("nd,pnd->pd", g, P)
                ga = np.zeros(A.shape)
                for j in range(max(order, 1), n + 1):
                    ga[j] = math.perm(j, order) * S[j - order]
                if order == 0:
                    ga[0] = np.einsum("nd,nd->d", g, Z)
                elif order == 1:
                    ga[0] = g.sum(axis=0)
        return gz, ga

    return _record(f"relu_poly{n}.{order}", evaluate(order), (z, alpha), vjp)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 0 or b.data.ndim == 0 or a.shape[-1] != b.shape[0 if b.data.ndim == 1 else -2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    A, B = a.data, b.data

    need_a, need_b = a.tape is not None, b.tape is not None

    def vjp(g):
        if A.ndim == 1 and B.ndim == 1:
            return g * B, g * A
        if B.ndim == 1:
            return (np.outer(g, B) if need_a else None), (A.T @ g if need_b else None)
        if A.ndim == 1:
            return (B @ g if need_a else None), (np.outer(A, g) if need_b else None)
        return (g @ B.T if need_a else None), (A.T @ g if need_b else None)

    return _record("matmul", A @ B, (a, b), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {src} to {shape}") from None
    return _record("reshape", out, (a,), lambda g: (g.reshape(src),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _record("transpose", a.data.T, (a,), lambda g: (g.T,))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _record(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _record(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def hadamard(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("hadamard", a, b)
    A, B = a.data, b.data
    with np.errstate(over="ignore", invalid="ignore"):
        out = A * B

    need_a, need_b = a.tape is not None, b.tape is not None

    def vjp(g):
        with np.errstate(over="ignore", invalid="ignore"):
            ga = _unbroadcast(g * B, a.shape) if need_a else None
            gb = _unbroadcast(g * A, b.shape) if need_b else None
            return ga, gb

    return _record("hadamard", out, (a, b), vjp)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def square(a) -> Tensor:
    a = as_tensor(a)
    A = a.data
    with np.errstate(over="ignore", invalid="ignore"):
        out = A * A
    return _record("square", out, (a,), lambda g: (2.0 * g * A,))


def sum(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    shape = a.shape
    return _record("sum", np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return scale(sum(a), 1.0 / n)


def weighted_sum(a, w) -> Tensor:
    """``sum(w * a)`` for a constant weight array ``w`` (quadrature)."""
    a = as_tensor(a)
    W = np.broadcast_to(np.asarray(w, dtype=np.float64), a.shape)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.sum(W * a.data)
    return _record("weighted_sum", out, (a,), lambda g: (g * W,))


def backward(root: Tensor) -> Gradients:
    """Run reverse mode from a scalar tensor recorded on a tape."""
    if root.tape is None:
        raise ValueError("backward: root is not recorded on any tape")
    return root.tape.backward(root)


def input_derivative(fn: Callable[[Tensor], Tensor], x) -> np.ndarray:
    """dN/dx for a batch of independent samples, via reverse mode.

    ``fn`` maps an ``(N, d)`` input to ``(N, 1)`` (or ``(N,)``) outputs where
    row ``i`` only depends on input row ``i``. Summing the outputs and
    differentiating therefore yields every per-sample gradient at once.
    Returns an array shaped like ``x``.
    """
    tape = Tape()
    xt = tape.leaf(x)
    y = as_tensor(fn(xt))
    if y.tape is None:  # output does not depend on x
        return np.zeros(xt.shape)
    return tape.backward(sum(y))[xt]
