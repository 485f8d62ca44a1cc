"""Minimal define-by-run reverse-mode automatic differentiation.

Every differentiable op appends a node to the recording order when at least
one input requires a gradient.  ``backward`` gathers the nodes reachable from
the loss and replays their vector-Jacobian products in exact reverse
recording order.  All values are float64.
"""
from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "AutodiffError",
    "NonFiniteError",
    "GradCheckReport",
    "forward_op",
    "backward",
    "check_gradients",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "matmul",
    "scalar_mul",
    "relu",
    "tanh",
    "mean",
    "sum",
    "l2_norm",
    "dot",
    "cosine_similarity",
    "square",
    "sqrt",
    "concat",
    "transpose",
    "linear",
]

COSINE_NORM_FLOOR = 1e-12

_counter = itertools.count()
_grad_enabled = True


class AutodiffError(ValueError):
    """Raised on shape mismatches, invalid domains and misuse of backward."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording inside the block (evaluation and sampling)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Node:
    __slots__ = ("op", "inputs", "output", "vjp", "index")

    def __init__(self, op, inputs, output, vjp):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp
        self.index = next(_counter)

    def __repr__(self) -> str:
        return f"Node({self.op}, #{self.index})"


class Tensor:
    """Dense float64 array that can take part in differentiation.

    Leaves created with ``requires_grad=True`` carry a ``grad`` array of the
    same shape which ``backward`` accumulates into.
    """

    __slots__ = ("value", "requires_grad", "grad", "node", "name")
    __array_priority__ = 1000

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.value = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.value) if requires_grad else None
        self.node: Node | None = None
        self.name = name

    @classmethod
    def _wrap(cls, value: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.value = value
        t.requires_grad = requires_grad
        t.grad = None
        t.node = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.value

    def __array__(self, dtype=None, copy=None):
        return self.value if dtype is None else self.value.astype(dtype)

    def item(self) -> float:
        if self.value.size != 1:
            raise AutodiffError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.value.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.value.copy(), False)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.value!r}{flag})"

    def __len__(self) -> int:
        return len(self.value)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, other)
        return mul(other, self)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise AutodiffError("only division by a Python scalar is supported")
        return scalar_mul(self, 1.0 / other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


class NonFiniteError(AutodiffError):
    """A forward value or gradient became NaN or infinite."""


def _record(op: str, inputs: Sequence[Tensor], value: np.ndarray, vjp: Callable,
            check: bool = False) -> Tensor:
    # reductions are checked; upstream NaN/Inf always propagates into them
    if check and not np.isfinite(value).all():
        raise NonFiniteError(f"{op}: non-finite value in forward pass")
    needs = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(value, needs)
    if needs:
        out.node = Node(op, tuple(inputs), out, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise AutodiffError(f"{op}: shape mismatch between {a.shape} and {b.shape}") from None


# -- elementwise ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _record("add", (a, b), a.value + b.value,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _record("sub", (a, b), a.value - b.value,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product (numpy broadcasting between the operands)."""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul_elementwise", a, b)
    av, bv = a.value, b.value
    return _record("mul_elementwise", (a, b), av * bv,
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scalar_mul(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _record("scalar_mul", (a,), a.value * c, lambda g: (g * c,))


def square(a) -> Tensor:
    a = _as_tensor(a)
    av = a.value
    return _record("square", (a,), av * av, lambda g: (2.0 * g * av,))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.value < 0):
        raise AutodiffError(f"sqrt: negative input (min {a.value.min():.6g})")
    out = np.sqrt(a.value)
    return _record("sqrt", (a,), out, lambda g: (0.5 * g / out,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.value > 0
    return _record("relu", (a,), np.maximum(a.value, 0.0), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.value)
    return _record("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


# -- linear algebra ---------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise AutodiffError(f"matmul: shape mismatch between {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    need_a, need_b = a.requires_grad, b.requires_grad

    def vjp(g):
        if av.ndim == 1 and bv.ndim == 1:
            ga, gb = lambda: g * bv, lambda: g * av
        elif av.ndim == 1:
            ga, gb = lambda: bv @ g, lambda: np.outer(av, g)
        elif bv.ndim == 1:
            ga, gb = lambda: np.outer(g, bv), lambda: av.T @ g
        else:
            ga, gb = lambda: g @ bv.T, lambda: av.T @ g
        return (ga() if need_a else None), (gb() if need_b else None)

    return _record("matmul", (a, b), av @ bv, vjp)


def linear(x, w, b) -> Tensor:
    """Fused ``x @ w + b`` for a batch ``x`` of shape (n, fan_in)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise AutodiffError(
            f"linear: shape mismatch between {x.shape}, {w.shape} and bias {b.shape}")
    xv, wv = x.value, w.value
    out = xv @ wv
    out += b.value
    need_x, need_w, need_b = x.requires_grad, w.requires_grad, b.requires_grad

    def vjp(g):
        return (g @ wv.T if need_x else None,
                xv.T @ g if need_w else None,
                g.sum(axis=0) if need_b else None)

    return _record("linear", (x, w, b), out, vjp)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise AutodiffError(f"transpose: expected a 2-D tensor, got shape {a.shape}")
    return _record("transpose", (a,), a.value.T, lambda g: (g.T,))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise AutodiffError("concat: needs at least one tensor")
    try:
        out = np.concatenate([t.value for t in ts], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in ts)
        raise AutodiffError(f"concat: shape mismatch between {shapes} along axis {axis}") from None
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _record("concat", tuple(ts), out, lambda g: tuple(np.split(g, splits, axis=axis)))


# -- reductions -------------------------------------------------------------------


def _expand(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    shape = a.shape
    return _record("sum", (a,), np.sum(a.value, axis=axis, keepdims=keepdims),
                   lambda g: (_expand(g, shape, axis, keepdims),), check=True)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    n = a.size if axis is None else shape[axis]
    if n == 0:
        raise AutodiffError("mean: empty tensor")
    return _record("mean", (a,), np.mean(a.value, axis=axis, keepdims=keepdims),
                   lambda g: (_expand(g / n, shape, axis, keepdims),), check=True)


def l2_norm(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Euclidean norm over ``axis`` (whole tensor when None).

    The gradient at an exactly-zero vector is taken to be zero.
    """
    a = _as_tensor(a)
    av = a.value
    norm = np.sqrt(np.sum(av * av, axis=axis, keepdims=True))
    out = norm if keepdims else (norm.reshape(()) if axis is None else np.squeeze(norm, axis))

    def vjp(g):
        gk = g if keepdims or axis is None else np.expand_dims(g, axis)
        safe = np.where(norm > 0, norm, 1.0)
        return (np.where(norm > 0, av / safe, 0.0) * gk,)

    return _record("l2_norm", (a,), out, vjp, check=True)


def dot(a, b, axis: int | None = None) -> Tensor:
    """Sum of elementwise products, over everything or along ``axis``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise AutodiffError(f"dot: shape mismatch between {a.shape} and {b.shape}")
    av, bv = a.value, b.value

    def vjp(g):
        gk = g if axis is None else np.expand_dims(g, axis)
        return gk * bv, gk * av

    return _record("dot", (a, b), np.sum(av * bv, axis=axis), vjp, check=True)


def cosine_similarity(a, b, axis: int | None = None) -> Tensor:
    """Cosine of the angle between ``a`` and ``b``, flattened or along ``axis``.

    Both norms are floored at ``COSINE_NORM_FLOOR`` before dividing.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise AutodiffError(f"cosine_similarity: shape mismatch between {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    ax = axis
    na = np.sqrt(np.sum(av * av, axis=ax, keepdims=True))
    nb = np.sqrt(np.sum(bv * bv, axis=ax, keepdims=True))
    fa = np.maximum(na, COSINE_NORM_FLOOR)
    fb = np.maximum(nb, COSINE_NORM_FLOOR)
    s = np.sum(av * bv, axis=ax, keepdims=True)
    c = s / (fa * fb)
    out = c.reshape(()) if ax is None else np.squeeze(c, ax)

    def vjp(g):
        gk = np.reshape(g, c.shape)
        # the floored norm is constant in its argument below the floor
        da = bv / (fa * fb) - np.where(na > COSINE_NORM_FLOOR, c / (fa * fa), 0.0) * av
        db = av / (fa * fb) - np.where(nb > COSINE_NORM_FLOOR, c / (fb * fb), 0.0) * bv
        return gk * da, gk * db

    return _record("cosine_similarity", (a, b), out, vjp, check=True)


_OPS: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul_elementwise": mul,
    "matmul": matmul,
    "scalar_mul": scalar_mul,
    "relu": relu,
    "tanh": tanh,
    "mean": mean,
    "sum": sum,
    "l2_norm": l2_norm,
    "dot": dot,
    "cosine_similarity": cosine_similarity,
    "square": square,
    "sqrt": sqrt,
    "concat": lambda *ts, **kw: concat(ts, **kw),
    "transpose": transpose,
    "linear": linear,
}

OP_KINDS = tuple(_OPS)


def forward_op(op_kind: str, inputs: Sequence, **kwargs) -> Tensor:
    """Apply ``op_kind`` to ``inputs`` by name (``scalar_mul`` takes ``c=``)."""
    try:
        fn = _OPS[op_kind]
    except KeyError:
        raise AutodiffError(f"unknown op_kind {op_kind!r}; expected one of {OP_KINDS}") from None
    return fn(*inputs, **kwargs)


# -- backward ---------------------------------------------------------------------


@dataclass
class Tape:
    """Recorded nodes reachable from one output, in recording order."""

    nodes: list[Node] = field(default_factory=list)

    @classmethod
    def reaching(cls, output: Tensor) -> "Tape":
        seen: set[int] = set()
        nodes: list[Node] = []
        stack = [output.node] if output.node is not None else []
        while stack:
            node = stack.pop()
            if node.index in seen:
                continue
            seen.add(node.index)
            nodes.append(node)
            for t in node.inputs:
                if t.node is not None and t.node.index not in seen:
                    stack.append(t.node)
        nodes.sort(key=lambda n: n.index)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every requires_grad leaf."""
    if loss.size != 1:
        raise AutodiffError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            loss.grad = loss.grad + 1.0
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    touched: dict[int, Tensor] = {}
    for node in reversed(Tape.reaching(loss).nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.vjp(g)):
            if not t.requires_grad or gi is None:
                continue
            if t.node is None:
                if t.grad is None:
                    t.grad = np.zeros_like(t.value)
                t.grad += gi
                touched[id(t)] = t
            else:
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = np.array(gi, dtype=np.float64)
    for t in touched.values():
        if not np.isfinite(t.grad).all():
            raise NonFiniteError(f"backward: non-finite gradient in leaf of shape {t.shape}")


# -- gradient checking ------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    analytic: np.ndarray
    numeric: np.ndarray
    skipped: list[int] = field(default_factory=list)

    @property
    def notes(self) -> list[str]:
        return [f"non-differentiable point skipped at index {i}" for i in self.skipped]


def check_gradients(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5,
                    tol: float = 1e-4, floor: float = 1e-2) -> GradCheckReport:
    """Compare the tape gradient of scalar ``f`` at ``x`` with central differences.

    The relative error of each coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    Coordinates whose one-sided slopes disagree by more than a curvature-sized
    amount sit on a kink and are skipped (reported in ``skipped``).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.array(x.value if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0, requires_grad=True)
    out = f(xt)
    backward(out)
    analytic = xt.grad.copy()
    f0 = float(out.value)

    def at(v: np.ndarray) -> float:
        with no_grad():
            return float(f(Tensor(v)).value)

    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    skipped: list[int] = []
    for i in range(flat.size):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += eps
        minus[i] -= eps
        fp = at(plus.reshape(x0.shape))
        fm = at(minus.reshape(x0.shape))
        numeric.reshape(-1)[i] = (fp - fm) / (2 * eps)
        right, left = (fp - f0) / eps, (f0 - fm) / eps
        if abs(right - left) > 100 * np.sqrt(eps) * max(1.0, abs(right), abs(left)):
            skipped.append(i)

    a, n = analytic.reshape(-1), numeric.reshape(-1)
    rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    if skipped:
        rel[skipped] = 0.0
    max_rel = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(max_rel, max_rel <= tol, analytic, numeric, skipped)
