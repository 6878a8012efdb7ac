"""Reverse-mode tape over numpy arrays, with forward-mode duals layered on top.

A ``Tensor`` records the operation that produced it whenever one of its inputs
requires a gradient. ``backward`` sweeps the recorded graph once in reverse
topological order. ``Dual`` carries a value tensor plus a block of tangent
tensors (one column per seeded input direction); since the tangents are
themselves tape tensors, differentiating a loss that contains an input
gradient is reverse-over-forward and exact.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ContractViolation, NumericFault, UnsupportedPrimitive

__all__ = [
    "Tensor",
    "Dual",
    "ParamStore",
    "GradCheckReport",
    "no_grad",
    "grad_enabled",
    "as_tensor",
    "backward",
    "param_gradients",
    "input_gradient",
    "seed_dual",
    "grad_check",
]

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp", "name")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = None
        self._vjp = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.value.shape}{flag})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, c):
        return power(self, c)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, Dual):
        raise ContractViolation("dual number passed where a plain tensor is required")
    return Tensor(x)


def _node(value, parents, vjp) -> Tensor:
    out = Tensor(value)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def add(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        return _dual_add(a, b, 1.0)
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        return _dual_add(a, b, -1.0)
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def neg(a):
    if isinstance(a, Dual):
        return Dual(neg(a.value), neg(a.tangent))
    a = as_tensor(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        return _dual_mul(a, b)
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _node(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def div(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        return mul(a, reciprocal(b))
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def reciprocal(a):
    return power(a, -1.0)


def power(a, c: float):
    c = float(c)
    if isinstance(a, Dual):
        return _dual_unary(a, lambda x: power(x, c), lambda x: c * power(x, c - 1.0))
    a = as_tensor(a)
    av = a.value
    return _node(av**c, (a,), lambda g: (g * c * av ** (c - 1.0),))


def square(a):
    if isinstance(a, Dual):
        return mul(a, a)
    a = as_tensor(a)
    av = a.value
    return _node(av * av, (a,), lambda g: (2.0 * g * av,))


def matmul(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        raise UnsupportedPrimitive("matmul on dual numbers; use linear()")
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation("matmul operands must be at least 2-D")
    av, bv = a.value, b.value

    def vjp(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _node(av @ bv, (a, b), vjp)


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False):
    if isinstance(a, Dual):
        axes = _norm_axis(axis, a.value.ndim)
        return Dual(tsum(a.value, axes, keepdims), tsum(a.tangent, axes, keepdims))
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axis(axis, a.ndim)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _node(a.value.sum(axis=axes, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    shape = a.value.shape if isinstance(a, Dual) else as_tensor(a).shape
    axes = _norm_axis(axis, len(shape))
    count = int(np.prod([shape[i] for i in axes])) if axes else 1
    return mul(tsum(a, axes, keepdims), 1.0 / max(count, 1))


def reshape(a, shape):
    if isinstance(a, Dual):
        raise UnsupportedPrimitive("reshape on dual numbers")
    a = as_tensor(a)
    old = a.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inv = tuple(np.argsort(axes))
    return _node(a.value.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, idx):
    if isinstance(a, Dual):
        return a[idx]
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic_index(idx)

    def vjp(g):
        z = np.zeros(shape)
        if basic:
            z[idx] += g
        else:
            np.add.at(z, idx, g)
        return (z,)

    return _node(a.value[idx], (a,), vjp)


def expand_dims(a, axis):
    if isinstance(a, Dual):
        ax = axis if axis >= 0 else axis - 1
        return Dual(expand_dims(a.value, axis), expand_dims(a.tangent, ax))
    a = as_tensor(a)
    shape = a.shape
    return _node(np.expand_dims(a.value, axis), (a,), lambda g: (g.reshape(shape),))


def broadcast_to(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _node(np.broadcast_to(a.value, shape), (a,), lambda g: (_unbroadcast(g, old),))


def concatenate(items, axis=-1):
    if any(isinstance(x, Dual) for x in items):
        return _dual_join(items, axis, stack_mode=False)
    items = [as_tensor(x) for x in items]
    ax = axis % items[0].ndim
    sizes = [x.shape[ax] for x in items]
    cuts = np.cumsum(sizes)[:-1]
    return _node(
        np.concatenate([x.value for x in items], axis=ax),
        tuple(items),
        lambda g: tuple(np.split(g, cuts, axis=ax)),
    )


def stack(items, axis=0):
    if any(isinstance(x, Dual) for x in items):
        return _dual_join(items, axis, stack_mode=True)
    items = [as_tensor(x) for x in items]
    ax = axis % (items[0].ndim + 1)
    return _node(
        np.stack([x.value for x in items], axis=ax),
        tuple(items),
        lambda g: tuple(np.moveaxis(g, ax, 0)),
    )


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(
        np.where(cond, a.value, b.value),
        (a, b),
        lambda g: (_unbroadcast(np.where(cond, g, 0.0), sa), _unbroadcast(np.where(cond, 0.0, g), sb)),
    )


def solve(A, B):
    """Batched solve of A X = B with A (..., r, r) and B (..., r, k)."""
    A, B = as_tensor(A), as_tensor(B)
    try:
        X = np.linalg.solve(A.value, B.value)
    except np.linalg.LinAlgError as exc:
        raise NumericFault("singular matrix in solve") from exc
    Av = A.value

    def vjp(g):
        gB = np.linalg.solve(np.swapaxes(Av, -1, -2), g)
        gA = -gB @ np.swapaxes(X, -1, -2)
        return _unbroadcast(gA, A.shape), _unbroadcast(gB, B.shape)

    return _node(X, (A, B), vjp)


# elementwise functions with closed-form derivatives


def _silu(x):
    return x * expit(x)


def _silu_d1(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


def _silu_d2(x):
    s = expit(x)
    return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))


def _silu_d3(x):
    s = expit(x)
    ds = s * (1.0 - s)
    # d/dx [ds * (2 + x(1-2s))]
    return ds * (1.0 - 2.0 * s) * (2.0 + x * (1.0 - 2.0 * s)) + ds * ((1.0 - 2.0 * s) - 2.0 * x * ds)


def _elementwise(a, fn, dfn):
    a = as_tensor(a)
    av = a.value
    return _node(fn(av), (a,), lambda g: (g * dfn(av),))


def exp(a):
    if isinstance(a, Dual):
        return _dual_unary(a, exp, exp)
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    if isinstance(a, Dual):
        return _dual_unary(a, log, reciprocal)
    return _elementwise(a, np.log, lambda x: 1.0 / x)


def sin(a):
    if isinstance(a, Dual):
        return _dual_unary(a, sin, cos)
    return _elementwise(a, np.sin, np.cos)


def cos(a):
    if isinstance(a, Dual):
        return _dual_unary(a, cos, lambda x: neg(sin(x)))
    return _elementwise(a, np.cos, lambda x: -np.sin(x))


def tanh(a):
    if isinstance(a, Dual):
        return _dual_unary(a, tanh, lambda x: 1.0 - square(tanh(x)))
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    if isinstance(a, Dual):
        return _dual_unary(a, sigmoid, lambda x: sigmoid(x) * (1.0 - sigmoid(x)))
    a = as_tensor(a)
    out = expit(a.value)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    if isinstance(a, Dual):
        return _dual_unary(a, softplus, sigmoid)
    return _elementwise(a, lambda x: np.logaddexp(0.0, x), expit)


def silu(a):
    if isinstance(a, Dual):
        return _dual_unary(a, silu, silu_grad)
    return _elementwise(a, _silu, _silu_d1)


def silu_grad(a):
    """First derivative of SiLU as a differentiable primitive."""
    if isinstance(a, Dual):
        return _dual_unary(a, silu_grad, _silu_second)
    return _elementwise(a, _silu_d1, _silu_d2)


def _silu_second(a):
    return _elementwise(a, _silu_d2, _silu_d3)


def tabs(a):
    if isinstance(a, Dual):
        return _dual_unary(a, tabs, lambda x: Tensor(np.sign(x.value)))
    return _elementwise(a, np.abs, np.sign)


def sqrt(a):
    if isinstance(a, Dual):
        return _dual_unary(a, sqrt, lambda x: 0.5 / sqrt(x))
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def relu(a):
    return _elementwise(a, lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(float))


def wrap_angle(a):
    """Map to [-pi, pi); gradient passes through unchanged."""
    a = as_tensor(a)
    v = a.value
    out = v - 2.0 * np.pi * np.floor((v + np.pi) / (2.0 * np.pi))
    return _node(out, (a,), lambda g: (g,))


# ---------------------------------------------------------------------------
# Reverse sweep
# ---------------------------------------------------------------------------


def _topo(root: Tensor):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        if node._parents is not None:
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack_.append((p, False))
    return order


def backward(root: Tensor, seed=None) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if not root.requires_grad:
        return
    if seed is None:
        if root.value.size != 1:
            raise ContractViolation("backward on a non-scalar needs an explicit seed")
        seed = np.ones_like(root.value)
    grads = {id(root): np.asarray(seed, dtype=np.float64)}
    for node in reversed(_topo(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._parents is None:
            g = np.array(g, dtype=np.float64)
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# Forward-mode duals
# ---------------------------------------------------------------------------


class Dual:
    """Value of shape S with tangent block of shape S + (k,)."""

    __slots__ = ("value", "tangent")
    __array_priority__ = 1001

    def __init__(self, value, tangent):
        self.value = as_tensor(value)
        self.tangent = as_tensor(tangent)
        if self.tangent.shape[:-1] != self.value.shape:
            raise ContractViolation(
                f"tangent shape {self.tangent.shape} does not extend value shape {self.value.shape}"
            )

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def k(self):
        return self.tangent.shape[-1]

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, c):
        return power(self, c)

    def __getitem__(self, idx):
        items = idx if isinstance(idx, tuple) else (idx,)
        if any(i is Ellipsis for i in items):
            tidx = items + (slice(None),)
        else:
            tidx = items
        return Dual(getitem(self.value, idx), getitem(self.tangent, tidx))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)


def _as_dual_operand(x):
    if isinstance(x, Dual):
        return x
    return as_tensor(x)


def _align_tangent(t: Tensor, value_ndim: int, target_ndim: int) -> Tensor:
    if value_ndim >= target_ndim:
        return t
    return reshape(t, (1,) * (target_ndim - value_ndim) + t.shape)


def _dual_add(a, b, sign):
    a, b = _as_dual_operand(a), _as_dual_operand(b)
    av = a.value if isinstance(a, Dual) else a
    bv = b.value if isinstance(b, Dual) else b
    val = add(av, bv) if sign > 0 else sub(av, bv)
    nd = val.ndim
    parts = []
    if isinstance(a, Dual):
        parts.append(_align_tangent(a.tangent, a.value.ndim, nd))
    if isinstance(b, Dual):
        tb = _align_tangent(b.tangent, b.value.ndim, nd)
        parts.append(tb if sign > 0 else neg(tb))
    tan = parts[0] if len(parts) == 1 else add(parts[0], parts[1])
    if tan.shape[:-1] != val.shape:
        tan = broadcast_to(tan, val.shape + (tan.shape[-1],))
    return Dual(val, tan)


def _dual_mul(a, b):
    a, b = _as_dual_operand(a), _as_dual_operand(b)
    av = a.value if isinstance(a, Dual) else a
    bv = b.value if isinstance(b, Dual) else b
    val = mul(av, bv)
    nd = val.ndim
    parts = []
    if isinstance(a, Dual):
        parts.append(mul(_align_tangent(a.tangent, a.value.ndim, nd), expand_dims(bv, -1)))
    if isinstance(b, Dual):
        parts.append(mul(expand_dims(av, -1), _align_tangent(b.tangent, b.value.ndim, nd)))
    tan = parts[0] if len(parts) == 1 else add(parts[0], parts[1])
    if tan.shape[:-1] != val.shape:
        tan = broadcast_to(tan, val.shape + (tan.shape[-1],))
    return Dual(val, tan)


def _dual_unary(a: Dual, fn, dfn):
    return Dual(fn(a.value), mul(a.tangent, expand_dims(dfn(a.value), -1)))


def _dual_join(items, axis, stack_mode):
    k = next(x.k for x in items if isinstance(x, Dual))
    duals = []
    for x in items:
        if isinstance(x, Dual):
            duals.append(x)
        else:
            x = as_tensor(x)
            duals.append(Dual(x, np.zeros(x.shape + (k,))))
    nd = duals[0].value.ndim + (1 if stack_mode else 0)
    ax = axis % nd
    if stack_mode:
        return Dual(stack([d.value for d in duals], ax), stack([d.tangent for d in duals], ax))
    return Dual(concatenate([d.value for d in duals], ax), concatenate([d.tangent for d in duals], ax))


def linear(x, W, b=None):
    """Affine map x @ W.T + b over the last axis; W has shape (out, in)."""
    W = as_tensor(W)
    if isinstance(x, Dual):
        val = linear(x.value, W, b)
        tan = matmul(W, x.tangent)
        return Dual(val, tan)
    x = as_tensor(x)
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
    out = matmul(flat, transpose(W))
    if b is not None:
        out = add(out, b)
    if x.ndim != 2:
        out = reshape(out, lead + (W.shape[0],))
    return out


def seed_dual(q) -> Dual:
    """Seed forward mode with the coordinate directions of the last axis."""
    q = as_tensor(q)
    n = q.shape[-1]
    eye = np.broadcast_to(np.eye(n), q.shape + (n,))
    return Dual(q, eye)


def input_gradient(fn, q) -> Tensor:
    """Gradient of a scalar-per-sample field with respect to its input.

    ``fn`` maps a Dual of shape (..., n) to a Dual of shape (...,); the
    result has shape (..., n) and stays on the tape for parameter gradients.
    """
    out = fn(seed_dual(q))
    if not isinstance(out, Dual):
        q = as_tensor(q)
        return Tensor(np.zeros(q.shape))
    if not np.all(np.isfinite(out.tangent.value)):
        raise NumericFault("non-finite input gradient", where=getattr(fn, "__name__", "field"))
    return out.tangent


def check_finite(x, where: str):
    v = x.value.value if isinstance(x, Dual) else as_tensor(x).value
    if not np.all(np.isfinite(v)):
        raise NumericFault("non-finite intermediate", where=where)
    if isinstance(x, Dual) and not np.all(np.isfinite(x.tangent.value)):
        raise NumericFault("non-finite tangent", where=where)
    return x


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass
class _Entry:
    tensor: Tensor
    trainable: bool
    decay: bool


@dataclass
class ParamStore:
    """Named parameter tensors with trainable and weight-decay flags."""

    _entries: dict = field(default_factory=dict)

    def add(self, name: str, value, trainable: bool = True, decay: bool = True) -> Tensor:
        if name in self._entries:
            raise ContractViolation(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=trainable, name=name)
        self._entries[name] = _Entry(t, trainable, decay)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self):
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def is_trainable(self, name: str) -> bool:
        return self._entries[name].trainable

    def decays(self, name: str) -> bool:
        return self._entries[name].decay

    def set_trainable(self, prefix: str, flag: bool) -> None:
        for name, e in self._entries.items():
            if name == prefix or name.startswith(prefix + "."):
                e.trainable = flag
                e.tensor.requires_grad = flag

    def trainable_names(self):
        return [n for n, e in self._entries.items() if e.trainable]

    def zero_grad(self) -> None:
        for e in self._entries.values():
            e.tensor.grad = None

    def count(self, trainable_only: bool = False) -> int:
        return sum(
            e.tensor.value.size for e in self._entries.values() if e.trainable or not trainable_only
        )

    def snapshot(self) -> dict:
        return {n: e.tensor.value.copy() for n, e in self._entries.items()}

    def load(self, values: dict) -> None:
        for name, v in values.items():
            t = self._entries[name].tensor
            v = np.asarray(v, dtype=np.float64)
            if v.shape != t.value.shape:
                raise ContractViolation(f"shape mismatch for {name}: {v.shape} vs {t.value.shape}")
            t.value = v.copy()

    def flags(self) -> dict:
        return {n: {"trainable": e.trainable, "decay": e.decay} for n, e in self._entries.items()}


def param_gradients(loss: Tensor, params: ParamStore) -> dict:
    """Reverse sweep from ``loss``; returns one gradient array per trainable parameter."""
    params.zero_grad()
    backward(loss)
    out = {}
    for name in params.trainable_names():
        t = params[name]
        out[name] = np.zeros_like(t.value) if t.grad is None else t.grad
    params.zero_grad()
    return out


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    errors: np.ndarray

    @property
    def max_error(self) -> float:
        return float(np.max(self.errors)) if self.errors.size else 0.0


def grad_check(f, x, h: float = 1e-5) -> GradCheckReport:
    """Compare the tape gradient of scalar ``f`` with central differences.

    Errors are |a - n| / max(1, |a|, |n|) per coordinate.
    """
    if h <= 0:
        raise ContractViolation("step h must be positive")
    x = np.array(x, dtype=np.float64)
    xt = Tensor(x, requires_grad=True)
    y = f(xt)
    backward(y)
    analytic = np.zeros_like(x) if xt.grad is None else xt.grad.reshape(x.shape)
    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += h
        xm[i] -= h
        with no_grad():
            fp = float(as_tensor(f(Tensor(xp.reshape(x.shape)))).value)
            fm = float(as_tensor(f(Tensor(xm.reshape(x.shape)))).value)
        numeric.reshape(-1)[i] = (fp - fm) / (2.0 * h)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return GradCheckReport(analytic, numeric, np.abs(analytic - numeric) / denom)
