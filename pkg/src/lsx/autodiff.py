"""Reverse-mode automatic differentiation on dense numpy arrays.

The one structural requirement that shapes this module is second-order
support: the critic's gradient penalty needs d/dtheta of ||d score/d input||.
Instead of registering explicit second-derivative rules, every op's
vector-Jacobian product is itself built out of graph ops.  A backward pass
therefore returns `Var` nodes, and any scalar assembled from them can be
differentiated again.  Ops whose local Jacobian is piecewise constant
(relu, abs, max) capture their mask as a constant, which fixes their second
derivative to zero everywhere, including relu'(0) = 0 by convention.

Values are float32 or float64 and the dtype is carried through a whole
graph; mixing the two in one binary op is an error rather than a silent
promotion.  Python scalars are cast to the tensor operand's dtype.

Every constructed node is checked for NaN/Inf (see `set_finite_checks`);
training code relies on that to abort instead of drifting.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping

import numpy as np

__all__ = [
    "Var",
    "NonFiniteError",
    "param",
    "const",
    "set_finite_checks",
    "registered_ops",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "relu",
    "sigmoid",
    "absval",
    "sqrt",
    "asum",
    "amax",
    "amean",
    "take_rows",
    "scatter_rows",
    "concat_last",
    "slice_last",
    "pad_last",
    "backward",
    "input_gradient",
    "Adam",
]

_CHECK_FINITE = True

# op name -> public builder, kept in registration order; the gradient-check
# suite asserts it covers every entry.
_OP_REGISTRY: dict[str, Callable] = {}


class NonFiniteError(ArithmeticError):
    """A forward value or gradient came out NaN or Inf."""


def set_finite_checks(enabled: bool) -> bool:
    """Toggle per-node NaN/Inf verification, returning the previous setting."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)
    return prev


def _register(name: str):
    def deco(fn):
        _OP_REGISTRY[name] = fn
        return fn

    return deco


def registered_ops() -> tuple[str, ...]:
    return tuple(_OP_REGISTRY)


class Var:
    """A node in the computation graph.

    `parents` are the Vars this value was computed from and `vjp` maps the
    incoming output gradient (a Var) to per-parent gradient Vars.  Leaves
    have no vjp.  Identity semantics matter: Vars hash by object identity
    so they can key gradient dicts.
    """

    __slots__ = ("data", "parents", "vjp", "requires_grad", "op", "name")

    def __init__(self, data, parents=(), vjp=None, requires_grad=False, op=None, name=None):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.parents = tuple(parents)
        self.vjp = vjp
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in self.parents)
        self.op = op
        self.name = name
        if _CHECK_FINITE and not np.isfinite(self.data).all():
            raise NonFiniteError(f"non-finite values produced by op {op!r}")

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Var":
        return Var(self.data.copy(), op="detach")

    def reshape(self, *shape) -> "Var":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __repr__(self):
        tag = self.op or ("param" if self.requires_grad else "leaf")
        return f"Var({tag}, shape={self.data.shape}, dtype={self.data.dtype})"

    # operator sugar; all routed through the registered builders
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def param(data, name: str | None = None, dtype=None) -> Var:
    """A trainable leaf."""
    arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
    return Var(arr, requires_grad=True, name=name)


def const(data, dtype=None) -> Var:
    """A non-trainable leaf; gradients are never collected for it."""
    arr = np.asarray(data, dtype=dtype)
    return Var(arr)


def _as_var(x, like: Var) -> Var:
    if isinstance(x, Var):
        return x
    return const(np.asarray(x, dtype=like.dtype))


def _check_dtypes(a: Var, b: Var, op: str):
    if a.dtype != b.dtype:
        raise TypeError(f"{op}: mixed dtypes {a.dtype} and {b.dtype}")


def _sum_to(g: Var, shape: tuple) -> Var:
    """Reduce a broadcast gradient back to the parent's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = asum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = asum(g, axis=axes, keepdims=True)
    if g.shape != tuple(shape):
        g = reshape(g, shape)
    return g


@_register("add")
def add(a, b) -> Var:
    a = a if isinstance(a, Var) else _as_var(a, b)
    b = _as_var(b, a)
    _check_dtypes(a, b, "add")

    def vjp(g, needs):
        return (
            _sum_to(g, a.shape) if needs[0] else None,
            _sum_to(g, b.shape) if needs[1] else None,
        )

    return Var(a.data + b.data, (a, b), vjp, op="add")


@_register("sub")
def sub(a, b) -> Var:
    a = a if isinstance(a, Var) else _as_var(a, b)
    b = _as_var(b, a)
    _check_dtypes(a, b, "sub")

    def vjp(g, needs):
        return (
            _sum_to(g, a.shape) if needs[0] else None,
            _sum_to(neg(g), b.shape) if needs[1] else None,
        )

    return Var(a.data - b.data, (a, b), vjp, op="sub")


@_register("mul")
def mul(a, b) -> Var:
    a = a if isinstance(a, Var) else _as_var(a, b)
    b = _as_var(b, a)
    _check_dtypes(a, b, "mul")

    def vjp(g, needs):
        return (
            _sum_to(mul(g, b), a.shape) if needs[0] else None,
            _sum_to(mul(g, a), b.shape) if needs[1] else None,
        )

    return Var(a.data * b.data, (a, b), vjp, op="mul")


@_register("div")
def div(a, b) -> Var:
    a = a if isinstance(a, Var) else _as_var(a, b)
    b = _as_var(b, a)
    _check_dtypes(a, b, "div")

    def vjp(g, needs):
        ga = _sum_to(div(g, b), a.shape) if needs[0] else None
        gb = None
        if needs[1]:
            gb = _sum_to(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return Var(a.data / b.data, (a, b), vjp, op="div")


@_register("neg")
def neg(a: Var) -> Var:
    def vjp(g, needs):
        return (neg(g),)

    return Var(-a.data, (a,), vjp, op="neg")


@_register("matmul")
def matmul(a: Var, b: Var) -> Var:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    _check_dtypes(a, b, "matmul")

    def vjp(g, needs):
        return (
            matmul(g, transpose(b)) if needs[0] else None,
            matmul(transpose(a), g) if needs[1] else None,
        )

    return Var(a.data @ b.data, (a, b), vjp, op="matmul")


@_register("transpose")
def transpose(a: Var) -> Var:
    if a.ndim != 2:
        raise ValueError("transpose expects a 2-d operand")

    def vjp(g, needs):
        return (transpose(g),)

    return Var(a.data.T.copy(), (a,), vjp, op="transpose")


@_register("reshape")
def reshape(a: Var, shape) -> Var:
    shape = tuple(shape)
    old = a.shape

    def vjp(g, needs):
        return (reshape(g, old),)

    return Var(a.data.reshape(shape), (a,), vjp, op="reshape")


@_register("relu")
def relu(a: Var) -> Var:
    # mask captured as a constant: relu'(0) = 0 and the second derivative
    # vanishes identically, which the penalty's double backward relies on.
    mask = const((a.data > 0).astype(a.dtype))

    def vjp(g, needs):
        return (mul(g, mask),)

    return Var(np.maximum(a.data, 0), (a,), vjp, op="relu")


@_register("sigmoid")
def sigmoid(a: Var) -> Var:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    result = Var(out, (a,), None, op="sigmoid")

    def vjp(g, needs):
        one = const(np.asarray(1.0, dtype=a.dtype))
        return (mul(g, mul(result, sub(one, result))),)

    result.vjp = vjp
    return result


@_register("abs")
def absval(a: Var) -> Var:
    sign = const(np.sign(a.data).astype(a.dtype))  # sign(0) = 0

    def vjp(g, needs):
        return (mul(g, sign),)

    return Var(np.abs(a.data), (a,), vjp, op="abs")


@_register("sqrt")
def sqrt(a: Var) -> Var:
    result = Var(np.sqrt(a.data), (a,), None, op="sqrt")

    def vjp(g, needs):
        half = const(np.asarray(0.5, dtype=a.dtype))
        return (div(mul(g, half), result),)

    result.vjp = vjp
    return result


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


@_register("sum")
def asum(a: Var, axis=None, keepdims: bool = False) -> Var:
    axes = _norm_axis(axis, a.ndim)
    kept = tuple(n if i not in axes else 1 for i, n in enumerate(a.shape))

    def vjp(g, needs):
        gk = reshape(g, kept) if g.shape != kept else g
        return (mul(gk, const(np.ones(a.shape, dtype=a.dtype))),)

    return Var(a.data.sum(axis=axes, keepdims=keepdims), (a,), vjp, op="sum")


@_register("max")
def amax(a: Var, axis: int, keepdims: bool = False) -> Var:
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)  # first hit wins on ties
    mask = np.zeros(a.shape, dtype=a.dtype)
    np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)
    mask = const(mask)
    kept = tuple(n if i != axis else 1 for i, n in enumerate(a.shape))

    def vjp(g, needs):
        gk = reshape(g, kept) if g.shape != kept else g
        return (mul(gk, mask),)

    return Var(a.data.max(axis=axis, keepdims=keepdims), (a,), vjp, op="max")


def amean(a: Var, axis=None, keepdims: bool = False) -> Var:
    axes = _norm_axis(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    total = asum(a, axis=axes, keepdims=keepdims)
    return mul(total, const(np.asarray(1.0 / count, dtype=a.dtype)))


@_register("take_rows")
def take_rows(a: Var, idx: np.ndarray) -> Var:
    """Gather rows per batch: a is (B, N, F), idx is (B, ...) int -> (B, ..., F)."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.ndim != 3 or idx.shape[0] != a.shape[0]:
        raise ValueError(f"take_rows: bad shapes {a.shape}, {idx.shape}")
    batch = np.arange(a.shape[0]).reshape((-1,) + (1,) * (idx.ndim - 1))
    n = a.shape[1]

    def vjp(g, needs):
        return (scatter_rows(g, idx, n),)

    return Var(a.data[batch, idx], (a,), vjp, op="take_rows")


@_register("scatter_rows")
def scatter_rows(a: Var, idx: np.ndarray, n: int) -> Var:
    """Adjoint of take_rows: scatter-add (B, ..., F) back into (B, n, F)."""
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros((a.shape[0], n, a.shape[-1]), dtype=a.dtype)
    batch = np.arange(a.shape[0]).reshape((-1,) + (1,) * (idx.ndim - 1))
    np.add.at(out, (batch, idx), a.data)

    def vjp(g, needs):
        return (take_rows(g, idx),)

    return Var(out, (a,), vjp, op="scatter_rows")


@_register("concat_last")
def concat_last(parts: Iterable[Var]) -> Var:
    parts = tuple(parts)
    widths = [p.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def vjp(g, needs):
        return tuple(
            slice_last(g, int(offsets[i]), int(offsets[i + 1])) if needs[i] else None
            for i in range(len(parts))
        )

    return Var(np.concatenate([p.data for p in parts], axis=-1), parts, vjp, op="concat_last")


@_register("slice_last")
def slice_last(a: Var, start: int, stop: int) -> Var:
    total = a.shape[-1]

    def vjp(g, needs):
        return (pad_last(g, start, total),)

    return Var(a.data[..., start:stop].copy(), (a,), vjp, op="slice_last")


@_register("pad_last")
def pad_last(a: Var, offset: int, total: int) -> Var:
    """Embed the last axis into `total` slots of zeros starting at `offset`."""
    width = a.shape[-1]
    if offset < 0 or offset + width > total:
        raise ValueError("pad_last: slice out of range")
    out = np.zeros(a.shape[:-1] + (total,), dtype=a.dtype)
    out[..., offset : offset + width] = a.data

    def vjp(g, needs):
        return (slice_last(g, offset, offset + width),)

    return Var(out, (a,), vjp, op="pad_last")


def _topo(out: Var) -> list[Var]:
    order, seen, stack = [], set(), [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(out: Var, wrt: Iterable[Var] | None = None) -> dict[Var, Var]:
    """Reverse sweep from a scalar; returns gradients as graph nodes.

    Because the returned Vars are ordinary graph nodes, a scalar built from
    them (e.g. a norm of an input gradient) can be passed to backward again.
    """
    if out.data.size != 1:
        raise ValueError(f"backward expects a scalar output, got shape {out.shape}")
    if not out.requires_grad:
        raise ValueError("output does not depend on any trainable input")
    grads: dict[Var, Var] = {out: const(np.ones_like(out.data))}
    for node in reversed(_topo(out)):
        g = grads[node]
        if node.vjp is None:
            continue
        needs = tuple(p.requires_grad for p in node.parents)
        for p, pg in zip(node.parents, node.vjp(g, needs)):
            if pg is None or not p.requires_grad:
                continue
            grads[p] = add(grads[p], pg) if p in grads else pg
    if wrt is not None:
        missing = [v for v in wrt if v not in grads]
        if missing:
            raise ValueError("output does not depend on a requested input")
        return {v: grads[v] for v in wrt}
    return grads


def input_gradient(out: Var, x: Var) -> Var:
    """Gradient of a scalar w.r.t. one input, as a differentiable node."""
    return backward(out, wrt=[x])[x]


class Adam:
    """Adam with bias correction; state keys mirror parameter names."""

    def __init__(self, params: Mapping[str, Var], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in self.params.items()}

    def step(self, grads: Mapping[str, Var | np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            g = g.data if isinstance(g, Var) else np.asarray(g)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": v.copy() for k, v in self.m.items()}
        out.update({f"v.{k}": v.copy() for k, v in self.v.items()})
        out["t"] = np.asarray([float(self.t)])
        return out

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        self.t = int(round(float(np.asarray(state["t"]).ravel()[0])))
        for k in self.m:
            self.m[k] = np.array(state[f"m.{k}"], copy=True)
            self.v[k] = np.array(state[f"v.{k}"], copy=True)


def dense(x: Var, w: Var, b: Var) -> Var:
    """Affine map on the last axis: x (..., fin) @ w (fin, fout) + b (fout,)."""
    fin = x.shape[-1]
    lead = x.shape[:-1]
    flat = x if x.ndim == 2 else reshape(x, (-1, fin))
    y = add(matmul(flat, w), b)
    if x.ndim != 2:
        y = reshape(y, lead + (w.shape[-1],))
    return y


def finite_difference(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient oracle, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * eps)
    if not math.isfinite(float(gf.sum())):
        raise NonFiniteError("finite differences diverged")
    return g
