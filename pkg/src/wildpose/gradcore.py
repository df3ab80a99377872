"""Minimal reverse-mode autodiff over dense float64 arrays.

Graph nodes are immutable ``Tensor`` values.  ``backward`` walks the graph
from a scalar root and returns a ``GradientMap``; tensors themselves never
store gradients.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numba
import numpy as np

from .errors import NonFinite, NotScalar, ShapeMismatch

_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "requires_grad", "graph_id", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.graph_id = next(_ids)
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable | None = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operators
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

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return mean(self)


def _raise_not_scalar(t):
    raise NotScalar(f"expected a single element, got shape {t.shape}")


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def square(x: Tensor) -> Tensor:
    return _node(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def sqrt(x: Tensor) -> Tensor:
    """Square root whose derivative at 0 is taken as 0 rather than infinity."""
    y = np.sqrt(x.data)

    def back(g):
        safe = np.where(y > 0, y, 1.0)
        return (np.where(y > 0, 0.5 * g / safe, 0.0),)

    return _node(y, (x,), back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------- structural

def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def getitem(x: Tensor, idx) -> Tensor:
    def back(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _node(x.data[idx], (x,), back)


def take(x: Tensor, indices, axis: int) -> Tensor:
    indices = np.asarray(indices, dtype=np.intp)

    def back(g):
        out = np.zeros_like(x.data)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (out,)

    return _node(np.take(x.data, indices, axis=axis), (x,), back)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _node(
        np.concatenate([p.data for p in parts], axis=axis),
        parts,
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def tsum(x: Tensor, axis=None) -> Tensor:
    out = x.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _node(out, (x,), back)


def mean(x: Tensor) -> Tensor:
    n = x.size
    return _node(x.data.mean(), (x,), lambda g: (np.full(x.shape, g / n),))


# ---------------------------------------------------------------- layers

def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeMismatch(f"linear: bias {b.shape} vs weight {w.shape}")
    out = x.data @ w.data + b.data

    def back(g):
        return (g @ w.data.T, x.data.T @ g, g.sum(axis=0))

    return _node(out, (x, w, b), back)


def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, k: Tensor, stride: int = 1, pad: int = 0, b: Tensor | None = None) -> Tensor:
    """Zero-padded cross-correlation of ``x[B,C,H,W]`` with ``k[F,C,kh,kw]``."""
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4-d input and kernel, got {x.shape}, {k.shape}")
    B, C, H, W = x.shape
    F, Ck, kh, kw = k.shape
    if C != Ck:
        raise ShapeMismatch(f"conv2d: input has {C} channels, kernel expects {Ck}")
    if stride < 1 or pad < 0:
        raise ShapeMismatch("conv2d: stride must be positive and pad non-negative")
    if kh > H + 2 * pad or kw > W + 2 * pad:
        raise ShapeMismatch("conv2d: kernel larger than padded input")
    Ho, Wo = conv_output_size(H, kh, stride, pad), conv_output_size(W, kw, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = np.empty((B, Ho, Wo, C, kh, kw))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride]
            cols[..., i, j] = patch.transpose(0, 2, 3, 1)
    cols = cols.reshape(B * Ho * Wo, C * kh * kw)
    kmat = k.data.reshape(F, -1)
    out = cols @ kmat.T
    if b is not None:
        out = out + b.data
    out = out.reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, F)
        dk = (g2.T @ cols).reshape(k.shape)
        dcols = (g2 @ kmat).reshape(B, Ho, Wo, C, kh, kw)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dcols[
                    ..., i, j
                ].transpose(0, 3, 1, 2)
        dx = dxp[:, :, pad : pad + H, pad : pad + W] if pad else dxp
        grads = (dx, dk)
        if b is not None:
            grads += (g2.sum(axis=0),)
        return grads

    parents = (x, k) if b is None else (x, k, b)
    return _node(np.ascontiguousarray(out), parents, back)


def mse(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mse: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    return _node(
        np.mean(diff * diff),
        (a, b),
        lambda g: (2.0 * g * diff / n, -2.0 * g * diff / n),
    )


# ---------------------------------------------------------------- backward

class GradientMap:
    """Gradients keyed by graph node identity."""

    def __init__(self, entries: dict[int, np.ndarray] | None = None):
        self.entries: dict[int, np.ndarray] = entries or {}

    def __getitem__(self, t: Tensor) -> np.ndarray:
        return self.entries[t.graph_id]

    def __contains__(self, t: Tensor) -> bool:
        return t.graph_id in self.entries

    def get(self, t: Tensor, default=None):
        return self.entries.get(t.graph_id, default)

    def __len__(self):
        return len(self.entries)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.graph_id in seen:
            continue
        seen.add(node.graph_id)
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and p.graph_id not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> GradientMap:
    if root.size != 1:
        raise NotScalar(f"backward root must hold one element, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {}
    if not root.requires_grad:
        return GradientMap(grads)
    grads[root.graph_id] = np.ones(root.shape)
    for node in reversed(_topo_order(root)):
        g = grads.get(node.graph_id)
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            if parent.graph_id in grads:
                grads[parent.graph_id] = grads[parent.graph_id] + pg
            else:
                grads[parent.graph_id] = np.asarray(pg, dtype=np.float64)
    return GradientMap(grads)


# ---------------------------------------------------------------- Adadelta

@dataclass
class AdadeltaState:
    rho: float = 0.9
    eps: float = 1e-6
    accum_grad: dict[str, np.ndarray] = field(default_factory=dict)
    accum_update: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: dict[str, Tensor], rho: float = 0.9, eps: float = 1e-6):
        return cls(
            rho,
            eps,
            {k: np.zeros_like(v.data) for k, v in params.items()},
            {k: np.zeros_like(v.data) for k, v in params.items()},
        )


@numba.njit(cache=True)
def _adadelta_kernel(p, g, acc_g, acc_u, rho, eps, lr):
    p = p.reshape(-1)
    g = g.reshape(-1)
    acc_g = acc_g.reshape(-1)
    acc_u = acc_u.reshape(-1)
    for i in range(p.size):
        gi = g[i]
        a = rho * acc_g[i] + (1.0 - rho) * (gi * gi)
        d = np.sqrt(acc_u[i] + eps) / np.sqrt(a + eps) * gi
        acc_g[i] = a
        acc_u[i] = rho * acc_u[i] + (1.0 - rho) * (d * d)
        p[i] = p[i] - lr * d


def adadelta_step(
    params: dict[str, Tensor],
    grads: GradientMap,
    state: AdadeltaState,
    lr: float | dict[str, float],
) -> tuple[dict[str, Tensor], AdadeltaState]:
    """One Adadelta update.  ``lr`` may be a per-parameter mapping.

    Parameter arrays and accumulators are updated in place and also
    returned.  Parameters without a gradient entry are left untouched.
    """
    for name, p in params.items():
        g = grads.get(p)
        if g is None:
            continue
        acc_g = state.accum_grad.get(name)
        acc_u = state.accum_update.get(name)
        if acc_g is None:
            acc_g = state.accum_grad[name] = np.zeros_like(p.data)
            acc_u = state.accum_update[name] = np.zeros_like(p.data)
        if acc_g.shape != p.shape or acc_u.shape != p.shape or g.shape != p.shape:
            raise ShapeMismatch(f"adadelta: shapes disagree for {name!r}")
        step_lr = lr[name] if isinstance(lr, dict) else lr
        _adadelta_kernel(
            p.data, np.ascontiguousarray(g), acc_g, acc_u, float(state.rho), float(state.eps), float(step_lr)
        )
    return params, state


# ---------------------------------------------------------------- grad check

@dataclass
class GradCheckReport:
    max_rel_error: list[float]
    analytic: list[np.ndarray]
    numeric: list[np.ndarray]

    @property
    def worst(self) -> float:
        return max(self.max_rel_error, default=0.0)

    def passed(self, tol: float) -> bool:
        return self.worst < tol


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Iterable[np.ndarray],
    h: float = 1e-5,
    tol: float | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn`` to central differences.

    ``fn`` receives one Tensor per input and must return a scalar Tensor.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [parameter(a) for a in arrays]
    root = fn(*leaves)
    if not np.all(np.isfinite(root.data)):
        raise NonFinite("grad_check: function value is not finite")
    gm = backward(root)
    analytic = [gm.get(t, np.zeros_like(t.data)) for t in leaves]

    def value(xs):
        v = fn(*[constant(a) for a in xs]).data
        if not np.all(np.isfinite(v)):
            raise NonFinite("grad_check: perturbed function value is not finite")
        return float(v)

    numeric = []
    errors = []
    for k, a in enumerate(arrays):
        num = np.zeros_like(a)
        flat = num.reshape(-1)
        for i in range(a.size):
            orig = a.flat[i]
            a.flat[i] = orig + h
            fp = value(arrays)
            a.flat[i] = orig - h
            fm = value(arrays)
            a.flat[i] = orig
            flat[i] = (fp - fm) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(analytic[k]), np.abs(num)), 1e-8)
        rel = np.abs(analytic[k] - num) / denom
        numeric.append(num)
        errors.append(float(rel.max()) if rel.size else 0.0)
    report = GradCheckReport(errors, analytic, numeric)
    if tol is not None and not report.passed(tol):
        raise AssertionError(f"grad_check: worst relative error {report.worst:.3e} >= {tol}")
    return report
