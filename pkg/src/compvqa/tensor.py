"""Dense tensors with reverse-mode differentiation.

Every differentiable primitive returns a new :class:`Tensor` holding a closure
that pushes the output gradient back to its parents. :func:`backward` walks the
graph in reverse topological order. Arrays are NumPy ``float64`` unless the
caller passes something else.
"""

from __future__ import annotations

import contextlib
from collections import OrderedDict
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError, UsageError

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DTYPE))


def _make(data, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of NumPy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    out = _make(a.data + b.data, (a, b), bw)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


hadamard = mul


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out_data = a.data / b.data

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * out_data / b.data, b.shape))

    return _make(out_data, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: _accum(a, -g))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: _accum(a, 2.0 * a.data * g))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)
    return _make(out_data, (a,), lambda g: _accum(a, g / (2.0 * out_data)))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return _make(out_data, (a,), lambda g: _accum(a, g * out_data))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: _accum(a, g / a.data))


def relu(a) -> Tensor:
    """max(x, 0); the derivative at exactly 0 is taken as 0."""
    a = as_tensor(a)
    mask = a.data > 0
    # np.maximum keeps NaN so non-finite inputs surface in the loss
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: _accum(a, g * mask))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _stable_sigmoid(a.data)
    return _make(s, (a,), lambda g: _accum(a, g * s * (1.0 - s)))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: _accum(a, g * (1.0 - t * t)))


def softplus(a) -> Tensor:
    """log(1 + e^x) without overflow; used for log-space BCE."""
    a = as_tensor(a)
    x = a.data
    out_data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _make(out_data, (a,), lambda g: _accum(a, g * _stable_sigmoid(x)))


# ----------------------------------------------------------------- reductions


def _check_axis(a: Tensor, axis) -> None:
    if axis is None:
        return
    axes = axis if isinstance(axis, tuple) else (axis,)
    for ax in axes:
        if not -a.ndim <= ax < a.ndim:
            raise UsageError(f"axis {ax} is invalid for shape {a.shape}")


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    _check_axis(a, axis)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(out_data, (a,), bw)


sum_axis = sum


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(a, axis=-1, mask=None) -> Tensor:
    """Softmax along ``axis`` with max-subtraction.

    ``mask`` (broadcastable boolean array, True = keep) removes entries from
    the normalisation; a slice with no kept entries yields zeros.
    """
    a = as_tensor(a)
    _check_axis(a, axis)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    denom = e.sum(axis=axis, keepdims=True)
    s = np.divide(e, denom, out=np.zeros_like(e), where=denom != 0)

    def bw(g):
        _accum(a, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _make(s, (a,), bw)


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    s = np.exp(out_data)

    def bw(g):
        _accum(a, g - s * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (a,), bw)


# ------------------------------------------------------------ linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batched over leading ones."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul: scalar operands {a.shape} and {b.shape}")
    if a.ndim == 1:
        out = matmul(reshape(a, (1, a.shape[0])), b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])
    if b.ndim == 1:
        out = matmul(a, reshape(b, (b.shape[0], 1)))
        return reshape(out, out.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # shared weight: contract the batch axes in one GEMM
                ad = a.data.reshape(-1, a.shape[-1])
                _accum(b, ad.T @ g.reshape(-1, g.shape[-1]))
            else:
                _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out_data, (a, b), bw)


def transpose(a, axes=None) -> Tensor:
    """Swap the last two axes, or permute by ``axes``."""
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            return a
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: _accum(a, np.transpose(g, inv)))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: _accum(a, g.reshape(a.shape)))


def broadcast_row(p, m: int) -> Tensor:
    """The m x K matrix whose every row is ``p`` (outer product 1 p^T)."""
    p = as_tensor(p)
    if p.ndim != 1:
        raise ShapeError(f"broadcast_row expects a vector, got shape {p.shape}")
    return _make(np.broadcast_to(p.data, (m, p.shape[0])).copy(), (p,),
                 lambda g: _accum(p, g.sum(axis=0)))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(a.data[idx], (a,), bw)


def take_rows(table, indices) -> Tensor:
    """Row lookup (embedding): ``table[indices]`` for an integer index array."""
    table = as_tensor(table)
    indices = np.asarray(indices)

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, indices, g)
        _accum(table, full)

    return _make(table.data[indices], (table,), bw)


def stack(tensors: Sequence[Tensor], axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: mismatched shapes {sorted(shapes)}")
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        for i, t in enumerate(tensors):
            _accum(t, np.take(g, i, axis=axis))

    return _make(out_data, tensors, bw)


def concat(tensors: Sequence[Tensor], axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: mismatched shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            _accum(t, piece)

    return _make(out_data, tensors, bw)


# ------------------------------------------------------------- regularisers


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise UsageError(f"dropout probability must lie in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise UsageError("dropout in training mode needs a seeded generator")
    keep = (rng.random(x.shape, dtype=np.float32) >= p) * (1.0 / (1.0 - p))
    return _make(x.data * keep, (x,), lambda g: _accum(x, g * keep))


def weight_norm(v, g) -> Tensor:
    """Effective weight ``g_r * v_r / ||v_r||`` for each row r of ``v``."""
    v, g = as_tensor(v), as_tensor(g)
    if v.ndim != 2 or g.shape != (v.shape[0],):
        raise ShapeError(f"weight_norm: v {v.shape} needs one gain per row, got g {g.shape}")
    norms = np.sqrt((v.data * v.data).sum(axis=1))
    if np.any(norms == 0.0):
        rows = np.flatnonzero(norms == 0.0).tolist()
        raise UsageError(f"weight_norm: zero-norm rows {rows}")
    norm = sqrt(sum(square(v), axis=1, keepdims=True))
    return mul(reshape(g, (-1, 1)), div(v, norm))


# ------------------------------------------------------------------ backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, params: "ParamStore | None" = None) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf needing it.

    Returns ``{name: grad}`` for the trainable entries of ``params`` (zeros
    when the loss does not depend on a parameter).
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.requires_grad:
        order = _topo_order(loss)
        loss.grad = np.ones_like(loss.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # release intermediate buffers
        for node in order:
            if node._parents:
                node.grad = None
    if params is None:
        return {}
    return {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.trainable_items()
    }


# ---------------------------------------------------------------- parameters


class ParamStore:
    """Ordered name -> Tensor map with a frozen subset."""

    def __init__(self):
        self._entries: OrderedDict[str, Tensor] = OrderedDict()
        self.frozen_names: set[str] = set()

    def add(self, name: str, value) -> Tensor:
        if name in self._entries:
            raise UsageError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True, name=name)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._entries[name]
        except KeyError:
            raise UsageError(f"unknown parameter {name!r}") from None

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def trainable_items(self):
        return [(n, t) for n, t in self._entries.items() if n not in self.frozen_names]

    def freeze(self, names: Iterable[str]) -> None:
        for n in names:
            self[n].requires_grad = False
            self.frozen_names.add(n)

    def unfreeze(self, names: Iterable[str]) -> None:
        for n in names:
            self[n].requires_grad = True
            self.frozen_names.discard(n)

    def freeze_all_except(self, keep: Iterable[str]) -> None:
        keep = set(keep)
        self.freeze([n for n in self._entries if n not in keep])

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def state_dict(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((n, t.data.copy()) for n, t in self._entries.items())

    def load_state_dict(self, state, strict=True) -> None:
        for name, arr in state.items():
            if name not in self._entries:
                if strict:
                    raise UsageError(f"checkpoint entry {name!r} has no matching parameter")
                continue
            t = self._entries[name]
            arr = np.asarray(arr, dtype=t.data.dtype)
            if arr.shape != t.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != parameter shape {t.shape}")
            t.data = arr.copy()
        if strict:
            missing = [n for n in self._entries if n not in state]
            if missing:
                raise UsageError(f"checkpoint lacks parameters {missing}")

    def n_coords(self) -> int:
        return int(np.sum([t.data.size for t in self._entries.values()]))


# ------------------------------------------------------------ gradient oracle


def finite_diff_check(f: Callable[[], Tensor], params: ParamStore, h: float = 1e-5,
                      names: Iterable[str] | None = None, return_details: bool = False,
                      floor: float = 1e-8):
    """Compare reverse-mode gradients against central differences.

    ``f`` rebuilds the scalar loss from the current parameter values and must
    be deterministic. Returns the maximum over coordinates of
    ``|a - n| / max(|a|, |n|, floor)``; ``floor`` bounds the relative error of
    near-zero gradients, where central differences are dominated by roundoff.
    """
    names = [n for n, _ in params.trainable_items()] if names is None else list(names)
    params.zero_grad()
    loss = f()
    analytic = backward(loss, params)
    worst = 0.0
    details = {}
    with no_grad():
        for name in names:
            t = params[name]
            flat = t.data.reshape(-1)
            numeric = np.empty_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
                flat[i] = orig
                numeric[i] = (fp - fm) / (2.0 * h)
            a = analytic[name].reshape(-1)
            rel = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
            err = float(rel.max()) if rel.size else 0.0
            details[name] = err
            worst = max(worst, err)
    params.zero_grad()
    if return_details:
        return worst, details
    return worst
