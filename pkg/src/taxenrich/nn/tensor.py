"""Float64 tensors with a reverse-mode tape.

Ops run eagerly on numpy arrays. While a :class:`Tape` is active, every op
whose inputs require gradients is appended to it; ``Tape.backward`` walks
the records in reverse creation order, which is a reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_ACTIVE: list["Tape"] = []


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Records ops for one forward pass; use as a context manager."""

    def __init__(self):
        self.records: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def backward(self, out: Tensor, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if out.data.size != 1:
                raise ValueError("backward needs a scalar output or an explicit seed gradient")
            seed = np.ones_like(out.data)
        out.grad = seed if out.grad is None else out.grad + seed
        for node in reversed(self.records):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        # release intermediates
        for node in self.records:
            node._backward = None
            node._parents = ()
            node.grad = None


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite value produced")
    out = Tensor(data)
    if _ACTIVE and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        _ACTIVE[-1].records.append(out)
    return out


# -- elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), back)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: _accumulate(a, g * mask))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: _accumulate(a, g * s * (1.0 - s)))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: _accumulate(a, g * (1.0 - t * t)))


# -- shape -----------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def back(g):
        if a.requires_grad:
            if b.ndim == 1:
                ga = np.multiply.outer(g, b.data)
            else:
                ga = g @ b.data.T
            _accumulate(a, ga)
        if b.requires_grad:
            if a.ndim == 1 and b.ndim == 1:
                gb = a.data * g
            elif a.ndim == 1:
                gb = np.outer(a.data, g)
            else:
                gb = a.data.T @ g
            _accumulate(b, gb)

    return _make(a.data @ b.data, (a, b), back)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    ax = axis % data.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def back(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                _accumulate(t, g[tuple(idx)])

    return _make(data, ts, back)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    shape = ts[0].shape
    axis = axis % (len(shape) + 1)
    expanded = [reshape(t, shape[:axis] + (1,) + shape[axis:]) for t in ts]
    return concat(expanded, axis=axis)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: _accumulate(a, g.reshape(old)))


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T, (a,), lambda g: _accumulate(a, g.T))


def getitem(a: Tensor, key) -> Tensor:
    if isinstance(key, Tensor):
        raise TypeError("index with arrays, not tensors")

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        _accumulate(a, full)

    return _make(np.array(a.data[key]), (a,), back)


def take(a: Tensor, idx, axis: int = 0) -> Tensor:
    """Row gather (embedding lookup)."""
    idx = np.asarray(idx, dtype=np.int64)
    if axis != 0:
        raise NotImplementedError("take only supports axis=0")

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _make(a.data[idx], (a,), back)


def scatter_add(a: Tensor, src, dst, n: int) -> Tensor:
    """Edge-list message sum: row ``dst[k]`` of the (n, ...) output accumulates row ``src[k]`` of ``a``.

    Equal to ``A @ a`` for the 0/1 matrix with ``A[dst[k], src[k]] = 1``.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if src.shape != dst.shape:
        raise ValueError("src and dst must have the same length")
    out = np.zeros((n,) + a.shape[1:])
    np.add.at(out, dst, a.data[src])

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, src, g[dst])
        _accumulate(a, full)

    return _make(out, (a,), back)


# -- reductions ------------------------------------------------------------------

def _expand(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    return _make(
        np.sum(a.data, axis=axis, keepdims=keepdims),
        (a,),
        lambda g: _accumulate(a, np.array(_expand(g, shape, axis, keepdims))),
    )


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def logsumexp(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    s = np.sum(shifted, axis=axis, keepdims=True)
    out_k = m + np.log(s)
    softmax = shifted / s
    out = out_k if keepdims else (np.squeeze(out_k, axis=axis) if axis is not None else out_k.reshape(()))

    def back(g):
        gk = g if (keepdims or axis is None) else np.expand_dims(g, axis)
        _accumulate(a, gk * softmax)

    return _make(out, (a,), back)


def l1_norm(a: Tensor, axis: int = -1) -> Tensor:
    sign = np.sign(a.data)
    return _make(
        np.sum(np.abs(a.data), axis=axis),
        (a,),
        lambda g: _accumulate(a, np.expand_dims(g, axis) * sign),
    )


def l2_norm(a: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm; gradient at the zero vector is taken as zero."""
    n = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    safe = np.where(n > 0, n, 1.0)

    def back(g):
        _accumulate(a, np.expand_dims(g, axis) * np.where(n > 0, a.data / safe, 0.0))

    return _make(np.squeeze(n, axis=axis), (a,), back)


def cosine(a, b, axis: int = -1) -> Tensor:
    """Cosine similarity along ``axis``; 0 (with zero gradient) if either side is a zero vector."""
    a, b = as_tensor(a), as_tensor(b)
    na = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    nb = np.sqrt(np.sum(b.data * b.data, axis=axis, keepdims=True))
    ok = (na > 0) & (nb > 0)
    na_s, nb_s = np.where(ok, na, 1.0), np.where(ok, nb, 1.0)
    dot = np.sum(a.data * b.data, axis=axis, keepdims=True)
    cos = np.where(ok, dot / (na_s * nb_s), 0.0)

    def back(g):
        gk = np.expand_dims(g, axis)
        if a.requires_grad:
            ga = np.where(ok, b.data / (na_s * nb_s) - cos * a.data / (na_s * na_s), 0.0)
            _accumulate(a, _unbroadcast(gk * ga, a.shape))
        if b.requires_grad:
            gb = np.where(ok, a.data / (na_s * nb_s) - cos * b.data / (nb_s * nb_s), 0.0)
            _accumulate(b, _unbroadcast(gk * gb, b.shape))

    return _make(np.squeeze(cos, axis=axis), (a, b), back)


# -- losses ----------------------------------------------------------------------

BCE_EPS = 1e-12


def bce_loss(p: Tensor, y) -> Tensor:
    """Elementwise binary cross-entropy on probabilities clamped to [eps, 1-eps]."""
    y = np.asarray(y, dtype=np.float64)
    pc = np.clip(p.data, BCE_EPS, 1.0 - BCE_EPS)
    inside = (p.data >= BCE_EPS) & (p.data <= 1.0 - BCE_EPS)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))

    def back(g):
        _accumulate(p, g * np.where(inside, -(y / pc) + (1.0 - y) / (1.0 - pc), 0.0))

    return _make(loss, (p,), back)
