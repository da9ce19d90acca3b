"""Minimal reverse-mode autograd over float64 numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure propagating the incoming gradient back to them.  Only what the
recogniser and the bias stack need is implemented.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible."""


class ConfigurationError(ValueError):
    """Raised on invalid model or run configuration."""


class NumericError(ArithmeticError):
    """Raised when a value that must be finite is not."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable ``requires_grad`` tensor."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior buffers are not needed once propagated
                if node._parents and node is not self:
                    node.grad = None

    # -- operator sugar ---------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

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

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), back)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: x._accum(g * (1.0 - y * y)))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(y, (x,), lambda g: x._accum(g * y * (1.0 - y)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: x._accum(g * mask))


def tabs(x: Tensor) -> Tensor:
    s = np.sign(x.data)
    return _result(np.abs(x.data), (x,), lambda g: x._accum(g * s))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _result(y, (x,), lambda g: x._accum(g * y))


def log(x: Tensor) -> Tensor:
    return _result(np.log(x.data), (x,), lambda g: x._accum(g / x.data))


# -- shape ---------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: x._accum(g.reshape(old)))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _result(np.transpose(x.data, axes), (x,), lambda g: x._accum(np.transpose(g, inv)))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(Ellipsis), type(None))) for i in items)


def getitem(x: Tensor, idx) -> Tensor:
    basic = _is_basic(idx)

    def back(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        x._accum(full)

    return _result(x.data[idx], (x,), back)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        for x, piece in zip(xs, np.split(g, cuts, axis=axis)):
            if x.requires_grad:
                x._accum(piece)

    return _result(np.concatenate([x.data for x in xs], axis=axis), xs, back)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]

    def back(g):
        for i, x in enumerate(xs):
            if x.requires_grad:
                x._accum(np.take(g, i, axis=axis))

    return _result(np.stack([x.data for x in xs], axis=axis), xs, back)


# -- reductions ----------------------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g, x.shape))

    return _result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / float(n))


# -- linear algebra ------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy broadcasting over leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}") from exc

    def back(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if b.ndim > 1 else np.multiply.outer(g, b.data)
            a._accum(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.multiply.outer(a.data, g)
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accum(_unbroadcast(gb, b.shape))

    return _result(out, (a, b), back)


# -- normalisation / probabilities ---------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.shape[axis] == 0:
        raise DimensionError(f"softmax over empty axis {axis} of shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    y = np.exp(z)
    y /= y.sum(axis=axis, keepdims=True)

    def back(g):
        x._accum(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _result(y, (x,), back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def back(g):
        x._accum(g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return _result(y, (x,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def back(g):
        if gain.requires_grad:
            gain._accum(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accum(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gx = g * gain.data
            n = x.shape[-1]
            x._accum(inv / n * (n * gx - gx.sum(-1, keepdims=True)
                                - xhat * (gx * xhat).sum(-1, keepdims=True)))

    return _result(out, (x, gain, bias), back)


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        table._accum(full)

    return _result(table.data[ids], (table,), back)


def cross_entropy(logits: Tensor, targets, ignore_index: int | None = None) -> Tensor:
    """Mean token-level negative log-likelihood.

    ``logits`` may carry any number of leading dimensions; ``targets`` must
    match them.  Positions equal to ``ignore_index`` contribute nothing; if
    every position is ignored the loss is 0 with zero gradient.
    """
    targets = np.asarray(targets, dtype=np.int64)
    V = logits.shape[-1]
    flat = logits.data.reshape(-1, V)
    t = targets.reshape(-1)
    keep = np.ones_like(t, dtype=bool) if ignore_index is None else t != ignore_index
    if np.any(t[keep] < 0) or np.any(t[keep] >= V):
        raise DimensionError(f"cross_entropy: target id outside [0, {V})")
    count = int(keep.sum())
    z = flat - flat.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.nonzero(keep)[0]
    loss = -logp[rows, t[rows]].sum() / count if count else 0.0

    def back(g):
        full = np.zeros_like(flat)
        if count:
            full[rows] = np.exp(logp[rows])
            full[rows, t[rows]] -= 1.0
            full *= float(g) / count
        logits._accum(full.reshape(logits.shape))

    return _result(np.asarray(loss), (logits,), back)


# -- parameters ----------------------------------------------------------------

class Parameter(Tensor):
    """Named leaf tensor; ``trainable`` toggles gradient tracking."""

    __slots__ = ()

    def __init__(self, name: str, value, trainable: bool = True):
        super().__init__(value, requires_grad=trainable, name=name)

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self.requires_grad = bool(flag)
        if not flag:
            self.grad = None


class ModelParams:
    """Ordered, name-unique collection of :class:`Parameter`.

    Names are dotted paths; the first component is the group
    (``backbone`` or ``bias``).
    """

    def __init__(self, params: Iterable[Parameter] = ()):
        self._p: dict[str, Parameter] = {}
        for p in params:
            self.add(p)

    def add(self, p: Parameter) -> Parameter:
        if p.name in self._p:
            raise KeyError(f"duplicate parameter name {p.name!r}")
        self._p[p.name] = p
        return p

    def new(self, name: str, value, trainable: bool = True) -> Parameter:
        return self.add(Parameter(name, value, trainable))

    def __getitem__(self, name: str) -> Parameter:
        return self._p[name]

    def __contains__(self, name: str) -> bool:
        return name in self._p

    def __iter__(self):
        return iter(self._p.values())

    def __len__(self) -> int:
        return len(self._p)

    def names(self) -> list[str]:
        return list(self._p)

    def group(self, prefix: str) -> list[Parameter]:
        prefix = prefix.rstrip(".") + "."
        return [p for n, p in self._p.items() if n.startswith(prefix)]

    def set_trainable(self, prefix: str, flag: bool) -> None:
        for p in self.group(prefix):
            p.trainable = flag

    def trainable(self) -> list[Parameter]:
        return [p for p in self._p.values() if p.trainable]

    def zero_grad(self) -> None:
        for p in self._p.values():
            p.grad = None

    def merged(self, other: "ModelParams") -> "ModelParams":
        return ModelParams(list(self) + list(other))

    def snapshot(self, prefix: str | None = None) -> dict[str, np.ndarray]:
        items = self._p.items() if prefix is None else ((p.name, p) for p in self.group(prefix))
        return {n: p.data.copy() for n, p in items}


def init_uniform(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return init_uniform(rng, (fan_in, fan_out), math.sqrt(6.0 / (fan_in + fan_out)))


# -- optimisation --------------------------------------------------------------

class Adam:
    """Adam with bias correction; updates only parameters holding a gradient."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.98), eps: float = 1e-9,
                 clip_norm: float | None = 5.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {id(p): np.zeros_like(p.data) for p in self.params}
        self.v = {id(p): np.zeros_like(p.data) for p in self.params}

    def step(self) -> float:
        grads = [(p, p.grad) for p in self.params if p.trainable and p.grad is not None]
        norm = math.sqrt(sum(float((g * g).sum()) for _, g in grads))
        if not math.isfinite(norm):
            raise NumericError("non-finite gradient norm")
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g in grads:
            g = g * scale
            m, v = self.m[id(p)], self.v[id(p)]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# -- gradient checking ---------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-4,
               max_entries: int | None = None, rng: np.random.Generator | None = None,
               floor: float = 1e-6) -> float:
    """Compare analytic gradients of scalar ``f()`` with central differences.

    Returns the maximum relative error ``2|a - n| / max(floor, |a| + |n|)``;
    ``floor`` keeps entries whose true gradient is ~0 from dominating.  Parameters that
    do not require grad are reported as having gradient zero, and their
    numeric derivative is not taken.  ``max_entries`` subsamples large
    tensors.
    """
    for p in params:
        p.grad = None
    out = f()
    if not np.all(np.isfinite(out.data)):
        raise NumericError("grad_check: f() is not finite")
    out.backward()
    worst = 0.0
    for p in params:
        if not p.requires_grad:
            if p.grad is not None and np.any(p.grad != 0):
                return math.inf
            continue
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            with no_grad():
                fp = float(f().data)
            flat[i] = old - h
            with no_grad():
                fm = float(f().data)
            flat[i] = old
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError("grad_check: f() is not finite under perturbation")
            num = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[i]
            err = 2.0 * abs(a - num) / max(floor, abs(a) + abs(num))
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
