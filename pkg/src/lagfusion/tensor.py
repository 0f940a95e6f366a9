"""Dense fp64 tensors with reverse-mode automatic differentiation.

Everything downstream (encoders, fusion models, training) is built on this
module: a Tensor wraps a float64 ndarray, and primitives executed inside an
active :class:`Tape` record enough state for one reverse sweep.  Tensors
created outside a tape are plain immutable values (inference mode), so the
forward path carries no graph overhead when gradients are not needed.

Numerics contract: every primitive validates that its output is finite and
raises :class:`NumericsError` otherwise. NaN/Inf is an error state, never a
silently propagated value.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "Tape",
    "NumericsError",
    "ShapeError",
    "concat",
    "matmul",
    "gelu",
    "sigmoid",
    "tanh",
    "softmax",
    "layer_norm",
    "dropout",
    "bce_with_logits",
]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Open-interval bounds for sigmoid at fp64 resolution.
_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


class NumericsError(FloatingPointError):
    """A primitive produced NaN/Inf, or a gradient went non-finite."""


class ShapeError(ValueError):
    """Operand shapes violate a primitive's contract."""


def _check_finite(data: np.ndarray, op: str) -> None:
    # One-pass cheap test first; the exact elementwise check only runs on
    # suspicion (a finite-valued sum can only overflow if values are already
    # astronomically large, which we also treat as an error state).
    s = float(np.sum(data))
    if math.isfinite(s):
        return
    if not np.isfinite(data).all():
        raise NumericsError(f"{op} produced non-finite values")
    raise NumericsError(f"{op} produced values large enough to overflow fp64 reduction")


class Tensor:
    """An n-d float64 value, optionally tracked for gradients.

    ``requires_grad`` marks leaves whose gradient should be accumulated by
    :meth:`Tape.backward`. Derived tensors inherit the flag from their
    parents. ``grad`` holds the accumulated gradient after a backward sweep.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- arithmetic sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        raise TypeError("tensor division is only supported by python scalars")

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- tape ---------------------------------------------------------------------

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of primitive applications for one reverse sweep.

    Nodes are appended in creation order, which is already a topological
    order, so the backward pass is a single reversed traversal. A tape is
    consumed by :meth:`backward`; reuse requires a fresh forward pass.
    """

    def __init__(self):
        self._nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must be exited in LIFO order"

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Accumulate gradients of a scalar ``loss`` into every reachable
        ``requires_grad`` leaf.

        Returns a map from ``id(tensor)`` to its gradient array (leaves only);
        each leaf's ``.grad`` is populated as well. The tape is cleared.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        leaf_grads: dict[int, np.ndarray] = {}
        for node in reversed(self._nodes):
            if node.grad is None or node._backward is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                # Accumulation rebinds rather than mutates, so views returned
                # by backward closures are safe to hold. Finiteness of the
                # accumulated leaf gradients is enforced by the optimizer.
                parent.grad = g if parent.grad is None else parent.grad + g
                if parent._backward is None:
                    leaf_grads[id(parent)] = parent.grad
        # Consume: recorded nodes are all op outputs (leaves only ever appear
        # as parents), so clearing them leaves leaf gradients in place.
        for node in self._nodes:
            node.grad = None
            node._backward = None
            node._parents = ()
        self._nodes.clear()
        return leaf_grads


def _record(out: Tensor, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if _TAPE_STACK and out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
        _TAPE_STACK[-1]._nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape numpy broadcast it up from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _mk(data: np.ndarray, parents: tuple[Tensor, ...], op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    return out


# -- arithmetic primitives ------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = _mk(a.data + b.data, (a, b), "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = _mk(a.data - b.data, (a, b), "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = _mk(a.data * b.data, (a, b), "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    out = _mk(a.data * c, (a,), "scale")

    def bw(g):
        return (g * c,)

    return _record(out, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading dimensions broadcast as in numpy.

    Backward: dA = dC @ B^T summed over broadcast axes, dB = A^T @ dC likewise.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = _mk(a.data @ b.data, (a, b), "matmul")

    def bw(g):
        da = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        db = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return da, db

    return _record(out, (a, b), bw)


def getitem(a: Tensor, idx) -> Tensor:
    # Basic indexing only (slices / ints); such selections never repeat an
    # element, so scatter-accumulation reduces to an in-place add.
    out = _mk(a.data[idx], (a,), "getitem")

    def bw(g):
        da = np.zeros_like(a.data)
        da[idx] += g
        return (da,)

    return _record(out, (a,), bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = _mk(a.data.reshape(shape), (a,), "reshape")

    def bw(g):
        return (g.reshape(a.shape),)

    return _record(out, (a,), bw)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    out = _mk(a.data.transpose(axes), (a,), "transpose")

    def bw(g):
        return (g.transpose(inv),)

    return _record(out, (a,), bw)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    out = _mk(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), bw)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = _mk(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum")

    def bw(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _record(out, (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# -- nonlinearities -------------------------------------------------------------


def gelu(a: Tensor) -> Tensor:
    """Exact-erf GELU: x * Phi(x) with Phi the standard normal CDF.

    The erf formulation (not the tanh approximation) is used so that the
    finite-difference oracles and any hand computations share one definition.
    """
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = _mk(x * phi, (a,), "gelu")

    def bw(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (phi + x * pdf),)

    return _record(out, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    """Numerically stable logistic, clipped to the open interval (0, 1).

    The clip only binds where fp64 would round to exactly 0.0 or 1.0
    (|x| beyond ~37), keeping the strict-range contract for finite inputs.
    """
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    np.clip(s, _SIG_LO, _SIG_HI, out=s)
    out = _mk(s, (a,), "sigmoid")

    def bw(g):
        return (g * s * (1.0 - s),)

    return _record(out, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out = _mk(t, (a,), "tanh")

    def bw(g):
        return (g * (1.0 - t * t),)

    return _record(out, (a,), bw)


def softmax(a: Tensor) -> Tensor:
    """Max-subtracted softmax along the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _mk(y, (a,), "softmax")

    def bw(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then apply an affine map.

    Uses the population variance (denominator d) with stabilizer ``eps``.
    A constant input (including the degenerate d=1 case) normalizes to zeros
    before the affine map because the centered values vanish while the
    eps-floored denominator stays positive.
    """
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match last axis {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = _mk(gain.data * xhat + bias.data, (x, gain, bias), "layer_norm")

    def bw(g):
        dgain = (g * xhat).sum(axis=tuple(range(g.ndim - 1)))
        dbias = g.sum(axis=tuple(range(g.ndim - 1)))
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgain, dbias

    return _record(out, (x, gain, bias), bw)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability ``rate`` and scale survivors by
    1/(1-rate) during training; identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    m = keep / (1.0 - rate)
    out = _mk(x.data * m, (x,), "dropout")

    def bw(g):
        return (g * m,)

    return _record(out, (x,), bw)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on raw logits, stable for large |z|.

    Per element: max(z, 0) - z*y + log1p(exp(-|z|)); gradient (sigma(z) - y)/n.
    ``targets`` is plain data, never differentiated.
    """
    z = logits.data
    y = np.asarray(targets, dtype=np.float64).reshape(z.shape)
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = _mk(np.asarray(per.mean()), (logits,), "bce_with_logits")
    n = z.size

    def bw(g):
        s = np.empty_like(z)
        pos = z >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        s[~pos] = ez / (1.0 + ez)
        return (g * (s - y) / n,)

    return _record(out, (logits,), bw)
