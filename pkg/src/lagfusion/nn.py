"""Neural building blocks on top of the autodiff core.

Layers are plain objects holding named parameter tensors; a model collects
them into one flat ``name -> Tensor`` dict for the optimizer and for
checkpointing. Initialization: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for
weights and biases of every linear map, normal(0, 0.02) for positional and
CLS embeddings.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    NumericsError,
    Tensor,
    concat,
    dropout,
    gelu,
    layer_norm,
    matmul,
    reshape,
    scale,
    softmax,
    transpose,
)


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return parameter(rng.uniform(-bound, bound, size=shape))


def embedding_init(rng: np.random.Generator, shape: tuple[int, ...]) -> Tensor:
    return parameter(rng.normal(0.0, 0.02, size=shape))


class Linear:
    """Affine map on the last axis: x @ W + b."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.w = uniform_init(rng, (in_dim, out_dim), in_dim)
        self.b = uniform_init(rng, (out_dim,), in_dim)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.w) + self.b

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNorm:
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, eps=self.eps)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


class Mlp:
    """Two-layer GELU MLP with optional dropout after the hidden activation."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator,
                 drop: float = 0.0):
        self.fc1 = Linear(in_dim, hidden, rng)
        self.fc2 = Linear(hidden, out_dim, rng)
        self.drop = drop

    def __call__(self, x: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        h = gelu(self.fc1(x))
        if self.drop > 0.0 and training:
            h = dropout(h, self.drop, training, rng)
        return self.fc2(h)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {**self.fc1.params(f"{prefix}.fc1"), **self.fc2.params(f"{prefix}.fc2")}


class MultiHeadAttention:
    """Scaled dot-product attention with separate d x d projections per role.

    ``query`` is (B, q, d) and ``keys_values`` is (B, k, d); the per-head scale
    is 1/sqrt(d/heads). After a call, ``last_weights`` holds the (B, heads,
    q, k) attention matrices for inspection.
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads != 0:
            raise ValueError(f"model width {d} not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.head_dim = d // heads
        self.wq = uniform_init(rng, (d, d), d)
        self.wk = uniform_init(rng, (d, d), d)
        self.wv = uniform_init(rng, (d, d), d)
        self.wo = uniform_init(rng, (d, d), d)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor, b: int, n: int) -> Tensor:
        return transpose(reshape(x, (b, n, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, query: Tensor, keys_values: Tensor) -> Tensor:
        b, nq, _ = query.shape
        nk = keys_values.shape[1]
        q = self._split(matmul(query, self.wq), b, nq)
        k = self._split(matmul(keys_values, self.wk), b, nk)
        v = self._split(matmul(keys_values, self.wv), b, nk)
        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.head_dim))
        weights = softmax(scores)
        self.last_weights = weights.data
        ctx = matmul(weights, v)
        ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (b, nq, self.d))
        return matmul(ctx, self.wo)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.wq": self.wq,
            f"{prefix}.wk": self.wk,
            f"{prefix}.wv": self.wv,
            f"{prefix}.wo": self.wo,
        }


class EncoderLayer:
    """Pre-norm transformer block: self-attention then a 4d GELU MLP, with
    residual connections and dropout on both branches."""

    def __init__(self, d: int, heads: int, drop: float, rng: np.random.Generator):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.mlp = Mlp(d, 4 * d, d, rng)
        self.drop = drop

    def __call__(self, x: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        h = self.ln1(x)
        a = self.attn(h, h)
        if self.drop > 0.0 and training:
            a = dropout(a, self.drop, training, rng)
        x = x + a
        m = self.mlp(self.ln2(x))
        if self.drop > 0.0 and training:
            m = dropout(m, self.drop, training, rng)
        return x + m

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {
            **self.ln1.params(f"{prefix}.ln1"),
            **self.attn.params(f"{prefix}.attn"),
            **self.ln2.params(f"{prefix}.ln2"),
            **self.mlp.params(f"{prefix}.mlp"),
        }


class AdamW:
    """AdamW with decoupled weight decay and bias-corrected moments.

    The decay is applied directly to the parameter (p *= 1 - lr*wd) before the
    moment update, never folded into the gradient.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        """Apply one update from each parameter's accumulated ``.grad``.

        A parameter with no gradient this step (unreachable from the loss)
        is treated as zero-gradient: it still decays and its moments shrink.
        """
        for name, p in self.params.items():
            g = p.grad
            if g is not None and not np.isfinite(g).all():
                raise NumericsError(f"non-finite gradient for parameter '{name}' at step {self.t + 1}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
