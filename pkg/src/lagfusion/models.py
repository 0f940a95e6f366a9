"""Model zoo: the gated cross-modal fusion model, its lag-heuristic controls,
and the baseline architectures, all under one forward interface.

Every kind shares the d=32 budget, fp64 tensors, and a 2-layer GELU head of
hidden width 2(d + d_w). Multimodal kinds that consume the web-scalar vector
receive the modality lag appended to it as tau/60; the unimodal references
(price_tx, text_only) see only their own modality. The fusion kinds
additionally receive tau/60 inside their gate.

Kinds:
    price_tx       transformer over the price window, CLS head (price only)
    text_only      text embedding projection + head (text only)
    price_web      price and web-scalar late fusion
    early_fusion   raw concatenation of all inputs into a shared head
    bilstm         bidirectional LSTM price encoder fused by concatenation
    mult_lite      one text-to-price and one price-to-text attention block
    tfn            outer-product fusion of unimodal subspaces
    gated_xattn    text-conditioned price attention + conditional trust gate
    fixed_decay    grounding path with g = exp(-lambda * tau/60)
    learned_decay  grounding path with g = sigmoid(a * tau/60 + b)
    hard_filter    grounding path with g = 1[tau <= cutoff]
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import storage
from .data import AlignedSample, AlignedDataset, EMBEDDING_DIM, N_FEATURES, N_WEB_SCALARS
from .nn import AdamW, EncoderLayer, LayerNorm, Linear, Mlp, MultiHeadAttention, \
    embedding_init, parameter, uniform_init
from .tensor import Tensor, bce_with_logits, concat, matmul, reshape, sigmoid, tanh

MODEL_KINDS = (
    "price_tx", "text_only", "price_web", "early_fusion", "bilstm",
    "mult_lite", "tfn", "gated_xattn", "fixed_decay", "learned_decay", "hard_filter",
)

_CONTROL_KINDS = ("fixed_decay", "learned_decay", "hard_filter")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    kind: str
    d: int = 32
    price_layers: int = 2
    heads: int = 4
    dropout: float = 0.3
    gate_hidden: int = 32
    window_len: int = 64
    price_features: int = N_FEATURES
    text_dim: int = EMBEDDING_DIM
    web_dim: int = N_WEB_SCALARS
    decay_rate: float = 1.0       # fixed_decay lambda (per hour of lag)
    stale_cutoff: float = 60.0    # hard_filter boundary, minutes, inclusive
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind '{self.kind}'; known: {', '.join(MODEL_KINDS)}")
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} must be divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.decay_rate < 0.0:
            raise ConfigError(f"decay rate must be >= 0, got {self.decay_rate}")

    @property
    def d_w(self) -> int:
        # Web branch width is pinned to half the gate hidden width.
        return self.gate_hidden // 2

    @property
    def head_hidden(self) -> int:
        return 2 * (self.d + self.d_w)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class Batch:
    """Model inputs for B samples. ``web`` is expected normalized."""

    price: np.ndarray          # (B, L, F)
    text: np.ndarray           # (B, 384)
    web: np.ndarray            # (B, 13)
    tau: np.ndarray            # (B,) minutes
    label: np.ndarray          # (B,)
    future_return: np.ndarray  # (B,)
    ids: np.ndarray            # (B,) sample indices

    def __len__(self) -> int:
        return len(self.tau)

    @classmethod
    def from_dataset(cls, ds: AlignedDataset, idx: np.ndarray,
                     web_transform=None) -> "Batch":
        idx = np.asarray(idx)
        web = ds.web_scalars[idx]
        if web_transform is not None:
            web = web_transform(web)
        return cls(price=ds.price_window[idx], text=ds.text_embedding[idx], web=web,
                   tau=ds.tau_lag[idx], label=ds.label[idx].astype(np.float64),
                   future_return=ds.future_return[idx], ids=idx)

    @classmethod
    def from_sample(cls, s: AlignedSample, web_transform=None) -> "Batch":
        web = s.web_scalars[None, :]
        if web_transform is not None:
            web = web_transform(web)
        return cls(price=s.price_window[None], text=s.text_embedding[None], web=web,
                   tau=np.array([s.tau_lag]), label=np.array([float(s.label)]),
                   future_return=np.array([s.future_return]), ids=np.array([0]))


@dataclass
class ForwardOutput:
    logit: float
    probability: float
    gate_mean: float | None = None
    gate_vector: np.ndarray | None = None
    attention_weights: np.ndarray | None = None


def _kind_rng(seed: int, kind: str, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, zlib.crc32(kind.encode()), stream)))


def _tau_hours(batch: Batch) -> np.ndarray:
    return (batch.tau / 60.0)[:, None]


def _web_with_tau(batch: Batch) -> np.ndarray:
    return np.concatenate([batch.web, _tau_hours(batch)], axis=1)


class PriceEncoder:
    """Project the window to width d, add learnable positions, prepend a CLS
    token, and run pre-norm transformer layers. Returns the CLS summary and
    the window token states."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        d = config.d
        self.window_len = config.window_len
        self.proj = Linear(config.price_features, d, rng)
        self.pos = embedding_init(rng, (config.window_len, d))
        self.cls = embedding_init(rng, (1, 1, d))
        self.layers = [EncoderLayer(d, config.heads, config.dropout, rng)
                       for _ in range(config.price_layers)]

    def __call__(self, price: np.ndarray, training: bool,
                 rng: np.random.Generator | None) -> tuple[Tensor, Tensor]:
        b, L, _ = price.shape
        if L != self.window_len:
            raise ConfigError(f"price window length {L} does not match configured {self.window_len}")
        x = self.proj(Tensor(price)) + self.pos
        cls = self.cls + Tensor(np.zeros((b, 1, x.shape[2])))
        tokens = concat([cls, x], axis=1)
        for layer in self.layers:
            tokens = layer(tokens, training=training, rng=rng)
        return tokens[:, 0, :], tokens[:, 1:, :]

    def params(self, prefix: str = "price_enc") -> dict[str, Tensor]:
        out = {**self.proj.params(f"{prefix}.proj"),
               f"{prefix}.pos": self.pos, f"{prefix}.cls": self.cls}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"{prefix}.layer{i}"))
        return out


class TextEncoder:
    """h_t = LN(W_text e)."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.proj = Linear(config.text_dim, config.d, rng)
        self.ln = LayerNorm(config.d)

    def __call__(self, text: np.ndarray) -> Tensor:
        return self.ln(self.proj(Tensor(text)))

    def params(self, prefix: str = "text_enc") -> dict[str, Tensor]:
        return {**self.proj.params(f"{prefix}.proj"), **self.ln.params(f"{prefix}.ln")}


class WebEncoder:
    """Two-layer GELU MLP from the web scalars to the d_w trust features."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, in_dim: int):
        self.mlp = Mlp(in_dim, config.gate_hidden, config.d_w, rng)

    def __call__(self, web: np.ndarray) -> Tensor:
        return self.mlp(Tensor(web))

    def params(self, prefix: str = "web_enc") -> dict[str, Tensor]:
        return self.mlp.params(f"{prefix}.mlp")


class FusionModel:
    """Shared plumbing: parameter collection, loss, prediction, persistence."""

    kind: str

    def __init__(self, config: ModelConfig):
        self.config = config
        self._init_rng = _kind_rng(config.seed, config.kind, 0)
        self._drop_rng = _kind_rng(config.seed, config.kind, 1)
        self.last_gate: np.ndarray | None = None
        self.last_attention: np.ndarray | None = None

    # Subclasses implement forward(batch, training) -> Tensor of shape (B, 1).

    def params(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def forward(self, batch: Batch, training: bool = False) -> Tensor:
        raise NotImplementedError

    def loss(self, batch: Batch, training: bool = True) -> Tensor:
        logits = self.forward(batch, training=training)
        return bce_with_logits(logits, batch.label[:, None])

    def predict_proba(self, batch: Batch) -> np.ndarray:
        logits = self.forward(batch, training=False)
        return sigmoid(logits).data[:, 0]

    def forward_sample(self, sample_batch: Batch) -> ForwardOutput:
        logits = self.forward(sample_batch, training=False)
        prob = sigmoid(logits).data[0, 0]
        return ForwardOutput(
            logit=float(logits.data[0, 0]),
            probability=float(prob),
            gate_mean=float(self.last_gate[0].mean()) if self.last_gate is not None else None,
            gate_vector=self.last_gate[0].copy() if self.last_gate is not None else None,
            attention_weights=(self.last_attention[0].copy()
                               if self.last_attention is not None else None),
        )

    def n_params(self) -> int:
        return sum(p.size for p in self.params().values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params().items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.params()
        if set(arrays) != set(params):
            missing = set(params) ^ set(arrays)
            raise ConfigError(f"checkpoint parameter names do not match model: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ConfigError(f"checkpoint shape mismatch for '{name}': "
                                  f"{arr.shape} vs {p.data.shape}")
            p.data = arr.copy()


class GatedCrossAttnModel(FusionModel):
    """Text-conditioned price attention with a learned per-dimension trust gate.

    The text summary queries the price token sequence; the layer-normalized
    attention output is the grounded context h_c. A gate MLP consumes
    [h_p, h_c, h_p - h_c, h_w, tau/60] and emits g in (0,1)^d, and the fused
    state is the residual h_p + g * h_c, so a closed gate recovers the
    price-only path exactly. The head sees [h_f, h_w], width d + d_w.
    """

    kind = "gated_xattn"

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = self._init_rng
        d, d_w = config.d, config.d_w
        self.price_enc = PriceEncoder(config, rng)
        self.text_enc = TextEncoder(config, rng)
        self.web_enc = WebEncoder(config, rng, in_dim=config.web_dim)
        self.xattn = MultiHeadAttention(d, config.heads, rng)
        self.ln_ctx = LayerNorm(d)
        self.gate = Mlp(3 * d + d_w + 1, config.gate_hidden, d, rng)
        head_in = d + d_w
        assert head_in != 2 * d, "head input must be d + d_w, never 2d"
        self.ln_head = LayerNorm(head_in)
        self.head = Mlp(head_in, config.head_hidden, 1, rng, drop=config.dropout)

    def forward(self, batch: Batch, training: bool = False,
                force_gate_zero: bool = False, zero_context: bool = False) -> Tensor:
        rng = self._drop_rng
        h_p, tokens = self.price_enc(batch.price, training, rng)
        h_t = self.text_enc(batch.text)
        h_w = self.web_enc(batch.web)
        query = reshape(h_t, (len(batch), 1, self.config.d))
        ctx = self.ln_ctx(reshape(self.xattn(query, tokens), (len(batch), self.config.d)))
        self.last_attention = self.xattn.last_weights.mean(axis=1)[:, 0, :]
        if zero_context:
            ctx = ctx * Tensor(np.zeros((len(batch), 1)))
        gate_in = concat([h_p, ctx, h_p - ctx, h_w, Tensor(_tau_hours(batch))], axis=1)
        g = sigmoid(self.gate(gate_in))
        if force_gate_zero:
            g = g * Tensor(np.zeros((len(batch), 1)))
        self.last_gate = g.data.copy()
        h_f = h_p + g * ctx
        fused = self.ln_head(concat([h_f, h_w], axis=1))
        return self.head(fused, training=training, rng=rng)

    def params(self) -> dict[str, Tensor]:
        return {
            **self.price_enc.params(),
            **self.text_enc.params(),
            **self.web_enc.params(),
            **self.xattn.params("xattn"),
            **self.ln_ctx.params("ln_ctx"),
            **self.gate.params("gate"),
            **self.ln_head.params("ln_head"),
            **self.head.params("head"),
        }


class DecayControlModel(FusionModel):
    """Same grounding path as the gated model, but the trust gate is replaced
    by a lag-only schedule: fixed exponential decay, a learned scalar decay,
    or a hard staleness filter (inclusive at the cutoff)."""

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        self.kind = config.kind
        rng = self._init_rng
        d, d_w = config.d, config.d_w
        self.price_enc = PriceEncoder(config, rng)
        self.text_enc = TextEncoder(config, rng)
        self.web_enc = WebEncoder(config, rng, in_dim=config.web_dim)
        self.xattn = MultiHeadAttention(d, config.heads, rng)
        self.ln_ctx = LayerNorm(d)
        if config.kind == "learned_decay":
            self.decay_a = parameter(np.array([-1.0]))
            self.decay_b = parameter(np.array([1.0]))
        head_in = d + d_w
        assert head_in != 2 * d, "head input must be d + d_w, never 2d"
        self.ln_head = LayerNorm(head_in)
        self.head = Mlp(head_in, config.head_hidden, 1, rng, drop=config.dropout)

    def _gate(self, batch: Batch) -> Tensor:
        tau_h = _tau_hours(batch)
        if self.kind == "fixed_decay":
            return Tensor(np.exp(-self.config.decay_rate * tau_h))
        if self.kind == "learned_decay":
            return sigmoid(Tensor(tau_h) * self.decay_a + self.decay_b)
        return Tensor((batch.tau[:, None] <= self.config.stale_cutoff).astype(np.float64))

    def forward(self, batch: Batch, training: bool = False) -> Tensor:
        rng = self._drop_rng
        h_p, tokens = self.price_enc(batch.price, training, rng)
        h_t = self.text_enc(batch.text)
        h_w = self.web_enc(batch.web)
        query = reshape(h_t, (len(batch), 1, self.config.d))
        ctx = self.ln_ctx(reshape(self.xattn(query, tokens), (len(batch), self.config.d)))
        self.last_attention = self.xattn.last_weights.mean(axis=1)[:, 0, :]
        g = self._gate(batch)
        self.last_gate = np.broadcast_to(g.data, (len(batch), self.config.d)).copy()
        h_f = h_p + g * ctx
        fused = self.ln_head(concat([h_f, h_w], axis=1))
        return self.head(fused, training=training, rng=rng)

    def params(self) -> dict[str, Tensor]:
        out = {
            **self.price_enc.params(),
            **self.text_enc.params(),
            **self.web_enc.params(),
            **self.xattn.params("xattn"),
            **self.ln_ctx.params("ln_ctx"),
            **self.ln_head.params("ln_head"),
            **self.head.params("head"),
        }
        if self.kind == "learned_decay":
            out["decay.a"] = self.decay_a
            out["decay.b"] = self.decay_b
        return out


class PriceTransformerModel(FusionModel):
    """Price-only transformer with a CLS prediction head."""

    kind = "price_tx"

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = self._init_rng
        self.price_enc = PriceEncoder(config, rng)
        self.ln_head = LayerNorm(config.d)
        self.head = Mlp(config.d, config.head_hidden, 1, rng, drop=config.dropout)

    def forward(self, batch: Batch, training: bool = False) -> Tensor:
        rng = self._drop_rng
        h_p, _ = self.price_enc(batch.price, training, rng)
        return self.head(self.ln_head(h_p), training=training, rng=rng)

    def params(self) -> dict[str, Tensor]:
        return {**self.price_enc.params(), **self.ln_head.params("ln_head"),
                **self.head.params("head")}


class TextOnlyModel(FusionModel):
    """Frozen-embedding consumer: text projection + head, no price, no web."""

    kind = "text_only"

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = self._init_rng
        self.text_enc = TextEncoder(config, rng)
        self.head = Mlp(config.d, config.head_hidden, 1, rng, drop=config.dropout)

    def forward(self, batch: Batch, training: bool = False) -> Tensor:
        return self.head(self.text_enc(batch.text), training=training, rng=self._drop_rng)

    def params(self) -> dict[str, Tensor]:
        return {**self.text_enc.params(), **self.head.params("head")}


class PriceWebModel(FusionModel):
    """Price and web-scalar late fusion (no free-form text)."""

    kind = "price_web"

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = self._init_rng
        self.price_enc = PriceEncoder(config, rng)
        self.web_enc = WebEncoder(config, rng, in_dim=config.web_dim + 1)
        self.ln_head = LayerNorm(config.d + config.d_w)
        self.head = Mlp(config.d + config.d_w, config.head_hidden, 1, rng, drop=config.dropout)

    def forward(self, batch: Batch, training: bool = False) -> Tensor:
        rng = self._drop_rng
        h_p, _ = self.price_enc(batch.price, training, rng)
        h_w = self.web_enc(_web_with_tau(batch))
        fused = self.ln_head(concat([h_p, h_w], axis=1))
        return self.head(fused, training=training, rng=rng)

    def params(self) -> dict[str, Tensor]:
        return {**self.price_enc.params(), **self.web_enc.params(),
                **self.ln_head.params("ln_head"), **self.head.params("head")}


class EarlyFusionModel(FusionModel):
    """Raw concatenation of the flattened window, embedding and web vector
    into one shared head."""

    kind = "early_fusion"

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = self._init_rng
        in_dim = config.window_len * config.price_features + config.text_dim + config.web_dim + 1
        self.ln_in = LayerNorm(in_dim)
        self.head = Mlp(in_dim, config.head_hidden, 1, rng, drop=config.dropout)

    def forward(self, batch: Batch, training: bool = False) -> Tensor:
        flat = batch.price.reshape(len(batch), -1)
        x = Tensor(np.concatenate([flat, batch.text, _web_with_tau(batch)], axis=1))
        return self.head(self.ln_in(x), training=training, rng=self._drop_rng)

    def params(self) -> dict[str, Tensor]:
        return {**self.ln_in.params("ln_in"), **self.head.params("head")}


def _lstm_param_count(features: int, hidden: int) -> int:
    return 2 * (features * 4 * hidden + hidden * 4 * hidden + 4 * hidden)


class BiLstmModel(FusionModel):
    """Bidirectional LSTM price encoder fused with text and web projections by
    concatenation. The hidden size is chosen so the total parameter count is
    closest to the price_tx model under the same config."""

    kind = "bilstm"

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = self._init_rng
        d, d_w, F = config.d, config.d_w, config.price_features
        target = PriceTransformerModel(config).n_params()
        fixed = self._fixed_param_count(config)
        self.hidden = min(range(2, 129),
                          key=lambda h: abs(_lstm_param_count(F, h) + 2 * h * d + d + fixed - target))
        H = self.hidden
        self.wx_f = uniform_init(rng, (F, 4 * H), F)
        self.wh_f = uniform_init(rng, (H, 4 * H), H)
        self.b_f = uniform_init(rng, (4 * H,), H)
        self.wx_b = uniform_init(rng, (F, 4 * H), F)
        self.wh_b = uniform_init(rng, (H, 4 * H), H)
        self.b_b = uniform_init(rng, (4 * H,), H)
        self.proj = Linear(2 * H, d, rng)
        self.text_enc = TextEncoder(config, rng)
        self.web_enc = WebEncoder(config, rng, in_dim=config.web_dim + 1)
        self.ln_head = LayerNorm(2 * d + d_w)
        self.head = Mlp(2 * d + d_w, config.head_hidden, 1, rng, drop=config.dropout)

    @staticmethod
    def _fixed_param_count(config: ModelConfig) -> int:
        d, d_w, gh = config.d, config.d_w, config.gate_hidden
        text = config.text_dim * d + d + 2 * d
        web = (config.web_dim + 1) * gh + gh + gh * d_w + d_w
        head_in = 2 * d + d_w
        head = 2 * head_in + head_in * config.head_hidden + config.head_hidden \
            + config.head_hidden * 1 + 1
        return text + web + head

    def _run_direction(self, price: np.ndarray, wx: Tensor, wh: Tensor, b: Tensor,
                       reverse: bool) -> Tensor:
        B, L, _ = price.shape
        H = self.hidden
        h = Tensor(np.zeros((B, H)))
        c = Tensor(np.zeros((B, H)))
        steps = range(L - 1, -1, -1) if reverse else range(L)
        for t in steps:
            z = matmul(Tensor(price[:, t, :]), wx) + matmul(h, wh) + b
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H:2 * H])
            g = tanh(z[:, 2 * H:3 * H])
            o = sigmoid(z[:, 3 * H:])
            c = f * c + i * g
            h = o * tanh(c)
        return h

    def forward(self, batch: Batch, training: bool = False) -> Tensor:
        rng = self._drop_rng
        h_fwd = self._run_direction(batch.price, self.wx_f, self.wh_f, self.b_f, reverse=False)
        h_bwd = self._run_direction(batch.price, self.wx_b, self.wh_b, self.b_b, reverse=True)
        h_p = self.proj(concat([h_fwd, h_bwd], axis=1))
        h_t = self.text_enc(batch.text)
        h_w = self.web_enc(_web_with_tau(batch))
        fused = self.ln_head(concat([h_p, h_t, h_w], axis=1))
        return self.head(fused, training=training, rng=rng)

    def params(self) -> dict[str, Tensor]:
        return {
            "lstm.wx_f": self.wx_f, "lstm.wh_f": self.wh_f, "lstm.b_f": self.b_f,
            "lstm.wx_b": self.wx_b, "lstm.wh_b": self.wh_b, "lstm.b_b": self.b_b,
            **self.proj.params("lstm.proj"),
            **self.text_enc.params(),
            **self.web_enc.params(),
            **self.ln_head.params("ln_head"),
            **self.head.params("head"),
        }


class CrossAttnPoolModel(FusionModel):
    """Bidirectional cross-modal attention with pooled classification: one
    text-to-price and one price-to-text block over projected price tokens,
    mean-pooled and concatenated with the web features."""

    kind = "mult_lite"

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = self._init_rng
        d, d_w = config.d, config.d_w
        self.proj = Linear(config.price_features, d, rng)
        self.pos = embedding_init(rng, (config.window_len, d))
        self.text_enc = TextEncoder(config, rng)
        self.web_enc = WebEncoder(config, rng, in_dim=config.web_dim + 1)
        self.attn_tp = MultiHeadAttention(d, config.heads, rng)
        self.attn_pt = MultiHeadAttention(d, config.heads, rng)
        # A single text key would make the price-to-text softmax constant and
        # its query/key projections dead; the learned null token gives the
        # block a no-op alternative to attend to.
        self.null_tok = embedding_init(rng, (1, 1, d))
        self.ln_head = LayerNorm(2 * d + d_w)
        self.head = Mlp(2 * d + d_w, config.head_hidden, 1, rng, drop=config.dropout)

    def forward(self, batch: Batch, training: bool = False) -> Tensor:
        rng = self._drop_rng
        b = len(batch)
        d = self.config.d
        tokens = self.proj(Tensor(batch.price)) + self.pos
        h_t = self.text_enc(batch.text)
        text_tok = reshape(h_t, (b, 1, d))
        t2p = reshape(self.attn_tp(text_tok, tokens), (b, d))
        self.last_attention = self.attn_tp.last_weights.mean(axis=1)[:, 0, :]
        null = self.null_tok + Tensor(np.zeros((b, 1, d)))
        p2t = self.attn_pt(tokens, concat([text_tok, null], axis=1)).mean(axis=1)
        h_w = self.web_enc(_web_with_tau(batch))
        fused = self.ln_head(concat([t2p, p2t, h_w], axis=1))
        return self.head(fused, training=training, rng=rng)

    def params(self) -> dict[str, Tensor]:
        return {
            **self.proj.params("price_proj"), "price_pos": self.pos,
            "null_tok": self.null_tok,
            **self.text_enc.params(),
            **self.web_enc.params(),
            **self.attn_tp.params("attn_tp"),
            **self.attn_pt.params("attn_pt"),
            **self.ln_head.params("ln_head"),
            **self.head.params("head"),
        }


class TensorFusionModel(FusionModel):
    """Outer-product fusion: (h_p ⊕ 1) x ([h_t; h_w] ⊕ 1), flattened into the
    head so unimodal, bimodal and trimodal interactions are all explicit."""

    kind = "tfn"

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = self._init_rng
        d, d_w = config.d, config.d_w
        self.price_enc = PriceEncoder(config, rng)
        self.text_enc = TextEncoder(config, rng)
        self.web_enc = WebEncoder(config, rng, in_dim=config.web_dim + 1)
        fused_dim = (d + 1) * (d + d_w + 1)
        self.ln_head = LayerNorm(fused_dim)
        self.head = Mlp(fused_dim, config.head_hidden, 1, rng, drop=config.dropout)

    def forward(self, batch: Batch, training: bool = False) -> Tensor:
        rng = self._drop_rng
        b = len(batch)
        d, d_w = self.config.d, self.config.d_w
        h_p, _ = self.price_enc(batch.price, training, rng)
        h_t = self.text_enc(batch.text)
        h_w = self.web_enc(_web_with_tau(batch))
        ones = Tensor(np.ones((b, 1)))
        z1 = reshape(concat([h_p, ones], axis=1), (b, d + 1, 1))
        z2 = reshape(concat([h_t, h_w, ones], axis=1), (b, 1, d + d_w + 1))
        outer = reshape(matmul(z1, z2), (b, (d + 1) * (d + d_w + 1)))
        return self.head(self.ln_head(outer), training=training, rng=rng)

    def params(self) -> dict[str, Tensor]:
        return {
            **self.price_enc.params(),
            **self.text_enc.params(),
            **self.web_enc.params(),
            **self.ln_head.params("ln_head"),
            **self.head.params("head"),
        }


_MODEL_CLASSES = {
    "price_tx": PriceTransformerModel,
    "text_only": TextOnlyModel,
    "price_web": PriceWebModel,
    "early_fusion": EarlyFusionModel,
    "bilstm": BiLstmModel,
    "mult_lite": CrossAttnPoolModel,
    "tfn": TensorFusionModel,
    "gated_xattn": GatedCrossAttnModel,
    "fixed_decay": DecayControlModel,
    "learned_decay": DecayControlModel,
    "hard_filter": DecayControlModel,
}


def build_model(config: ModelConfig) -> FusionModel:
    try:
        cls = _MODEL_CLASSES[config.kind]
    except KeyError:
        raise ConfigError(f"unknown model kind '{config.kind}'") from None
    return cls(config)


def make_optimizer(model: FusionModel, lr: float = 1e-3, weight_decay: float = 1e-3) -> AdamW:
    return AdamW(model.params(), lr=lr, weight_decay=weight_decay)


# -- checkpoints ---------------------------------------------------------------------


def save_checkpoint(path: str | Path, model: FusionModel) -> None:
    """Flat name -> fp64 array container plus the model config; round-trips
    bit-exactly through load_checkpoint."""
    storage.save_arrays(path, model.state_arrays(), {"config": model.config.to_dict()})


def load_checkpoint(path: str | Path) -> FusionModel:
    arrays, meta = storage.load_arrays(path)
    model = build_model(ModelConfig.from_dict(meta["config"]))
    model.load_state(arrays)
    return model


def checkpoint_config(path: str | Path) -> ModelConfig:
    _, meta = storage.load_arrays(path)
    return ModelConfig.from_dict(meta["config"])
