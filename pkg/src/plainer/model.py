"""Multi-layer multi-head attention encoder-decoder.

The encoder stacks self-attention + feed-forward layers; the decoder adds
an encoder-attention sublayer whose output is the per-step context vector
(the query the rule memory uses). Residual connections, layer
normalization, sinusoidal positions and 1/sqrt(d/H) attention scaling are
standard and individually toggleable so the bare attention equations can
be exercised on their own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import tensor as T
from .corpus import BOS_ID
from .tensor import Tensor

MODES = ("base", "dcss", "dmass", "dmass+dcss")


class ConfigError(ValueError):
    pass


class ContractViolation(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    heads: int = 5
    d_model: int = 300
    d_ff: int = 1200
    vocab_size: int = 0
    dropout: float = 0.2
    memory_query_layer: int = 1  # decoder layer whose context vector queries the memory
    mode: str = "base"
    max_len: int = 85
    use_residual: bool = True
    use_layernorm: bool = True
    use_positional: bool = True
    scale_attention: bool = True
    scale_embeddings: bool = True

    def __post_init__(self):
        if self.layers < 1 or self.heads < 1 or self.d_model < 1 or self.d_ff < 1:
            raise ConfigError("layers, heads and sizes must be positive")
        if self.vocab_size < 5:
            raise ConfigError(f"vocab_size {self.vocab_size} cannot hold the reserved tokens")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if not 1 <= self.memory_query_layer <= self.layers:
            raise ConfigError(
                f"memory query layer {self.memory_query_layer} outside 1..{self.layers}"
            )
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def uses_memory(self) -> bool:
        return self.mode in ("dmass", "dmass+dcss")

    @property
    def uses_critic(self) -> bool:
        return self.mode in ("dcss", "dmass+dcss")


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


class ModelParams:
    """Named parameter tensors in a fixed, deterministic order."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        d, v, ff = config.d_model, config.vocab_size, config.d_ff
        tensors: dict[str, Tensor] = {}

        def glorot(rows, cols):
            limit = math.sqrt(6.0 / (rows + cols))
            return Tensor(rng.uniform(-limit, limit, size=(rows, cols)), requires_grad=True)

        def zeros(n):
            return Tensor(np.zeros(n), requires_grad=True)

        def attention(prefix):
            for name in ("wq", "wk", "wv", "wo"):
                tensors[f"{prefix}.{name}"] = glorot(d, d)
            for name in ("bq", "bk", "bv", "bo"):
                tensors[f"{prefix}.{name}"] = zeros(d)

        def layernorm(prefix):
            tensors[f"{prefix}.gain"] = Tensor(np.ones(d), requires_grad=True)
            tensors[f"{prefix}.bias"] = zeros(d)

        def ffn(prefix, d_in, d_hidden, d_out):
            tensors[f"{prefix}.w1"] = glorot(d_in, d_hidden)
            tensors[f"{prefix}.b1"] = zeros(d_hidden)
            tensors[f"{prefix}.w2"] = glorot(d_hidden, d_out)
            tensors[f"{prefix}.b2"] = zeros(d_out)

        tensors["enc_embed"] = Tensor(rng.uniform(-0.1, 0.1, size=(v, d)), requires_grad=True)
        tensors["dec_embed"] = Tensor(rng.uniform(-0.1, 0.1, size=(v, d)), requires_grad=True)
        for l in range(config.layers):
            attention(f"enc.{l}.self")
            layernorm(f"enc.{l}.ln1")
            ffn(f"enc.{l}.ff", d, ff, d)
            layernorm(f"enc.{l}.ln2")
        for l in range(config.layers):
            attention(f"dec.{l}.self")
            layernorm(f"dec.{l}.ln1")
            attention(f"dec.{l}.ctx")
            layernorm(f"dec.{l}.ln2")
            ffn(f"dec.{l}.ff", d, ff, d)
            layernorm(f"dec.{l}.ln3")
        tensors["out.w"] = glorot(d, v)
        tensors["out.b"] = zeros(v)
        if config.uses_memory:
            ffn("comb", 2 * d, d, d)
        return cls(tensors)


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _causal_bias(n: int) -> np.ndarray:
    bias = np.zeros((n, n))
    bias[np.triu_indices(n, k=1)] = -np.inf
    return bias


@lru_cache(maxsize=64)
def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal position signal, shape (length, d_model)."""
    pos = np.arange(length)[:, None]
    dim = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (dim // 2)) / d_model)
    enc = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


def multi_head_attention(
    params: ModelParams,
    prefix: str,
    query: Tensor,
    keys: Tensor,
    values: Tensor,
    num_heads: int,
    mask_bias: np.ndarray | None = None,
    scale: bool = True,
):
    """Projected scaled-dot-product attention over `num_heads` subspaces.

    `mask_bias` is an additive (queries, keys) matrix of 0 / -inf; a fully
    masked query row is a caller error. Returns the attended output and
    the head-averaged attention weights as a plain array for inspection.
    """
    d = query.shape[-1]
    if d % num_heads:
        raise ContractViolation(f"width {d} not divisible by {num_heads} heads")
    if mask_bias is not None and np.isneginf(mask_bias).all(axis=1).any():
        raise ContractViolation("a query position has every key masked")
    q = T.add_bias(T.matmul(query, params[f"{prefix}.wq"]), params[f"{prefix}.bq"])
    k = T.add_bias(T.matmul(keys, params[f"{prefix}.wk"]), params[f"{prefix}.bk"])
    v = T.add_bias(T.matmul(values, params[f"{prefix}.wv"]), params[f"{prefix}.bv"])
    dh = d // num_heads
    factor = 1.0 / math.sqrt(dh) if scale else 1.0
    heads = []
    weights = []
    for h in range(num_heads):
        a, b = h * dh, (h + 1) * dh
        scores = T.matmul(T.col_slice(q, a, b), T.transpose(T.col_slice(k, a, b)))
        if factor != 1.0:
            scores = T.scale(scores, factor)
        if mask_bias is not None:
            scores = T.add(scores, Tensor(mask_bias))
        attn = T.softmax(scores, axis=-1)
        weights.append(attn.data)
        heads.append(T.matmul(attn, T.col_slice(v, a, b)))
    merged = heads[0] if num_heads == 1 else T.concat(heads, axis=1)
    out = T.add_bias(T.matmul(merged, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])
    return out, np.mean(weights, axis=0)


# ---------------------------------------------------------------------------
# Encoder / decoder stacks
# ---------------------------------------------------------------------------


@dataclass
class EncoderState:
    ids: list[int]
    layers: list[Tensor]  # index 0 is the embedded input, index L the top
    attention: list[np.ndarray] = field(default_factory=list)

    @property
    def top(self) -> Tensor:
        return self.layers[-1]


@dataclass
class DecoderState:
    ids: list[int]
    layers: list[Tensor]
    contexts: list[Tensor]  # encoder-attention output per layer, pre-residual
    self_attention: list[np.ndarray] = field(default_factory=list)
    encoder_attention: list[np.ndarray] = field(default_factory=list)

    @property
    def top(self) -> Tensor:
        return self.layers[-1]

    def context_at(self, layer: int) -> Tensor:
        """Context vectors c at a 1-based decoder layer, shape (steps, d)."""
        return self.contexts[layer - 1]


def _embed(ids, table: Tensor, config: ModelConfig, train: bool, rng) -> Tensor:
    x = T.embedding(table, ids)
    if config.scale_embeddings:
        x = T.scale(x, math.sqrt(config.d_model))
    if config.use_positional:
        x = T.add(x, Tensor(positional_encoding(len(ids), config.d_model)))
    return T.dropout(x, config.dropout, rng, train)


def _sublayer(x: Tensor, fx: Tensor, params, ln_prefix, config, train, rng) -> Tensor:
    fx = T.dropout(fx, config.dropout, rng, train)
    if config.use_residual:
        fx = T.add(x, fx)
    if config.use_layernorm:
        fx = T.layer_norm(fx, params[f"{ln_prefix}.gain"], params[f"{ln_prefix}.bias"])
    return fx


def _ffn(x: Tensor, params, prefix) -> Tensor:
    h = T.relu(T.add_bias(T.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return T.add_bias(T.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def encode(ids, params: ModelParams, config: ModelConfig, train: bool = False, rng=None) -> EncoderState:
    """Run the encoder stack over source ids."""
    ids = list(ids)
    if not ids:
        raise ContractViolation("cannot encode an empty sentence")
    if len(ids) > config.max_len + 1:
        raise ContractViolation(f"input of {len(ids)} tokens exceeds max length {config.max_len}")
    x = _embed(ids, params["enc_embed"], config, train, rng)
    state = EncoderState(ids=ids, layers=[x])
    for l in range(config.layers):
        attended, weights = multi_head_attention(
            params, f"enc.{l}.self", x, x, x, config.heads, scale=config.scale_attention
        )
        x = _sublayer(x, attended, params, f"enc.{l}.ln1", config, train, rng)
        x = _sublayer(x, _ffn(x, params, f"enc.{l}.ff"), params, f"enc.{l}.ln2", config, train, rng)
        state.layers.append(x)
        state.attention.append(weights)
    return state


def decode_states(
    prefix_ids, enc: EncoderState, params: ModelParams, config: ModelConfig,
    train: bool = False, rng=None,
) -> DecoderState:
    """Run the decoder stack over a BOS-prefixed target prefix.

    Self-attention is causal; each layer then attends the encoder's top
    states, and that attention output (pre-residual) is recorded as the
    layer's context vectors.
    """
    prefix_ids = list(prefix_ids)
    if not prefix_ids or prefix_ids[0] != BOS_ID:
        raise ContractViolation("decoder prefix must begin with BOS")
    if len(prefix_ids) > config.max_len + 1:
        raise ContractViolation(
            f"prefix of {len(prefix_ids)} tokens exceeds max length {config.max_len}"
        )
    x = _embed(prefix_ids, params["dec_embed"], config, train, rng)
    state = DecoderState(ids=prefix_ids, layers=[x], contexts=[])
    causal = _causal_bias(len(prefix_ids))
    for l in range(config.layers):
        attended, w_self = multi_head_attention(
            params, f"dec.{l}.self", x, x, x, config.heads,
            mask_bias=causal, scale=config.scale_attention,
        )
        x = _sublayer(x, attended, params, f"dec.{l}.ln1", config, train, rng)
        context, w_enc = multi_head_attention(
            params, f"dec.{l}.ctx", x, enc.top, enc.top, config.heads,
            scale=config.scale_attention,
        )
        state.contexts.append(context)
        x = _sublayer(x, context, params, f"dec.{l}.ln2", config, train, rng)
        x = _sublayer(x, _ffn(x, params, f"dec.{l}.ff"), params, f"dec.{l}.ln3", config, train, rng)
        state.layers.append(x)
        state.self_attention.append(w_self)
        state.encoder_attention.append(w_enc)
    return state


def output_logits(top: Tensor, params: ModelParams) -> Tensor:
    return T.add_bias(T.matmul(top, params["out.w"]), params["out.b"])


def combine_with_memory(top: Tensor, memory_out: Tensor, params: ModelParams) -> Tensor:
    """Feed-forward merge of decoder output and memory read, back to width d."""
    return _ffn(T.concat([top, memory_out], axis=1), params, "comb")


# ---------------------------------------------------------------------------
# Teacher-forced loss
# ---------------------------------------------------------------------------


def teacher_inputs(target_ids) -> tuple[list[int], list[int]]:
    """Teacher forcing: decoder consumes BOS + target[:-1], predicts target.

    `target_ids` already ends with EOS (the encoder appends it), so inputs
    and predictions line up one-to-one.
    """
    target_ids = list(target_ids)
    return [BOS_ID] + target_ids[:-1], target_ids


def sequence_loss(
    source_ids, target_ids, params: ModelParams, config: ModelConfig,
    train: bool = False, rng=None,
):
    """Mean token negative log-likelihood of the target given the source."""
    dec_in, dec_out = teacher_inputs(target_ids)
    enc = encode(source_ids, params, config, train, rng)
    state = decode_states(dec_in, enc, params, config, train, rng)
    logits = output_logits(state.top, params)
    return T.cross_entropy(logits, dec_out), state, logits


def toy_config(**overrides) -> ModelConfig:
    """Small config for tests: 2 layers, 2 heads, width 8, vocab 20."""
    defaults = dict(layers=2, heads=2, d_model=8, d_ff=16, vocab_size=20, dropout=0.0)
    defaults.update(overrides)
    return ModelConfig(**defaults)


def clone_config_for_mode(config: ModelConfig, mode: str) -> ModelConfig:
    return replace(config, mode=mode)
