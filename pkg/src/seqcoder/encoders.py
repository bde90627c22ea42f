"""Sequence encoders: an LSTM and a causal Transformer decoder.

Both map framed token ids to contextual hidden states H[0..T-1]. Parameters
live in flat name->Tensor dicts so the optimizer and checkpoint code can treat
every model uniformly. Weights are stored for right-multiplication (row-vector
convention): a projection W maps x (1 x d_in) to x @ W (1 x d_out).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor

GATES = ("f", "i", "o", "c")

_PE_CACHE: dict = {}


def positional_encoding(t_len: int, d: int) -> np.ndarray:
    """Sinusoidal position table: sin on even dims, cos on odd dims."""
    if d % 2 != 0:
        raise ConfigError(f"positional encoding requires even d, got {d}")
    key = (t_len, d)
    cached = _PE_CACHE.get(key)
    if cached is not None:
        return cached
    pos = np.arange(t_len, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d)
    pe = np.empty((t_len, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    _PE_CACHE[key] = pe
    return pe


def causal_mask(t_len: int, valid: Optional[np.ndarray] = None) -> np.ndarray:
    """Lower-triangular {0,1} mask; key positions restricted to valid ones."""
    m = np.tril(np.ones((t_len, t_len), dtype=np.float64))
    if valid is not None:
        m = m * np.asarray(valid, dtype=np.float64)[None, :]
    return m


def _init(rng: np.random.Generator, shape, std: float = 0.02) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


# ---------------------------------------------------------------------------
# LSTM


def init_lstm_params(vocab_size: int, d: int, rng: np.random.Generator) -> Dict[str, Tensor]:
    params: Dict[str, Tensor] = {"emb": _init(rng, (vocab_size, d))}
    for g in GATES:
        params[f"W_{g}"] = _init(rng, (d, d))
        params[f"V_{g}"] = _init(rng, (d, d))
        params[f"b_{g}"] = _zeros((d,))
    return params


def lstm_step(params: Dict[str, Tensor], x_t: Tensor, h_prev: Tensor, c_prev: Tensor):
    """One recurrence step: sigmoid gates, tanh candidate, gated cell update."""
    d = params["W_f"].shape[0]
    if x_t.shape != (1, d) or h_prev.shape != (1, d) or c_prev.shape != (1, d):
        raise DimensionError(
            f"lstm_step expects (1,{d}) inputs, got {x_t.shape}/{h_prev.shape}/{c_prev.shape}"
        )

    def gate(g):
        pre = T.add(
            T.add(T.matmul(x_t, params[f"W_{g}"]), T.matmul(h_prev, params[f"V_{g}"])),
            params[f"b_{g}"],
        )
        return pre

    f = T.sigmoid(gate("f"))
    i = T.sigmoid(gate("i"))
    o = T.sigmoid(gate("o"))
    c_tilde = T.tanh(gate("c"))
    c_t = T.add(T.mul(f, c_prev), T.mul(i, c_tilde))
    h_t = T.mul(o, T.tanh(c_t))
    return h_t, c_t


def lstm_forward(
    params: Dict[str, Tensor],
    framed_ids: Sequence[int],
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
    capture: Optional[dict] = None,
) -> Tensor:
    """Left-to-right scan from zero state; returns hidden states T x d.
    Dropout, when enabled, is applied to the embedded inputs only."""
    ids = np.asarray(framed_ids, dtype=np.int64)
    d = params["W_f"].shape[0]
    x = T.embedding_lookup(params["emb"], ids)
    if capture is not None:
        capture["embedded"] = x
    if training and rng is not None and dropout_rate > 0.0:
        x = T.dropout(x, dropout_rate, rng, training)
    h = Tensor(np.zeros((1, d)))
    c = Tensor(np.zeros((1, d)))
    rows: List[Tensor] = []
    for t in range(len(ids)):
        x_t = T.embedding_lookup(x, [t])
        h, c = lstm_step(params, x_t, h, c)
        rows.append(h)
    return T.concat(rows, axis=0)


# ---------------------------------------------------------------------------
# Transformer


@dataclass
class TransformerConfig:
    d: int = 768
    n_heads: int = 8
    ffn_dim: int = 2048
    n_layers: int = 6
    dropout: float = 0.1
    # eq_literal drops residual connections and layer norm (equation-level mode)
    eq_literal: bool = False
    # literal_scale divides attention scores by sqrt(d) instead of sqrt(d/n)
    literal_scale: bool = False

    def __post_init__(self):
        if self.d % self.n_heads != 0:
            raise ConfigError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if self.d % 2 != 0:
            raise ConfigError(f"d must be even for positional encoding, got {self.d}")


def desk_transformer_config(**kw) -> TransformerConfig:
    base = dict(d=64, n_heads=4, ffn_dim=256, n_layers=2)
    base.update(kw)
    return TransformerConfig(**base)


def init_transformer_params(
    vocab_size: int, cfg: TransformerConfig, rng: np.random.Generator
) -> Dict[str, Tensor]:
    d, dh = cfg.d, cfg.d // cfg.n_heads
    params: Dict[str, Tensor] = {"emb": _init(rng, (vocab_size, d))}
    for l in range(cfg.n_layers):
        p = f"l{l}."
        for h in range(cfg.n_heads):
            hp = f"{p}h{h}."
            for name in ("k", "q", "v"):
                params[hp + f"W_{name}"] = _init(rng, (d, dh))
                params[hp + f"b_{name}"] = _zeros((dh,))
            params[hp + "W_h"] = _init(rng, (dh, dh))
            params[hp + "b_h"] = _zeros((dh,))
        params[p + "W_o1"] = _init(rng, (d, cfg.ffn_dim))
        params[p + "b_o1"] = _zeros((cfg.ffn_dim,))
        params[p + "W_o2"] = _init(rng, (cfg.ffn_dim, d))
        params[p + "b_o2"] = _zeros((d,))
        params[p + "ln1_g"] = _ones((d,))
        params[p + "ln1_b"] = _zeros((d,))
        params[p + "ln2_g"] = _ones((d,))
        params[p + "ln2_b"] = _zeros((d,))
    return params


def transformer_param_count(vocab_size: int, cfg: TransformerConfig) -> int:
    """Closed-form parameter count for init_transformer_params."""
    d, dh, dff = cfg.d, cfg.d // cfg.n_heads, cfg.ffn_dim
    per_head = 3 * (d * dh + dh) + dh * dh + dh
    per_layer = cfg.n_heads * per_head + d * dff + dff + dff * d + d + 4 * d
    return vocab_size * d + cfg.n_layers * per_layer


def lstm_param_count(vocab_size: int, d: int) -> int:
    return vocab_size * d + 4 * (2 * d * d + d)


def multi_head_attention(
    params: Dict[str, Tensor],
    layer: int,
    h_prev: Tensor,
    mask: np.ndarray,
    cfg: TransformerConfig,
) -> Tensor:
    t_len = h_prev.shape[0]
    if mask.shape != (t_len, t_len):
        raise DimensionError(f"mask shape {mask.shape} does not match T={t_len}")
    dh = cfg.d // cfg.n_heads
    denom = np.sqrt(cfg.d) if cfg.literal_scale else np.sqrt(dh)
    heads: List[Tensor] = []
    for h in range(cfg.n_heads):
        hp = f"l{layer}.h{h}."
        q = T.add(T.matmul(h_prev, params[hp + "W_q"]), params[hp + "b_q"])
        k = T.add(T.matmul(h_prev, params[hp + "W_k"]), params[hp + "b_k"])
        v = T.add(T.matmul(h_prev, params[hp + "W_v"]), params[hp + "b_v"])
        scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / denom)
        weights = T.softmax_rows(scores, mask)
        ctx = T.matmul(weights, v)
        heads.append(T.add(T.matmul(ctx, params[hp + "W_h"]), params[hp + "b_h"]))
    return T.concat(heads, axis=1)


def transformer_block(
    params: Dict[str, Tensor],
    layer: int,
    h_prev: Tensor,
    mask: np.ndarray,
    cfg: TransformerConfig,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
) -> Tensor:
    p = f"l{layer}."
    attn = multi_head_attention(params, layer, h_prev, mask, cfg)
    if training and rng is not None:
        attn = T.dropout(attn, cfg.dropout, rng, training)
    if cfg.eq_literal:
        mid = attn
    else:
        mid = T.layer_norm(T.add(h_prev, attn), params[p + "ln1_g"], params[p + "ln1_b"])
    ffn = T.add(
        T.matmul(T.relu(T.add(T.matmul(mid, params[p + "W_o1"]), params[p + "b_o1"])), params[p + "W_o2"]),
        params[p + "b_o2"],
    )
    if training and rng is not None:
        ffn = T.dropout(ffn, cfg.dropout, rng, training)
    if cfg.eq_literal:
        return ffn
    return T.layer_norm(T.add(mid, ffn), params[p + "ln2_g"], params[p + "ln2_b"])


def transformer_forward(
    params: Dict[str, Tensor],
    framed_ids: Sequence[int],
    cfg: TransformerConfig,
    pad_id: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
    capture: Optional[dict] = None,
) -> Tensor:
    """Embed + positional encoding, then the stack of causal blocks."""
    ids = np.asarray(framed_ids, dtype=np.int64)
    t_len = len(ids)
    valid = None if pad_id is None else (ids != pad_id).astype(np.float64)
    mask = causal_mask(t_len, valid)
    x = T.embedding_lookup(params["emb"], ids)
    if capture is not None:
        capture["embedded"] = x
    x = T.add(x, Tensor(positional_encoding(t_len, cfg.d)))
    if training and rng is not None:
        x = T.dropout(x, cfg.dropout, rng, training)
    for l in range(cfg.n_layers):
        x = transformer_block(params, l, x, mask, cfg, rng=rng, training=training)
    return x
