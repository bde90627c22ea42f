"""Output heads and losses: autoregressive LM head, attention-pooling
multi-label classifier, binary cross entropy, and the joint loss."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor


@dataclass
class LossConfig:
    lam: float = 0.5  # weight of the auxiliary language-model loss


def init_lm_head(vocab_size: int, d: int, rng: np.random.Generator, tied: bool = True) -> Dict[str, Tensor]:
    params: Dict[str, Tensor] = {"lm_b": Tensor(np.zeros(vocab_size), requires_grad=True)}
    if not tied:
        params["lm_U"] = Tensor(rng.normal(0.0, 0.02, size=(vocab_size, d)), requires_grad=True)
    return params


def init_classifier(
    n_labels: int, d: int, n_pool: int, rng: np.random.Generator
) -> Dict[str, Tensor]:
    params: Dict[str, Tensor] = {}
    for k in range(n_pool):
        params[f"pool{k}.W"] = Tensor(rng.normal(0.0, 0.02, size=(d, d)), requires_grad=True)
        params[f"pool{k}.b"] = Tensor(np.zeros(d), requires_grad=True)
    params["cls_W"] = Tensor(rng.normal(0.0, 0.02, size=(n_pool * d, n_labels)), requires_grad=True)
    params["cls_b"] = Tensor(np.zeros(n_labels), requires_grad=True)
    return params


def lm_logits(params: Dict[str, Tensor], h: Tensor) -> Tensor:
    """Project hidden states to vocabulary logits; tied to the embedding
    table when no separate projection exists."""
    proj = params["lm_U"] if "lm_U" in params else params["emb"]
    return T.add(T.matmul(h, T.transpose(proj)), params["lm_b"])


def lm_loss(params: Dict[str, Tensor], h: Tensor, framed_ids: Sequence[int],
            valid: Optional[np.ndarray] = None) -> Tensor:
    """Mean next-token NLL: predict token t+1 from state t, PAD excluded."""
    ids = np.asarray(framed_ids, dtype=np.int64)
    t_len = len(ids)
    if t_len < 2:
        raise ContractError(f"lm_loss needs at least 2 positions, got {t_len}")
    if valid is None:
        positions = np.arange(t_len - 1)
    else:
        valid = np.asarray(valid)
        positions = np.array([t for t in range(t_len - 1) if valid[t] and valid[t + 1]])
        if positions.size == 0:
            raise ContractError("no valid next-token positions")
    states = T.embedding_lookup(h, positions)
    logits = lm_logits(params, states)
    return T.cross_entropy_rows(logits, ids[positions + 1])


def perplexity(nll_per_token: float) -> float:
    return math.exp(nll_per_token)


def attention_pool(params: Dict[str, Tensor], h: Tensor, valid: Optional[np.ndarray],
                   n_pool: int) -> Tensor:
    """Dot-product attention summary over valid positions, one query per pool
    head projected from the last valid hidden state; heads concatenated."""
    t_len = h.shape[0]
    if valid is None:
        valid_idx = np.arange(t_len)
    else:
        valid_idx = np.flatnonzero(np.asarray(valid))
    if valid_idx.size == 0:
        raise ContractError("attention_pool requires at least one valid position")
    h_valid = T.embedding_lookup(h, valid_idx)
    h_last = T.embedding_lookup(h, [int(valid_idx[-1])])
    pooled = []
    for k in range(n_pool):
        query = T.add(T.matmul(h_last, params[f"pool{k}.W"]), params[f"pool{k}.b"])
        scores = T.transpose(T.matmul(h_valid, T.transpose(query)))  # 1 x T_valid
        alpha = T.softmax_rows(scores)
        pooled.append(T.matmul(alpha, h_valid))
    return T.concat(pooled, axis=1)


def label_probs(params: Dict[str, Tensor], c: Tensor) -> Tensor:
    return T.sigmoid(T.add(T.matmul(c, params["cls_W"]), params["cls_b"]))


def label_logits(params: Dict[str, Tensor], c: Tensor) -> Tensor:
    return T.add(T.matmul(c, params["cls_W"]), params["cls_b"])


def bce_loss(p: Tensor, y) -> Tensor:
    return T.bce_with_probs(p, y)


def total_loss(bce: Tensor, nll: Tensor, config: LossConfig) -> Tensor:
    """Joint objective: classification loss plus lam times the LM NLL."""
    return T.add(bce, T.scale(nll, config.lam))
