"""Full-model assembly: configuration, parameter initialization, and the
forward paths shared by training, evaluation, and attribution."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import heads, tensor as T
from .encoders import (
    TransformerConfig,
    init_lstm_params,
    init_transformer_params,
    lstm_forward,
    lstm_param_count,
    transformer_forward,
    transformer_param_count,
)
from .errors import ConfigError
from .tensor import Tensor
from .tokenizer import BpeModel, Preprocessor, bpe_encode, frame, preprocess


@dataclass
class ModelConfig:
    encoder: str = "transformer"  # "transformer" | "lstm"
    vocab_size: int = 2000
    d: int = 64
    n_heads: int = 4
    ffn_dim: int = 256
    n_layers: int = 2
    n_pool: int = 4
    n_labels: int = 0
    max_tokens: int = 600
    dropout: float = 0.1
    tie_lm_head: bool = True
    eq_literal: bool = False
    literal_scale: bool = False
    threshold: float = 0.5

    def __post_init__(self):
        if self.encoder not in ("transformer", "lstm"):
            raise ConfigError(f"unknown encoder '{self.encoder}'")

    def transformer_config(self) -> TransformerConfig:
        return TransformerConfig(
            d=self.d,
            n_heads=self.n_heads,
            ffn_dim=self.ffn_dim,
            n_layers=self.n_layers,
            dropout=self.dropout,
            eq_literal=self.eq_literal,
            literal_scale=self.literal_scale,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ModelConfig":
        return ModelConfig(**json.loads(text))


def paper_config(**kw) -> ModelConfig:
    base = dict(vocab_size=50000, d=768, n_heads=8, ffn_dim=2048, n_layers=6)
    base.update(kw)
    return ModelConfig(**base)


def desk_config(**kw) -> ModelConfig:
    return ModelConfig(**kw)


class Model:
    """Encoder plus LM head and attention-pooling classifier.

    `params` is a flat name->Tensor dict covering everything trainable.
    """

    def __init__(self, config: ModelConfig, params: Dict[str, Tensor]):
        self.config = config
        self.params = params

    @staticmethod
    def init(config: ModelConfig, seed: int = 0) -> "Model":
        rng = np.random.default_rng(seed)
        if config.encoder == "transformer":
            params = init_transformer_params(config.vocab_size, config.transformer_config(), rng)
        else:
            params = init_lstm_params(config.vocab_size, config.d, rng)
        params.update(heads.init_lm_head(config.vocab_size, config.d, rng, tied=config.tie_lm_head))
        if config.n_labels > 0:
            params.update(heads.init_classifier(config.n_labels, config.d, config.n_pool, rng))
        return Model(config, params)

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def expected_param_count(self) -> int:
        """Closed-form count, matching param_count for any configuration."""
        c = self.config
        if c.encoder == "transformer":
            n = transformer_param_count(c.vocab_size, c.transformer_config())
        else:
            n = lstm_param_count(c.vocab_size, c.d)
        n += c.vocab_size  # lm bias
        if not c.tie_lm_head:
            n += c.vocab_size * c.d
        if c.n_labels > 0:
            n += c.n_pool * (c.d * c.d + c.d)
            n += c.n_pool * c.d * c.n_labels + c.n_labels
        return n

    def trainable(self) -> Dict[str, Tensor]:
        return self.params

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # -- forward paths ------------------------------------------------------

    def encode(
        self,
        framed_ids: Sequence[int],
        pad_id: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
        training: bool = False,
        capture: Optional[dict] = None,
    ) -> Tensor:
        if self.config.encoder == "transformer":
            return transformer_forward(
                self.params, framed_ids, self.config.transformer_config(),
                pad_id=pad_id, rng=rng, training=training, capture=capture,
            )
        return lstm_forward(
            self.params, framed_ids,
            dropout_rate=self.config.dropout, rng=rng, training=training,
            capture=capture,
        )

    def lm_nll(self, framed_ids: Sequence[int], h: Optional[Tensor] = None,
               valid: Optional[np.ndarray] = None, **encode_kw) -> Tensor:
        if h is None:
            h = self.encode(framed_ids, **encode_kw)
        return heads.lm_loss(self.params, h, framed_ids, valid=valid)

    def classify(self, framed_ids: Sequence[int], h: Optional[Tensor] = None,
                 valid: Optional[np.ndarray] = None, **encode_kw) -> Tensor:
        """Per-label probabilities, shape 1 x n_labels."""
        if h is None:
            h = self.encode(framed_ids, **encode_kw)
        c = heads.attention_pool(self.params, h, valid, self.config.n_pool)
        return heads.label_probs(self.params, c)

    def predict_labels(self, framed_ids: Sequence[int], labels: Sequence[str]) -> Set[str]:
        probs = self.classify(framed_ids).data[0]
        return {labels[j] for j in np.flatnonzero(probs >= self.config.threshold)}


def encode_note(text: str, bpe: BpeModel, pre: Preprocessor) -> List[int]:
    return frame(bpe_encode(bpe, preprocess(text)), pre, bpe)
