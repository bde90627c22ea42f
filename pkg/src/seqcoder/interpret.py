"""Gradient-times-input token attribution and dictionary-filtered keyword
extraction per disease label.

Attribution targets the pre-sigmoid label logit. Per-token scores are the
signed sum over embedding dimensions of gradient * input, normalized by the
note's maximum absolute score so the selection threshold is scale-free.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np

from . import heads, tensor as T
from .errors import ConfigError
from .model import Model
from .tensor import Tape
from .tokenizer import BpeModel, Preprocessor, bpe_encode_aligned, frame, preprocess


@dataclass
class AttributionVector:
    note_id: str
    label: str
    scores: np.ndarray  # one score per framed position, max-abs normalized
    raw_scores: np.ndarray  # unnormalized gradient*input sums
    words: List[str]  # preprocessed source words
    owners: List[int]  # framed position -> word index, -1 for BOS/EOS


def grad_times_input(model: Model, bpe: BpeModel, pre: Preprocessor,
                     note_id: str, text: str, label: str,
                     labels: Sequence[str]) -> AttributionVector:
    if label not in labels:
        raise ConfigError(f"label '{label}' not in the model's label map")
    j = list(labels).index(label)
    words = preprocess(text)
    ids, owners = bpe_encode_aligned(bpe, words)
    framed = frame(ids, pre, bpe)
    framed_owners = [-1] + owners[: len(framed) - 2] + [-1]
    capture: dict = {}
    with Tape() as tape:
        h = model.encode(framed, capture=capture)
        c = heads.attention_pool(model.params, h, None, model.config.n_pool)
        logits = heads.label_logits(model.params, c)
        target = T.sum_all(T.mul(logits, T.Tensor(np.eye(len(labels))[j].reshape(1, -1))))
        tape.backward(target)
    emb = capture["embedded"]
    grad = emb.grad if emb.grad is not None else np.zeros_like(emb.data)
    raw = (grad * emb.data).sum(axis=1)
    peak = np.abs(raw).max()
    scores = raw / peak if peak > 0 else raw.copy()
    return AttributionVector(
        note_id=note_id, label=label, scores=scores, raw_scores=raw,
        words=words, owners=framed_owners,
    )


def salient_words(attrib: AttributionVector, threshold: float = 0.2) -> List[Tuple[str, float]]:
    """Words whose best subtoken score clears the threshold, with that score,
    ranked by score descending (ties by word)."""
    best: Dict[str, float] = {}
    for pos, owner in enumerate(attrib.owners):
        if owner < 0:
            continue
        word = attrib.words[owner]
        s = float(attrib.scores[pos])
        if word not in best or s > best[word]:
            best[word] = max(best.get(word, s), s)
    hits = [(w, s) for w, s in best.items() if s >= threshold]
    hits.sort(key=lambda ws: (-ws[1], ws[0]))
    return hits


def load_dictionary(path) -> Set[str]:
    """One term per line, '#' comments; terms normalized like note text."""
    terms: Set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            normalized = " ".join(preprocess(line))
            if normalized:
                terms.add(normalized)
    if not terms:
        raise ConfigError(f"{path}: dictionary is empty")
    return terms


def keyword_table(
    model: Model,
    bpe: BpeModel,
    pre: Preprocessor,
    records,
    labels: Sequence[str],
    dictionary: Set[str],
    top_k: int = 10,
    threshold: float = 0.2,
) -> Dict[str, List[Tuple[str, int]]]:
    """Per label: dictionary words ranked by the number of notes (gold for
    that label) in which the word was salient. Labels without hits omitted."""
    if not dictionary:
        raise ConfigError("keyword dictionary is empty")
    table: Dict[str, List[Tuple[str, int]]] = {}
    for label in labels:
        counts: Counter = Counter()
        for r in records:
            if label not in r.labels:
                continue
            attrib = grad_times_input(model, bpe, pre, r.id, r.text, label, labels)
            # per-note counting: each salient word counts once per note
            for word, _score in salient_words(attrib, threshold):
                if word in dictionary:
                    counts[word] += 1
        if counts:
            ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
            table[label] = ranked[:top_k]
    return table


def keyword_table_text(table: Dict[str, List[Tuple[str, int]]]) -> str:
    lines = []
    for label in sorted(table):
        words = ", ".join(f"{w} ({n})" for w, n in table[label])
        lines.append(f"{label}: {words}")
    return "\n".join(lines)
