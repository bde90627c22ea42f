"""Text normalization and byte-pair-encoding subword tokenization.

Words carry an explicit end-of-word marker on their final character, so merges
never cross word boundaries and decoding can recover word breaks. Merge
learning is greedy on pair frequency with lexicographic tie-breaking, which
makes training fully deterministic.
"""

from __future__ import annotations

import hashlib
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

from .errors import ConfigError, DataError

END_MARK = "</w>"
PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
SPECIALS = (PAD, UNK, BOS, EOS)

_PUNCT = set(string.punctuation)
_KEEP_INTERNAL = {"-", "'"}


def preprocess(text: str) -> List[str]:
    """ASCII-filter, lowercase, and split into words and punctuation tokens."""
    text = text.encode("ascii", "ignore").decode("ascii").lower()
    words: List[str] = []
    for chunk in text.split():
        lead: List[str] = []
        trail: List[str] = []
        while chunk and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        while chunk and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        words.extend(lead)
        if chunk:
            words.append(chunk)
        words.extend(reversed(trail))
    return words


@dataclass
class Preprocessor:
    max_tokens: int = 600
    lowercase: bool = True
    ascii_only: bool = True

    def __post_init__(self):
        if self.max_tokens < 3:
            raise ConfigError(f"max_tokens must be >= 3, got {self.max_tokens}")


@dataclass
class BpeModel:
    merges: List[Tuple[str, str]]
    vocab: dict  # symbol -> id, dense 0..|vocab|-1
    vocab_size: int
    _ranks: dict = field(default_factory=dict, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)
    _inverse: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._inverse = {i: s for s, i in self.vocab.items()}

    @property
    def pad_id(self) -> int:
        return self.vocab[PAD]

    @property
    def unk_id(self) -> int:
        return self.vocab[UNK]

    @property
    def bos_id(self) -> int:
        return self.vocab[BOS]

    @property
    def eos_id(self) -> int:
        return self.vocab[EOS]

    def symbol(self, idx: int) -> str:
        return self._inverse[idx]


def _word_symbols(word: str) -> Tuple[str, ...]:
    return tuple(word[:-1]) + (word[-1] + END_MARK,)


def bpe_train(corpus: Iterable[Sequence[str]], vocab_size: int) -> BpeModel:
    """Learn greedy merges until `vocab_size` symbols or no pair repeats."""
    word_freq: Counter = Counter()
    for words in corpus:
        word_freq.update(words)
    if not word_freq:
        raise DataError("cannot train BPE on an empty corpus")

    pieces = {w: list(_word_symbols(w)) for w in word_freq}
    base = sorted({s for syms in pieces.values() for s in syms})

    vocab = {s: i for i, s in enumerate(SPECIALS)}
    for s in base:
        vocab[s] = len(vocab)

    # vocab_size bounds the total vocabulary, specials and base symbols included
    merges: List[Tuple[str, str]] = []
    while len(vocab) < vocab_size:
        pair_freq: Counter = Counter()
        for w, syms in pieces.items():
            f = word_freq[w]
            for a, b in zip(syms, syms[1:]):
                pair_freq[(a, b)] += f
        if not pair_freq:
            break
        best_count = max(pair_freq.values())
        if best_count < 2:
            break
        best = min(p for p, c in pair_freq.items() if c == best_count)
        merges.append(best)
        merged_sym = best[0] + best[1]
        if merged_sym not in vocab:
            vocab[merged_sym] = len(vocab)
        for w, syms in pieces.items():
            pieces[w] = _apply_merge(syms, best, merged_sym)
    return BpeModel(merges=merges, vocab=vocab, vocab_size=vocab_size)


def _apply_merge(syms: List[str], pair: Tuple[str, str], merged: str) -> List[str]:
    out: List[str] = []
    i = 0
    n = len(syms)
    while i < n:
        if i + 1 < n and syms[i] == pair[0] and syms[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return out


def _encode_word(model: BpeModel, word: str) -> List[int]:
    cached = model._cache.get(word)
    if cached is not None:
        return cached
    syms = list(_word_symbols(word))
    ranks = model._ranks
    while len(syms) > 1:
        best_rank, best_i = None, -1
        for i in range(len(syms) - 1):
            r = ranks.get((syms[i], syms[i + 1]))
            if r is not None and (best_rank is None or r < best_rank):
                best_rank, best_i = r, i
        if best_rank is None:
            break
        syms[best_i : best_i + 2] = [syms[best_i] + syms[best_i + 1]]
    ids = [model.vocab.get(s, model.unk_id) for s in syms]
    model._cache[word] = ids
    return ids


def bpe_encode(model: BpeModel, words: Sequence[str]) -> List[int]:
    ids: List[int] = []
    for w in words:
        ids.extend(_encode_word(model, w))
    return ids


def bpe_encode_aligned(model: BpeModel, words: Sequence[str]) -> Tuple[List[int], List[int]]:
    """Encode and return (ids, word_index per id) for subword-to-word mapping."""
    ids: List[int] = []
    owners: List[int] = []
    for wi, w in enumerate(words):
        piece = _encode_word(model, w)
        ids.extend(piece)
        owners.extend([wi] * len(piece))
    return ids, owners


def bpe_decode(model: BpeModel, ids: Sequence[int]) -> List[str]:
    """Reassemble words from subword ids; special tokens are skipped."""
    words: List[str] = []
    current = ""
    for i in ids:
        sym = model.symbol(int(i))
        if sym in SPECIALS:
            continue
        if sym.endswith(END_MARK):
            words.append(current + sym[: -len(END_MARK)])
            current = ""
        else:
            current += sym
    if current:
        words.append(current)
    return words


def frame(ids: Sequence[int], pre: Preprocessor, model: BpeModel) -> List[int]:
    """[BOS] + ids truncated to max_tokens-2 + [EOS]."""
    body = list(ids[: pre.max_tokens - 2])
    return [model.bos_id] + body + [model.eos_id]


def pad_batch(framed: Sequence[Sequence[int]], pad_id: int) -> Tuple[List[List[int]], List[List[int]]]:
    """Pad framed sequences to the batch max length; returns (ids, validity mask)."""
    width = max(len(f) for f in framed)
    ids = [list(f) + [pad_id] * (width - len(f)) for f in framed]
    mask = [[1] * len(f) + [0] * (width - len(f)) for f in framed]
    return ids, mask


# ---------------------------------------------------------------------------
# file format: header `bpe-v1 <vocab_size>`, merges, `#vocab`, symbol\tid lines


def serialize(model: BpeModel) -> str:
    lines = [f"bpe-v1 {model.vocab_size}"]
    for a, b in model.merges:
        lines.append(f"{a} {b}")
    lines.append("#vocab")
    for sym, idx in sorted(model.vocab.items(), key=lambda kv: kv[1]):
        lines.append(f"{sym}\t{idx}")
    return "\n".join(lines) + "\n"


def save_tokenizer(model: BpeModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(model))


def load_tokenizer(path) -> BpeModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("bpe-v1 "):
        raise DataError(f"{path}: not a bpe-v1 tokenizer file")
    vocab_size = int(lines[0].split()[1])
    merges: List[Tuple[str, str]] = []
    vocab: dict = {}
    in_vocab = False
    for line in lines[1:]:
        if line == "#vocab":
            in_vocab = True
            continue
        if in_vocab:
            sym, idx = line.split("\t")
            vocab[sym] = int(idx)
        else:
            a, b = line.split(" ")
            merges.append((a, b))
    if not vocab:
        raise DataError(f"{path}: missing vocab section")
    return BpeModel(merges=merges, vocab=vocab, vocab_size=vocab_size)


def tokenizer_hash(model: BpeModel) -> str:
    return hashlib.sha256(serialize(model).encode("utf-8")).hexdigest()
