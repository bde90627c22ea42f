"""Dataset ingestion, splitting, the synthetic two-hospital benchmark
generator, and the bag-of-words linear baseline.

The generator emits clinical-style notes for two hospitals with the same
underlying label semantics but different writing styles: hospital B shortens
notes, swaps in its own filler vocabulary, and replaces disease trigger terms
with opaque abbreviations at a configurable rate. A large unlabeled hospital-B
corpus supports generative pretraining.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .metrics import MetricsReport, full_report


@dataclass
class NoteRecord:
    id: str
    text: str
    labels: Set[str] = field(default_factory=set)


def load_jsonl(path) -> List[NoteRecord]:
    records: List[NoteRecord] = []
    seen: Set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: malformed JSON ({e})") from None
            for key in ("id", "text"):
                if key not in obj:
                    raise DataError(f"{path}:{lineno}: missing field '{key}'")
            rid = str(obj["id"])
            if rid in seen:
                raise DataError(f"{path}:{lineno}: duplicate id '{rid}'")
            seen.add(rid)
            records.append(NoteRecord(id=rid, text=obj["text"], labels=set(obj.get("labels", []))))
    return records


def save_jsonl(records: Sequence[NoteRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"id": r.id, "text": r.text, "labels": sorted(r.labels)}) + "\n")


def label_map(records: Sequence[NoteRecord]) -> List[str]:
    """Stable alphabetical list of all label names present."""
    return sorted({lab for r in records for lab in r.labels})


def split(
    records: Sequence[NoteRecord],
    fractions: Tuple[float, float, float] = (0.90, 0.05, 0.05),
    seed: int = 0,
) -> Tuple[List[NoteRecord], List[NoteRecord], List[NoteRecord]]:
    """Seeded permutation then contiguous cut into (train, valid, test)."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractError(f"split fractions must sum to 1, got {fractions}")
    order = np.random.default_rng(seed).permutation(len(records))
    shuffled = [records[i] for i in order]
    n = len(records)
    n_train = int(n * fractions[0])
    n_valid = int(n * fractions[1])
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_valid],
        shuffled[n_train + n_valid :],
    )


# ---------------------------------------------------------------------------
# synthetic two-hospital benchmark

_TRIGGERS = [
    "otalgia", "pruritus", "nephrosis", "hepatomegaly", "dermatopathy",
    "arthralgia", "gastroparesis", "cystinuria", "neuralgia", "myelopathy",
    "rhinorrhea", "keratopathy",
]
_ABBREVS = [
    "otg", "prx", "npz", "hpm", "dmq", "arj", "gpx", "cyu", "nlg", "myq",
    "rhv", "ktx",
]
_SITES = ["ear", "skin", "abdomen", "joint", "flank", "limb", "eye", "neck"]
_FILLER_A = [
    "appetite", "normal", "alert", "weight", "steady", "vaccines", "current",
    "owner", "reports", "good", "energy", "coat", "clean", "teeth", "intact",
    "hydration", "adequate", "temperature", "within", "range", "heart", "rate",
    "regular", "lungs", "clear", "gait", "even", "posture", "relaxed",
    "behavior", "calm", "feeding", "routine", "unchanged", "monitoring",
    "advised", "recheck", "scheduled", "bloodwork", "pending",
]
_FILLER_B = [
    "appt", "wnl", "brt", "wt", "stbl", "vax", "utd", "o", "rpts", "gd",
    "nrg", "hcoat", "clr", "dent", "ok", "hydr", "adq", "temp", "nml", "rng",
    "hr", "reg", "resp", "fine", "amb", "evn", "pstr", "rlx", "bhv", "qar",
    "diet", "rtn", "same", "mntr", "advsd", "rchk", "schd", "cbc", "pend",
    "f-u",
]


@dataclass
class SynthConfig:
    seed: int = 0
    n_labels: int = 8
    n_notes_a: int = 400
    n_notes_b: int = 120
    n_unlabeled_b: int = 600
    abbrev_rate: float = 0.5
    gloss_rate: float = 0.3
    length_scale: float = 0.45
    swap_rate: float = 0.9
    zipf_exponent: float = 0.8
    base_filler_sentences: int = 10
    max_labels_per_note: int = 3

    def __post_init__(self):
        if not 1 <= self.n_labels <= len(_TRIGGERS):
            raise ConfigError(f"n_labels must be in [1, {len(_TRIGGERS)}]")
        for knob in ("abbrev_rate", "gloss_rate", "length_scale", "swap_rate"):
            v = getattr(self, knob)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{knob} must be in [0, 1], got {v}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "SynthConfig":
        return SynthConfig(**json.loads(text))

    def labels(self) -> List[str]:
        return [f"disease_{i:02d}" for i in range(self.n_labels)]

    def triggers(self) -> Dict[str, str]:
        return {f"disease_{i:02d}": _TRIGGERS[i] for i in range(self.n_labels)}

    def abbreviations(self) -> Dict[str, str]:
        # abbreviation per trigger, no shared substrings with the full term
        return {_TRIGGERS[i]: _ABBREVS[i] for i in range(self.n_labels)}


def _sample_labels(cfg: SynthConfig, rng: np.random.Generator) -> Set[str]:
    weights = 1.0 / np.power(np.arange(1, cfg.n_labels + 1), cfg.zipf_exponent)
    weights /= weights.sum()
    k = int(rng.integers(1, cfg.max_labels_per_note + 1))
    chosen = rng.choice(cfg.n_labels, size=min(k, cfg.n_labels), replace=False, p=weights)
    return {f"disease_{int(i):02d}" for i in chosen}


def _trigger_sentence(trigger: str, hospital_b: bool, cfg: SynthConfig,
                      rng: np.random.Generator, unlabeled: bool = False) -> str:
    word = trigger
    if hospital_b and rng.random() < cfg.abbrev_rate:
        word = cfg.abbreviations()[trigger]
        # unlabeled dictation sometimes glosses one form with the other,
        # pairing abbreviation and expansion for generative pretraining
        if unlabeled and rng.random() < cfg.gloss_rate:
            if rng.random() < 0.5:
                word = f"{word} ( {trigger} )"
            else:
                word = f"{trigger} ( {word} )"
    site = _SITES[int(rng.integers(len(_SITES)))]
    forms = [
        f"exam reveals {word} of the {site} .",
        f"assessment notes {word} affecting the {site} .",
        f"presenting with {word} near the {site} today .",
    ]
    return forms[int(rng.integers(len(forms)))]


def _filler_sentence(hospital_b: bool, cfg: SynthConfig, rng: np.random.Generator) -> str:
    n_words = int(rng.integers(4, 8))
    words = []
    for _ in range(n_words):
        use_b = hospital_b and rng.random() < cfg.swap_rate
        vocab = _FILLER_B if use_b else _FILLER_A
        words.append(vocab[int(rng.integers(len(vocab)))])
    return " ".join(words) + " ."


def _make_note(note_id: str, labels: Set[str], hospital_b: bool, cfg: SynthConfig,
               rng: np.random.Generator, unlabeled: bool = False) -> NoteRecord:
    triggers = cfg.triggers()
    sentences = []
    for lab in sorted(labels):
        for _ in range(int(rng.integers(1, 3))):
            sentences.append(
                _trigger_sentence(triggers[lab], hospital_b, cfg, rng, unlabeled)
            )
    n_filler = cfg.base_filler_sentences
    if hospital_b:
        n_filler = max(1, int(round(n_filler * cfg.length_scale)))
    for _ in range(n_filler):
        sentences.append(_filler_sentence(hospital_b, cfg, rng))
    order = rng.permutation(len(sentences))
    text = " ".join(sentences[i] for i in order)
    return NoteRecord(id=note_id, text=text, labels=set(labels))


def synth_generate(cfg: SynthConfig) -> Tuple[List[NoteRecord], List[NoteRecord], List[NoteRecord]]:
    """Deterministically generate (hospital-A labeled, hospital-B labeled,
    hospital-B unlabeled) corpora from the config seed."""
    trig = list(cfg.triggers().values())
    abbr = set(cfg.abbreviations().values())
    if set(trig) & abbr:
        raise ConfigError("trigger terms and abbreviations overlap")
    rng = np.random.default_rng(cfg.seed)
    a_labeled = [
        _make_note(f"a{i:05d}", _sample_labels(cfg, rng), False, cfg, rng)
        for i in range(cfg.n_notes_a)
    ]
    b_labeled = [
        _make_note(f"b{i:05d}", _sample_labels(cfg, rng), True, cfg, rng)
        for i in range(cfg.n_notes_b)
    ]
    b_unlabeled = [
        NoteRecord(id=f"u{i:05d}",
                   text=_make_note("", _sample_labels(cfg, rng), True, cfg, rng,
                                   unlabeled=True).text,
                   labels=set())
        for i in range(cfg.n_unlabeled_b)
    ]
    return a_labeled, b_labeled, b_unlabeled


# ---------------------------------------------------------------------------
# bag-of-words linear baseline


def bow_baseline(
    train: Sequence[NoteRecord],
    test: Sequence[NoteRecord],
    dictionary: Sequence[str],
    seed: int = 0,
    epochs: int = 300,
    lr: float = 0.5,
) -> MetricsReport:
    """Dictionary-filtered term counts into one-vs-rest logistic classifiers
    trained by full-batch gradient descent."""
    from .tokenizer import preprocess

    terms = sorted(set(dictionary))
    index = {t: i for i, t in enumerate(terms)}
    labels = label_map(train)

    def featurize(records):
        x = np.zeros((len(records), len(terms)))
        for i, r in enumerate(records):
            for w in preprocess(r.text):
                j = index.get(w)
                if j is not None:
                    x[i, j] += 1.0
        return x

    x_train, x_test = featurize(train), featurize(test)
    y_train = np.zeros((len(train), len(labels)))
    for i, r in enumerate(train):
        for lab in r.labels:
            y_train[i, labels.index(lab)] = 1.0

    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=(len(terms), len(labels)))
    b = np.zeros(len(labels))
    n = max(len(train), 1)
    for _ in range(epochs):
        p = 1.0 / (1.0 + np.exp(-(x_train @ w + b)))
        g = (p - y_train) / n
        w -= lr * (x_train.T @ g)
        b -= lr * g.sum(axis=0)

    p_test = 1.0 / (1.0 + np.exp(-(x_test @ w + b)))
    preds = [{labels[j] for j in np.flatnonzero(row >= 0.5)} for row in p_test]
    golds = [r.labels for r in test]
    return full_report(preds, golds, labels)
