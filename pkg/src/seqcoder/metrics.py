"""Multi-label evaluation: exact match, micro-averaged precision/recall/F1,
and a per-label breakdown. 0/0 ratios are defined as 0."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Set, Tuple

from .errors import ContractError


@dataclass
class LabelRow:
    label: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    em: float
    micro_p: float
    micro_r: float
    micro_f1: float
    macro_p: float
    macro_r: float
    macro_f1: float
    per_label: List[LabelRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "em": self.em,
            "micro_p": self.micro_p,
            "micro_r": self.micro_r,
            "micro_f1": self.micro_f1,
            "macro_p": self.macro_p,
            "macro_r": self.macro_r,
            "macro_f1": self.macro_f1,
            "per_label": [
                {"label": r.label, "p": r.precision, "r": r.recall, "f1": r.f1, "n": r.support}
                for r in self.per_label
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_table(self) -> str:
        lines = [
            f"EM        {self.em:.4f}",
            f"micro-P   {self.micro_p:.4f}",
            f"micro-R   {self.micro_r:.4f}",
            f"micro-F1  {self.micro_f1:.4f}",
            "",
            f"{'label':<28} {'P':>7} {'R':>7} {'F1':>7} {'N':>7}",
        ]
        for r in self.per_label:
            lines.append(
                f"{r.label:<28} {r.precision:7.4f} {r.recall:7.4f} {r.f1:7.4f} {r.support:7d}"
            )
        return "\n".join(lines)


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def exact_match(preds: Sequence[Set[str]], golds: Sequence[Set[str]]) -> float:
    if len(preds) != len(golds):
        raise ContractError(f"length mismatch: {len(preds)} preds vs {len(golds)} golds")
    if not preds:
        return 0.0
    return sum(1 for p, g in zip(preds, golds) if set(p) == set(g)) / len(preds)


def micro_prf(preds: Sequence[Set[str]], golds: Sequence[Set[str]]) -> Tuple[float, float, float]:
    if len(preds) != len(golds):
        raise ContractError(f"length mismatch: {len(preds)} preds vs {len(golds)} golds")
    tp = fp = fn = 0
    for p, g in zip(preds, golds):
        p, g = set(p), set(g)
        tp += len(p & g)
        fp += len(p - g)
        fn += len(g - p)
    prec = _safe_div(tp, tp + fp)
    rec = _safe_div(tp, tp + fn)
    return prec, rec, _f1(prec, rec)


def per_label_report(
    preds: Sequence[Set[str]],
    golds: Sequence[Set[str]],
    labels: Sequence[str],
    top_k: int = 0,
) -> List[LabelRow]:
    """Per-label P/R/F1/support, sorted by support descending then name.
    top_k > 0 keeps only the most frequent labels."""
    rows: List[LabelRow] = []
    for label in labels:
        tp = sum(1 for p, g in zip(preds, golds) if label in p and label in g)
        fp = sum(1 for p, g in zip(preds, golds) if label in p and label not in g)
        fn = sum(1 for p, g in zip(preds, golds) if label not in p and label in g)
        prec = _safe_div(tp, tp + fp)
        rec = _safe_div(tp, tp + fn)
        rows.append(LabelRow(label, prec, rec, _f1(prec, rec), tp + fn))
    rows.sort(key=lambda r: (-r.support, r.label))
    if top_k > 0:
        rows = rows[:top_k]
    return rows


def full_report(
    preds: Sequence[Set[str]],
    golds: Sequence[Set[str]],
    labels: Sequence[str],
    top_k: int = 0,
) -> MetricsReport:
    rows = per_label_report(preds, golds, labels, top_k=top_k)
    p, r, f1 = micro_prf(preds, golds)
    all_rows = per_label_report(preds, golds, labels)
    n = max(len(all_rows), 1)
    return MetricsReport(
        em=exact_match(preds, golds),
        micro_p=p,
        micro_r=r,
        micro_f1=f1,
        macro_p=sum(x.precision for x in all_rows) / n,
        macro_r=sum(x.recall for x in all_rows) / n,
        macro_f1=sum(x.f1 for x in all_rows) / n,
        per_label=rows,
    )
