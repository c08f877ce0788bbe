"""Exact-match precision / recall / F1 over (start, end, category) triples."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence


@dataclass
class Scores:
    gold: int = 0
    predicted: int = 0
    correct: int = 0

    @property
    def precision(self) -> float:
        return self.correct / self.predicted if self.predicted else 0.0

    @property
    def recall(self) -> float:
        return self.correct / self.gold if self.gold else 0.0

    @property
    def f1(self) -> float:
        # harmonic mean of P and R, computed from counts in one rounding step
        return 2 * self.correct / (self.gold + self.predicted) if self.correct else 0.0

    def as_dict(self) -> dict:
        return {"gold": self.gold, "predicted": self.predicted, "correct": self.correct,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass
class EvalReport:
    micro: Scores = field(default_factory=Scores)
    per_category: dict[str, Scores] = field(default_factory=dict)

    @property
    def precision(self) -> float:
        return self.micro.precision

    @property
    def recall(self) -> float:
        return self.micro.recall

    @property
    def f1(self) -> float:
        return self.micro.f1

    @property
    def macro(self) -> dict[str, float]:
        cats = list(self.per_category.values())
        if not cats:
            return {"precision": 0.0, "recall": 0.0, "f1": 0.0}
        n = len(cats)
        return {"precision": sum(c.precision for c in cats) / n,
                "recall": sum(c.recall for c in cats) / n,
                "f1": sum(c.f1 for c in cats) / n}

    def to_json(self) -> str:
        return json.dumps({
            "micro": self.micro.as_dict(),
            "macro": self.macro,
            "per_category": {k: v.as_dict() for k, v in sorted(self.per_category.items())},
        }, sort_keys=True)


def _triples(spans: Iterable) -> set[tuple]:
    out = set()
    for s in spans:
        if isinstance(s, tuple):
            out.add(tuple(s[:3]))
        else:
            out.add((s.start, s.end, s.category))
    return out


def evaluate(gold: Mapping[Hashable, Iterable] | Sequence[Iterable],
             pred: Mapping[Hashable, Iterable] | Sequence[Iterable]) -> EvalReport:
    """Micro-averaged exact-match scores.

    ``gold`` and ``pred`` map sentence id to spans (tuples or objects with
    start/end/category), or are equal-length sequences aligned by position.
    A prediction counts only when boundaries and category all match.
    """
    if not isinstance(gold, Mapping):
        gold = dict(enumerate(gold))
    if not isinstance(pred, Mapping):
        pred = dict(enumerate(pred))
    if set(gold) != set(pred):
        missing = sorted(map(str, set(gold) ^ set(pred)))[:5]
        raise ValueError(f"gold and prediction sentence ids differ (e.g. {', '.join(missing)})")
    g_count: Counter = Counter()
    p_count: Counter = Counter()
    c_count: Counter = Counter()
    for sid in gold:
        g = _triples(gold[sid])
        p = _triples(pred[sid])
        g_count.update(t[2] for t in g)
        p_count.update(t[2] for t in p)
        c_count.update(t[2] for t in g & p)
    report = EvalReport()
    for cat in sorted(set(g_count) | set(p_count), key=str):
        report.per_category[cat] = Scores(g_count[cat], p_count[cat], c_count[cat])
    report.micro = Scores(sum(g_count.values()), sum(p_count.values()), sum(c_count.values()))
    return report


def report_table(reports: Sequence[tuple[str, EvalReport]]) -> str:
    """Fixed-width P / R / F1 table, percentages with one decimal, rows in input order."""
    width = max([len("Model")] + [len(name) for name, _ in reports])
    lines = [f"{'Model':<{width}}  {'P':>5}  {'R':>5}  {'F1':>5}"]
    for name, rep in reports:
        lines.append(f"{name:<{width}}  {100 * rep.precision:5.1f}  {100 * rep.recall:5.1f}  {100 * rep.f1:5.1f}")
    return "\n".join(lines)
