"""Greedy ranked span decoding under nested or flat constraints."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .scorer import ScoreTensor

NON_ENTITY = 0
ORACLE_MAX_LENGTH = 10


@dataclass(frozen=True, order=True)
class Span:
    start: int
    end: int   # inclusive

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"span start {self.start} > end {self.end}")


@dataclass(frozen=True)
class LabeledSpan:
    span: Span
    category: int
    score: float

    def __post_init__(self):
        if self.category == NON_ENTITY:
            raise ValueError("a labeled span cannot carry the non-entity category")

    @property
    def start(self) -> int:
        return self.span.start

    @property
    def end(self) -> int:
        return self.span.end

    def key(self) -> tuple[int, int, int]:
        return self.span.start, self.span.end, self.category


class DecodeMode(enum.Enum):
    NESTED = "nested"
    FLAT = "flat"

    @classmethod
    def parse(cls, value: "str | DecodeMode") -> "DecodeMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown decode mode {value!r}; use nested or flat") from None


def _as_scores(t: ScoreTensor | np.ndarray) -> np.ndarray:
    return t.scores if isinstance(t, ScoreTensor) else ScoreTensor(t).scores


def label_spans(t: ScoreTensor | np.ndarray) -> list[LabeledSpan]:
    """Argmax category per valid cell, dropping cells whose argmax is non-entity.

    ``np.argmax`` breaks ties toward the lowest category index.
    """
    scores = _as_scores(t)
    starts, ends = np.triu_indices(scores.shape[0])
    cells = scores[starts, ends]
    best = np.argmax(cells, axis=1)
    keep = np.nonzero(best != NON_ENTITY)[0]
    return [LabeledSpan(Span(int(starts[i]), int(ends[i])), int(best[i]), float(cells[i, best[i]]))
            for i in keep]


def clashes(a: Span, b: Span) -> bool:
    """Partial overlap where neither span contains the other."""
    return (a.start < b.start <= a.end < b.end) or (b.start < a.start <= b.end < a.end)


def contains_or_inside(a: Span, b: Span) -> bool:
    return (a.start <= b.start and b.end <= a.end) or (b.start <= a.start and a.end <= b.end)


def rank_key(c: LabeledSpan) -> tuple:
    # score desc, start asc, end desc (longer first), category asc
    return (-c.score, c.start, -c.end, c.category)


def select(candidates: Iterable[LabeledSpan], mode: DecodeMode | str) -> list[LabeledSpan]:
    """Greedy acceptance in rank order; returns accepted spans in rank order."""
    mode = DecodeMode.parse(mode)
    accepted: list[LabeledSpan] = []
    for cand in sorted(candidates, key=rank_key):
        ok = True
        for prev in accepted:
            if clashes(cand.span, prev.span) or (
                    mode is DecodeMode.FLAT and contains_or_inside(cand.span, prev.span)):
                ok = False
                break
        if ok:
            accepted.append(cand)
    return accepted


def decode(t: ScoreTensor | np.ndarray, mode: DecodeMode | str) -> set[LabeledSpan]:
    return set(select(label_spans(t), mode))


def oracle_decode(t: ScoreTensor | np.ndarray, mode: DecodeMode | str) -> set[LabeledSpan]:
    """Slow reference for :func:`decode`.

    Written without the helpers above: per-cell argmax by explicit loops,
    best-remaining candidate by repeated linear scans, and conflicts judged
    on sets of covered token positions.
    """
    mode = DecodeMode.parse(mode)
    scores = _as_scores(t)
    length, _, n_cat = scores.shape
    if length > ORACLE_MAX_LENGTH:
        raise ValueError(f"oracle_decode is limited to sentences of <= {ORACLE_MAX_LENGTH} tokens")

    pool = []
    for s in range(length):
        for e in range(s, length):
            best_k, best_v = 0, scores[s, e, 0]
            for k in range(1, n_cat):
                if scores[s, e, k] > best_v:
                    best_k, best_v = k, scores[s, e, k]
            if best_k != 0:
                pool.append((s, e, best_k, float(best_v)))

    def before(x, y) -> bool:
        if x[3] != y[3]:
            return x[3] > y[3]
        if x[0] != y[0]:
            return x[0] < y[0]
        if x[1] != y[1]:
            return x[1] > y[1]
        return x[2] < y[2]

    def conflict(x, y) -> bool:
        a = set(range(x[0], x[1] + 1))
        b = set(range(y[0], y[1] + 1))
        if not a & b:
            return False
        if mode is DecodeMode.FLAT:
            return True
        return not (a <= b or b <= a)

    chosen = []
    while pool:
        top = pool[0]
        for cand in pool[1:]:
            if before(cand, top):
                top = cand
        pool.remove(top)
        if all(not conflict(top, other) for other in chosen):
            chosen.append(top)
    return {LabeledSpan(Span(s, e), k, v) for s, e, k, v in chosen}


def is_flat(spans: Iterable) -> bool:
    """True when no two spans overlap at all."""
    items = sorted((s.start, s.end) for s in spans)
    return all(prev[1] < cur[0] for prev, cur in zip(items, items[1:]))


def is_nested(spans: Iterable) -> bool:
    """True when no two spans cross (disjoint or one contains the other)."""
    items = [Span(s.start, s.end) for s in spans]
    return not any(clashes(a, b) for i, a in enumerate(items) for b in items[i + 1:])
