"""Random corpora and small fixtures shared by the test modules."""

from __future__ import annotations

import numpy as np

from biaffine_ner.data import AnnotatedSentence, Entity, Sentence

ALPHABET = list("abcdefghijklmnopqrstuvwxyzÄéß0123456789.,'-")
CATEGORIES = ["PER", "LOC", "ORG", "GPE", "MISC"]


def random_token(rng) -> str:
    return "".join(rng.choice(ALPHABET, size=int(rng.integers(1, 7))))


def _flat_spans(rng, n) -> set[Entity]:
    out, i = set(), 0
    while i < n:
        if rng.random() < 0.3:
            end = min(n - 1, i + int(rng.integers(0, 3)))
            out.add(Entity(i, end, str(rng.choice(CATEGORIES))))
            i = end + 1
        else:
            i += 1
    return out


def _nested_spans(rng, n) -> set[Entity]:
    """Laminar family: grow spans inside and around a flat base layer."""
    out = set(_flat_spans(rng, n))
    for e in list(out):
        if e.end > e.start and rng.random() < 0.5:
            s = int(rng.integers(e.start, e.end + 1))
            out.add(Entity(s, s, str(rng.choice(CATEGORIES))))
        if rng.random() < 0.3:
            out.add(Entity(e.start, e.end, str(rng.choice(CATEGORIES))))
    if n > 1 and rng.random() < 0.3:
        out.add(Entity(0, n - 1, str(rng.choice(CATEGORIES))))
    return out


def random_corpus(rng, flat: bool, n_sentences: int | None = None, docs: bool | None = None,
                  features: bool = False) -> list[AnnotatedSentence]:
    n_sentences = int(rng.integers(1, 15)) if n_sentences is None else n_sentences
    docs = bool(rng.random() < 0.5) if docs is None else docs
    out, doc = [], -1
    for sid in range(n_sentences):
        if docs and (sid == 0 or rng.random() < 0.3):
            doc += 1
        n = int(rng.integers(1, 10))
        tokens = [random_token(rng) for _ in range(n)]
        gold = _flat_spans(rng, n) if flat else _nested_spans(rng, n)
        feats = [[random_token(rng)] for _ in range(n)] if features else None
        out.append(AnnotatedSentence(Sentence(tokens, id=sid, doc_id=f"doc{doc}" if docs else None,
                                              features=feats), gold))
    return out
