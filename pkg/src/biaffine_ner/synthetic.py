"""Seeded pattern-based corpora for tests and demos.

Labels are a deterministic function of the tokens, so a model can reach
perfect accuracy.  Each variant draws from a fixed 50-word lexicon and uses
two entity categories:

* flat:   PER = first name, optionally followed by a surname; LOC = city.
* nested: ORG = "<institution> of <city>" containing a LOC; LOC = city.

Entities are always separated by at least one filler word.
"""

from __future__ import annotations

import numpy as np

from .data import AnnotatedSentence, Corpus, Entity, Sentence

FIRST_NAMES = ["Anna", "Boris", "Clara", "David", "Elena", "Felix"]
SURNAMES = ["Smith", "Jones", "Brown", "Klein", "Rossi", "Novak"]
CITIES = ["Paris", "Berlin", "Madrid", "Oslo", "Vienna", "Lisbon", "Prague", "Dublin"]
INSTITUTIONS = ["bank", "university", "museum", "ministry", "council", "embassy"]
FILLERS = ["the", "a", "met", "visited", "in", "from", "said", "and", "to", "lives",
           "works", "near", "with", "today", "yesterday", "city", "people", "went", "saw",
           "called", "house", "old", "new", "big", "small", "river", "train", "after",
           "before", "."]
NESTED_FILLERS = FILLERS + ["visitors", "staff", "opened", "closed", "praised"]

LEXICONS = {
    "flat": FIRST_NAMES + SURNAMES + CITIES + FILLERS,
    "nested": CITIES + INSTITUTIONS + ["of"] + NESTED_FILLERS,
}
CATEGORIES = {"flat": ["LOC", "PER"], "nested": ["LOC", "ORG"]}


def _sentence(kind: str, rng: np.random.Generator) -> tuple[list[str], set[Entity]]:
    fillers = FILLERS if kind == "flat" else NESTED_FILLERS
    tokens: list[str] = []
    gold: set[Entity] = set()

    def pad(lo: int, hi: int) -> None:
        for _ in range(int(rng.integers(lo, hi + 1))):
            tokens.append(fillers[int(rng.integers(len(fillers)))])

    pad(0, 2)
    for k in range(int(rng.integers(1, 4))):
        if k:
            pad(1, 2)
        start = len(tokens)
        city = CITIES[int(rng.integers(len(CITIES)))]
        if kind == "flat":
            if rng.random() < 0.5:
                tokens.append(city)
                gold.add(Entity(start, start, "LOC"))
            else:
                tokens.append(FIRST_NAMES[int(rng.integers(len(FIRST_NAMES)))])
                if rng.random() < 0.5:
                    tokens.append(SURNAMES[int(rng.integers(len(SURNAMES)))])
                gold.add(Entity(start, len(tokens) - 1, "PER"))
        else:
            if rng.random() < 0.4:
                tokens.append(city)
                gold.add(Entity(start, start, "LOC"))
            else:
                tokens += [INSTITUTIONS[int(rng.integers(len(INSTITUTIONS)))], "of", city]
                gold.add(Entity(start, start + 2, "ORG"))
                gold.add(Entity(start + 2, start + 2, "LOC"))
    pad(0, 2)
    return tokens, gold


def generate(kind: str, size: int, seed: int, exclude: set[tuple[str, ...]] | None = None,
             first_id: int = 0) -> list[AnnotatedSentence]:
    """``size`` distinct sentences, none of whose token sequences is in ``exclude``."""
    if kind not in LEXICONS:
        raise ValueError(f"unknown synthetic corpus kind {kind!r}; use flat or nested")
    rng = np.random.default_rng(seed)
    seen = set(exclude or ())
    out: list[AnnotatedSentence] = []
    attempts = 0
    while len(out) < size:
        attempts += 1
        if attempts > 100 * (size + 10):
            raise RuntimeError("could not generate enough distinct sentences")
        tokens, gold = _sentence(kind, rng)
        if tuple(tokens) in seen:
            continue
        seen.add(tuple(tokens))
        out.append(AnnotatedSentence(Sentence(tokens, id=first_id + len(out)), gold))
    return out


def synthetic_corpus(kind: str, n_train: int = 200, n_test: int = 50, seed: int = 0,
                     n_dev: int = 0) -> Corpus:
    """Train / dev / test splits with pairwise-disjoint sentences."""
    train = generate(kind, n_train, seed)
    used = {tuple(s.tokens) for s in train}
    splits = {"train": train}
    next_id = n_train
    for name, n, offset in (("dev", n_dev, 1), ("test", n_test, 2)):
        if n <= 0:
            continue
        split = generate(kind, n, seed + 7919 * offset, exclude=used, first_id=next_id)
        used |= {tuple(s.tokens) for s in split}
        splits[name] = split
        next_id += n
    return Corpus(splits)
