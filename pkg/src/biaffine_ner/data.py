"""Corpora: BIO-tagged CoNLL files (flat) and JSON-lines span files (nested).

All span indices are 0-based and the end index is *inclusive*: the entity
"Bank of China" in ``["Bank", "of", "China"]`` is ``(0, 2)``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

log = logging.getLogger(__name__)


class DataFormatError(ValueError):
    pass


class Entity(NamedTuple):
    start: int
    end: int        # inclusive
    category: str


@dataclass
class Sentence:
    tokens: list[str]
    id: int = 0
    doc_id: str | None = None
    features: list[list[str]] | None = None   # extra CoNLL columns between token and tag

    def __post_init__(self):
        if not self.tokens:
            raise DataFormatError(f"sentence {self.id} has no tokens")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class AnnotatedSentence:
    sentence: Sentence
    gold: set[Entity] = field(default_factory=set)

    def __post_init__(self):
        self.gold = {Entity(*e) for e in self.gold}
        validate_spans(self.gold, len(self.sentence), self.sentence.id)

    @property
    def tokens(self) -> list[str]:
        return self.sentence.tokens

    @property
    def id(self) -> int:
        return self.sentence.id


def _crossing(a: Entity, b: Entity) -> bool:
    return (a.start < b.start <= a.end < b.end) or (b.start < a.start <= b.end < a.end)


def validate_spans(spans: Iterable[Entity], length: int, sentence_id=None, flat: bool = False) -> None:
    """Raise DataFormatError on out-of-range, reversed, crossing (or, if ``flat``, overlapping) spans."""
    spans = sorted(spans)
    where = f"sentence {sentence_id}: " if sentence_id is not None else ""
    for e in spans:
        if e.start > e.end:
            raise DataFormatError(f"{where}span start {e.start} > end {e.end}")
        if e.start < 0 or e.end >= length:
            raise DataFormatError(f"{where}span ({e.start}, {e.end}) outside 0..{length - 1}")
    for i, a in enumerate(spans):
        for b in spans[i + 1:]:
            if _crossing(a, b):
                raise DataFormatError(f"{where}spans {tuple(a)} and {tuple(b)} cross")
            if flat and a.start <= b.end and b.start <= a.end:
                raise DataFormatError(f"{where}spans {tuple(a)} and {tuple(b)} overlap")


@dataclass
class Corpus:
    splits: dict[str, list[AnnotatedSentence]] = field(default_factory=dict)

    @property
    def categories(self) -> list[str]:
        return sorted({e.category for split in self.splits.values() for s in split for e in s.gold})

    def category_index(self) -> dict[str, int]:
        """Category name -> index; 0 is reserved for non-entity."""
        return {name: i + 1 for i, name in enumerate(self.categories)}

    def __getitem__(self, name: str) -> list[AnnotatedSentence]:
        return self.splits[name]

    def get(self, name: str) -> list[AnnotatedSentence]:
        return self.splits.get(name, [])


# ---------------------------------------------------------------------------
# BIO <-> spans


def tags_to_spans(tags: Sequence[str]) -> tuple[set[Entity], int]:
    """Extract entities from BIO tags; also returns how many IOB1-style starts were repaired.

    An ``I-X`` that does not continue an ``X`` entity starts a new one.
    """
    spans: set[Entity] = set()
    repaired = 0
    start, cat = None, None
    for i, tag in enumerate(list(tags) + ["O"]):
        if tag == "O":
            prefix, name = "O", None
        elif len(tag) > 2 and tag[1] == "-" and tag[0] in "BI":
            prefix, name = tag[0], tag[2:]
        else:
            raise DataFormatError(f"bad BIO tag {tag!r} at token {i}")
        if prefix == "I" and cat == name:
            continue
        if start is not None:
            spans.add(Entity(start, i - 1, cat))
            start, cat = None, None
        if prefix == "I":
            repaired += 1
        if prefix != "O":
            start, cat = i, name
    return spans, repaired


def spans_to_tags(spans: Iterable[Entity], length: int) -> list[str]:
    spans = set(spans)
    validate_spans(spans, length, flat=True)
    tags = ["O"] * length
    for e in spans:
        tags[e.start] = "B-" + e.category
        for i in range(e.start + 1, e.end + 1):
            tags[i] = "I-" + e.category
    return tags


# ---------------------------------------------------------------------------
# CoNLL


def read_conll(path: str | Path, first_id: int = 0) -> list[AnnotatedSentence]:
    """One token per line, tag in the last column, blank line between sentences.

    ``-DOCSTART-`` lines open a new document.
    """
    out: list[AnnotatedSentence] = []
    rows: list[list[str]] = []
    doc_count = 0
    doc_id: str | None = None
    repaired = 0

    def flush():
        nonlocal rows, repaired
        if not rows:
            return
        tokens = [r[0] for r in rows]
        tags = [r[-1] for r in rows]
        feats = [r[1:-1] for r in rows]
        try:
            spans, fixed = tags_to_spans(tags)
        except DataFormatError as exc:
            raise DataFormatError(f"{path}: sentence ending before line {lineno}: {exc}") from None
        repaired += fixed
        sent = Sentence(tokens, id=first_id + len(out), doc_id=doc_id,
                        features=feats if any(feats) else None)
        out.append(AnnotatedSentence(sent, spans))
        rows = []

    lineno = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            cols = line.split()
            if not cols:
                flush()
                continue
            if cols[0] == "-DOCSTART-":
                flush()
                doc_id = f"doc{doc_count}"
                doc_count += 1
                continue
            if len(cols) < 2:
                raise DataFormatError(f"{path}:{lineno}: expected token and tag columns, got {line.rstrip()!r}")
            rows.append(cols)
    lineno += 1
    flush()
    if repaired:
        log.warning("%s: %d entities started with I- (IOB1); normalised to B-", path, repaired)
    return out


def write_conll(sentences: Iterable[AnnotatedSentence], path: str | Path) -> None:
    """Write IOB2 tags; extra feature columns are kept; fails on overlapping spans."""
    lines: list[str] = []
    current_doc = None
    for s in sentences:
        if s.sentence.doc_id is not None and s.sentence.doc_id != current_doc:
            lines.extend(["-DOCSTART- O", ""])
            current_doc = s.sentence.doc_id
        try:
            tags = spans_to_tags(s.gold, len(s.tokens))
        except DataFormatError as exc:
            raise DataFormatError(f"sentence {s.id} cannot be written as BIO: {exc}") from None
        feats = s.sentence.features or [[] for _ in s.tokens]
        for tok, f, tag in zip(s.tokens, feats, tags):
            lines.append(" ".join([tok, *f, tag]))
        lines.append("")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# ---------------------------------------------------------------------------
# JSON lines


def sentence_to_json(s: AnnotatedSentence) -> dict:
    obj = {"id": s.id, "tokens": list(s.tokens),
           "entities": [{"start": e.start, "end": e.end, "category": e.category} for e in sorted(s.gold)]}
    if s.sentence.doc_id is not None:
        obj["doc_id"] = s.sentence.doc_id
    return obj


def sentence_from_json(obj: dict, where: str = "") -> AnnotatedSentence:
    try:
        sid = obj["id"]
        tokens = obj["tokens"]
        entities = obj.get("entities", [])
    except (KeyError, TypeError):
        raise DataFormatError(f"{where}object needs 'id' and 'tokens'") from None
    if not isinstance(sid, int) or isinstance(sid, bool):
        raise DataFormatError(f"{where}sentence id must be an integer, got {sid!r}")
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise DataFormatError(f"sentence {sid}: tokens must be a list of strings")
    try:
        gold = {Entity(int(e["start"]), int(e["end"]), str(e["category"])) for e in entities}
    except (KeyError, TypeError, ValueError):
        raise DataFormatError(f"sentence {sid}: malformed entity") from None
    return AnnotatedSentence(Sentence(tokens, id=sid, doc_id=obj.get("doc_id")), gold)


def read_spans(path: str | Path) -> list[AnnotatedSentence]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            out.append(sentence_from_json(obj, where=f"{path}:{lineno}: "))
    return out


def write_spans(sentences: Iterable[AnnotatedSentence], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(json.dumps(sentence_to_json(s), ensure_ascii=False) + "\n")


def read_corpus_file(path: str | Path) -> list[AnnotatedSentence]:
    """Dispatch on extension: ``.jsonl``/``.json`` are span files, anything else CoNLL."""
    suffix = Path(path).suffix.lower()
    if suffix in (".jsonl", ".json"):
        return read_spans(path)
    return read_conll(path)
