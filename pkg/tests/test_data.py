import json
import logging
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from biaffine_ner.data import (
    Corpus,
    DataFormatError,
    Entity,
    read_conll,
    read_corpus_file,
    read_spans,
    sentence_from_json,
    spans_to_tags,
    tags_to_spans,
    validate_spans,
    write_conll,
    write_spans,
)
from biaffine_ner.synthetic import CATEGORIES as SYNTH_CATS, LEXICONS, synthetic_corpus
from helpers import random_corpus
from oracles import interval_clash


def test_tags_to_spans_examples():
    assert tags_to_spans(["B-PER", "I-PER", "O"]) == ({Entity(0, 1, "PER")}, 0)
    assert tags_to_spans(["O", "O"]) == (set(), 0)
    assert tags_to_spans(["B-PER", "B-PER"])[0] == {Entity(0, 0, "PER"), Entity(1, 1, "PER")}
    assert spans_to_tags({Entity(0, 0, "PER"), Entity(1, 1, "PER")}, 2) == ["B-PER", "B-PER"]


def test_iob1_repair_counts():
    spans, fixed = tags_to_spans(["I-LOC", "I-LOC", "O", "B-PER", "I-LOC"])
    assert spans == {Entity(0, 1, "LOC"), Entity(3, 3, "PER"), Entity(4, 4, "LOC")}
    assert fixed == 2


def test_bad_tag_rejected():
    with pytest.raises(DataFormatError):
        tags_to_spans(["X-PER"])


def test_spans_to_tags_examples():
    assert spans_to_tags({Entity(0, 1, "PER")}, 3) == ["B-PER", "I-PER", "O"]
    with pytest.raises(DataFormatError):
        spans_to_tags({Entity(0, 2, "ORG"), Entity(2, 2, "GPE")}, 3)


@given(st.lists(st.sampled_from(["O", "B-A", "I-A", "B-B", "I-B"]), min_size=1, max_size=12))
def test_bio_extraction_never_overlaps(tags):
    spans, _ = tags_to_spans(tags)
    items = sorted(spans)
    for a, b in zip(items, items[1:]):
        assert a.end < b.start
    # tag -> span -> tag is stable once repaired
    assert tags_to_spans(spans_to_tags(spans, len(tags)))[0] == spans


def test_validate_spans_errors():
    with pytest.raises(DataFormatError, match="sentence 7"):
        validate_spans([Entity(0, 3, "A")], 3, 7)
    with pytest.raises(DataFormatError):
        validate_spans([Entity(2, 1, "A")], 3)
    with pytest.raises(DataFormatError, match="cross"):
        validate_spans([Entity(0, 1, "A"), Entity(1, 2, "B")], 3)
    validate_spans([Entity(0, 2, "A"), Entity(1, 1, "B")], 3)
    with pytest.raises(DataFormatError, match="overlap"):
        validate_spans([Entity(0, 2, "A"), Entity(1, 1, "B")], 3, flat=True)


def test_json_bank_of_china():
    obj = {"id": 0, "tokens": ["Bank", "of", "China"],
           "entities": [{"start": 0, "end": 2, "category": "ORG"}, {"start": 2, "end": 2, "category": "GPE"}]}
    s = sentence_from_json(obj)
    assert s.gold == {Entity(0, 2, "ORG"), Entity(2, 2, "GPE")}
    assert sentence_from_json({"id": 1, "tokens": ["a"], "entities": []}).gold == set()


@pytest.mark.parametrize("obj, match", [
    ({"tokens": ["a"]}, "id"),
    ({"id": "x", "tokens": ["a"]}, "integer"),
    ({"id": 3, "tokens": ["a"], "entities": [{"start": 0, "end": 1, "category": "A"}]}, "sentence 3"),
    ({"id": 4, "tokens": ["a", "b", "c"], "entities": [{"start": 0, "end": 1, "category": "A"},
                                                       {"start": 1, "end": 2, "category": "A"}]}, "cross"),
    ({"id": 5, "tokens": []}, "no tokens"),
    ({"id": 6, "tokens": ["a"], "entities": [{"start": 0}]}, "malformed"),
])
def test_json_errors(obj, match):
    with pytest.raises(DataFormatError, match=match):
        sentence_from_json(obj)


def test_read_spans_reports_line(tmp_path):
    path = tmp_path / "x.jsonl"
    path.write_text('{"id": 0, "tokens": ["a"]}\n{not json\n')
    with pytest.raises(DataFormatError, match=":2:"):
        read_spans(path)


@given(st.integers(0, 2**32 - 1))
def test_jsonl_round_trip(seed):
    corpus = random_corpus(np.random.default_rng(seed), flat=False)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "c.jsonl"
        write_spans(corpus, path)
        assert read_spans(path) == corpus
        write_spans(read_spans(path), Path(d) / "again.jsonl")
        assert path.read_bytes() == (Path(d) / "again.jsonl").read_bytes()


@given(st.integers(0, 2**32 - 1), st.booleans())
def test_conll_round_trip(seed, features):
    corpus = random_corpus(np.random.default_rng(seed), flat=True, features=features)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "c.conll"
        write_conll(corpus, path)
        assert read_conll(path) == corpus


def test_conll_file_round_trip_modulo_whitespace(tmp_path):
    text = ("-DOCSTART- O\n\nEU\tNNP\tB-ORG\nrejects  VBZ O\nGerman JJ B-MISC\n\n"
            "Peter NNP B-PER\nBlackburn NNP I-PER\n")
    src = tmp_path / "in.conll"
    src.write_text(text)
    out = tmp_path / "out.conll"
    write_conll(read_conll(src), out)
    norm = lambda s: [" ".join(line.split()) for line in s.strip().splitlines()]
    assert norm(out.read_text()) == norm(text)


def test_conll_iob1_and_errors(tmp_path, caplog):
    p = tmp_path / "a.conll"
    p.write_text("Bank I-ORG\nof I-ORG\n\nx O\n")
    with caplog.at_level(logging.WARNING):
        sents = read_conll(p)
    assert sents[0].gold == {Entity(0, 1, "ORG")} and "IOB1" in caplog.text
    p.write_text("ok O\nbroken\n")
    with pytest.raises(DataFormatError, match=":2:"):
        read_conll(p)
    p.write_text("a B-X\nb Z-X\n")
    with pytest.raises(DataFormatError):
        read_conll(p)


def test_corpus_dispatch_and_categories(tmp_path):
    corpus = random_corpus(np.random.default_rng(1), flat=True, n_sentences=6)
    write_spans(corpus, tmp_path / "c.jsonl")
    write_conll(corpus, tmp_path / "c.txt")
    assert read_corpus_file(tmp_path / "c.jsonl") == corpus
    assert read_corpus_file(tmp_path / "c.txt") == corpus
    c = Corpus({"train": corpus, "test": []})
    assert c.categories == sorted({e.category for s in corpus for e in s.gold})
    assert list(c.category_index().values()) == list(range(1, len(c.categories) + 1))
    assert c.get("dev") == []


def test_empty_files(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    (tmp_path / "e.conll").write_text("")
    assert read_spans(tmp_path / "e.jsonl") == [] and read_conll(tmp_path / "e.conll") == []


@pytest.mark.parametrize("kind", ["flat", "nested"])
def test_synthetic_corpus_properties(kind):
    c = synthetic_corpus(kind, 200, 50, seed=0)
    train, test = c["train"], c["test"]
    assert len(train) == 200 and len(test) == 50
    assert not {tuple(s.tokens) for s in train} & {tuple(s.tokens) for s in test}
    assert len(LEXICONS[kind]) == 50
    vocab = {t for s in train + test for t in s.tokens}
    assert vocab <= set(LEXICONS[kind])
    assert c.categories == SYNTH_CATS[kind] and len(c.categories) == 2
    spans = [(e.start, e.end) for s in train for e in s.gold]
    nested = any(a != b and not interval_clash(a, b) and a[0] <= b[0] and b[1] <= a[1]
                 for s in train for a in [(e.start, e.end) for e in s.gold]
                 for b in [(e.start, e.end) for e in s.gold])
    assert spans and nested == (kind == "nested")
    again = synthetic_corpus(kind, 200, 50, seed=0)
    assert again["train"] == train
    assert json.dumps([s.tokens for s in synthetic_corpus(kind, 20, 0, seed=1)["train"]]) != \
        json.dumps([s.tokens for s in train[:20]])
