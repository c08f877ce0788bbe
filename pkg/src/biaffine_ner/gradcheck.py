"""Finite-difference check of the full training loss on a small network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .data import AnnotatedSentence, Entity, Sentence
from .model import BiaffineNER
from .training import batch_gradients, prepare_split, sentence_loss

TOLERANCE = 1e-4


def reduced_config(seed: int = 0) -> TrainConfig:
    """BiLSTM 8, FFNN 6, 5 + 3*2 = 11 input dims, every path trainable, no dropout."""
    return TrainConfig(
        lstm_size=8, ffnn_size=6, static_dim=5, finetune_static=True,
        char_emb_size=3, char_cnn_size=2,
        embedding_dropout=0.0, lstm_dropout=0.0, ffnn_dropout=0.0, seed=seed,
    )


def tiny_sentences() -> list[AnnotatedSentence]:
    """Three sentences of length <= 4 over two entity categories (c = 3)."""
    raw = [
        (["Bank", "of", "China"], {Entity(0, 2, "ORG"), Entity(2, 2, "LOC")}),
        (["in", "Oslo"], {Entity(1, 1, "LOC")}),
        (["the", "big", "bank", "x"], set()),
    ]
    return [AnnotatedSentence(Sentence(toks, id=i), gold) for i, (toks, gold) in enumerate(raw)]


@dataclass
class GroupResult:
    name: str
    size: int
    checked: int
    error: float

    @property
    def ok(self) -> bool:
        return self.error < TOLERANCE


def check_model(model: BiaffineNER, sentences, entries_per_group: int = 24, seed: int = 0,
                eps: float = 1e-6) -> list[GroupResult]:
    """Relative error between backprop and central differences, per parameter."""
    data = prepare_split(model, sentences)

    def loss() -> float:
        leaves = model.leaves()
        total = 0.0
        for t, inp in zip(model.forward_batch(data, leaves), data):
            total += float(sentence_loss(t, inp.gold).data)
        return total

    _, _, grads = batch_gradients(model, data, None)
    rng = np.random.default_rng(seed)
    results = []
    for name in model.trainable_names():
        value = model.params[name]
        flat = np.arange(value.size)
        pick = flat if value.size <= entries_per_group else rng.choice(flat, entries_per_group, replace=False)
        entries = [np.unravel_index(int(k), value.shape) for k in pick]
        numeric = ad.numerical_gradient(loss, value, eps=eps, entries=entries)
        err = ad.relative_error(grads[name], numeric)
        results.append(GroupResult(name, value.size, len(entries), err))
    return results


def run(seed: int = 0, entries_per_group: int = 24) -> list[GroupResult]:
    cfg = reduced_config(seed)
    sentences = tiny_sentences()
    model = BiaffineNER.build(cfg, sentences)
    # Randomise everything, including the zero-initialised bilinear tensor and
    # biases, so that no gradient path is trivially zero.
    rng = np.random.default_rng([seed, 1])
    for name, value in model.params.items():
        value[...] = rng.normal(0.0, 0.5, value.shape)
    model.params["char_emb"][0] = 0.0
    return check_model(model, sentences, entries_per_group, seed)
