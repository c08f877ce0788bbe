import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from biaffine_ner import gradcheck
from biaffine_ner.autodiff import Tensor
from biaffine_ner.config import TrainConfig
from biaffine_ner.data import AnnotatedSentence, Entity, Sentence
from biaffine_ner.embeddings import ContextualVectorFile
from biaffine_ner.model import BiaffineNER
from biaffine_ner.training import (
    AdamState,
    TrainingError,
    clip_by_global_norm,
    fit,
    gold_label_tensor,
    prepare_split,
    select_model,
    sentence_loss,
    train_epoch,
)
from oracles import loop_span_loss

SMALL = dict(lstm_size=6, lstm_layers=2, ffnn_size=5, static_dim=4, char_emb_size=3, char_cnn_size=2)


def _sentences():
    return gradcheck.tiny_sentences()


def test_gold_label_tensor():
    g = gold_label_tensor(3, [(0, 2, 1), (2, 2, 2)])
    assert g[0, 2] == 1 and g[2, 2] == 2 and g[1, 0] == -1 and g[0, 0] == 0
    with pytest.raises(TrainingError):
        gold_label_tensor(3, [(1, 3, 1)])
    with pytest.raises(TrainingError):
        gold_label_tensor(3, [(0, 0, 0)])
    with pytest.raises(TrainingError):
        gold_label_tensor(3, [(0, 0, 1), (0, 0, 2)])


def test_loss_examples():
    assert sentence_loss(Tensor(np.zeros((1, 1, 2))), gold_label_tensor(1, [])).data == pytest.approx(math.log(2))
    peaked = np.zeros((2, 2, 3))
    peaked[..., 0] = 1e4
    peaked[0, 1] = [0, 1e4, 0]
    gold = gold_label_tensor(2, [(0, 1, 1)])
    assert sentence_loss(Tensor(peaked), gold).data == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(TrainingError):
        sentence_loss(Tensor(np.zeros((2, 2, 3))), gold_label_tensor(3, []))
    bad = gold_label_tensor(2, [])
    bad[0, 1] = -1
    with pytest.raises(TrainingError):
        sentence_loss(Tensor(np.zeros((2, 2, 3))), bad)


@given(st.integers(1, 5), st.integers(2, 4), st.integers(0, 10**6))
def test_loss_matches_loop_oracle_and_is_nonnegative(l, c, seed):
    rng = np.random.default_rng(seed)
    scores = rng.normal(scale=3, size=(l, l, c))
    cells = {}
    for s in range(l):
        for e in range(s, l):
            if rng.random() < 0.3:
                cells[(s, e)] = int(rng.integers(1, c))
    gold = gold_label_tensor(l, [(s, e, k) for (s, e), k in cells.items()])
    got = float(sentence_loss(Tensor(scores), gold).data)
    assert got == pytest.approx(loop_span_loss(scores, cells), abs=1e-12)
    assert got > 0


def test_adam_matches_reference_formula():
    rng = np.random.default_rng(0)
    p0 = rng.normal(size=(3, 2))
    params = {"w": p0.copy()}
    opt = AdamState()
    m = v = np.zeros_like(p0)
    ref = p0.copy()
    for t in range(1, 4):
        g = rng.normal(size=p0.shape)
        opt.update(params, {"w": g.copy()})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(params["w"], ref, rtol=1e-12, atol=1e-15)


def test_clip_by_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_by_global_norm(grads, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose([grads["a"][0], grads["b"][0]], [0.6, 0.8])
    small = {"a": np.array([0.3])}
    clip_by_global_norm(small, 1.0)
    assert small["a"][0] == 0.3


def test_select_model_rules():
    assert select_model([70, 75, 73]) == 2
    assert select_model([None] * 50, 50) == 50
    assert select_model([], 50) == 50
    assert select_model([0.8, 0.9, 0.9]) == 2
    with pytest.raises(TrainingError):
        select_model([], 0)


def _model(**kw):
    cfg = TrainConfig(**{**SMALL, "embedding_dropout": 0.0, "lstm_dropout": 0.0, "ffnn_dropout": 0.0, **kw})
    return BiaffineNER.build(cfg, _sentences())


def test_one_sentence_loss_decreases():
    model = _model(batch_size=1)
    data = prepare_split(model, _sentences()[:1])
    opt = AdamState.from_config(model.config)
    losses = [train_epoch(model, data, opt, model.config, epoch) for epoch in range(1, 4)]
    assert losses[0] > losses[1] > losses[2]


def test_zero_learning_rate_keeps_parameters():
    model = _model(learning_rate=0.0, embedding_dropout=0.5)
    before = {n: v.copy() for n, v in model.params.items()}
    train_epoch(model, prepare_split(model, _sentences()), AdamState.from_config(model.config), model.config)
    for n, v in model.params.items():
        assert np.array_equal(v, before[n]), n


def test_seeded_runs_identical_and_empty_corpus_rejected():
    runs = []
    for _ in range(2):
        model = BiaffineNER.build(TrainConfig(**SMALL, epochs=3), _sentences())
        runs.append(fit(model, _sentences()).history)
    assert runs[0] == runs[1]
    model = _model()
    with pytest.raises(TrainingError):
        train_epoch(model, [], AdamState(), model.config)


def test_fit_keeps_best_dev_checkpoint():
    model = BiaffineNER.build(TrainConfig(**SMALL, epochs=4, learning_rate=0.05), _sentences())
    seen = []
    result = fit(model, _sentences(), _sentences(), on_epoch=seen.append)
    dev = [row["dev_f1"] for row in result.history]
    assert result.best_epoch == select_model(dev)
    assert len(seen) == 4 and all("dev_p" in row for row in seen)
    for n, v in result.best_params.items():
        assert np.array_equal(model.params[n], v)


def _contextual(sentences, dim, seed=0):
    rng = np.random.default_rng(seed)
    return ContextualVectorFile(dim, {s.id: rng.normal(size=(len(s.tokens), dim)) for s in sentences})


@pytest.mark.parametrize("flags", [
    {},
    {"use_biaffine": False},
    {"use_contextual": True, "contextual_dim": 7},
    {"use_contextual": True, "contextual_dim": 7, "use_static": False},
    {"use_char": False},
    {"lstm_dropout_mode": "recurrent"},
    {"ffnn_activation": "relu", "ffnn_depth": 2, "finetune_static": True},
])
def test_every_ablation_trains(flags):
    cfg = TrainConfig(**{**SMALL, **flags, "epochs": 2})
    sents = _sentences()
    model = BiaffineNER.build(cfg, sents)
    assert model.params["lstm.0.fw.Wx"].shape[0] == cfg.input_dim
    assert ("biaffine.U" in model.params) == cfg.use_biaffine
    ctx = {"train": _contextual(sents, 7)} if cfg.use_contextual else None
    before = {n: v.copy() for n, v in model.params.items()}
    result = fit(model, sents, contextual=ctx)
    assert len(result.history) == 2 and np.isfinite(result.history[-1]["loss"])
    frozen = [n for n in model.params if n not in model.trainable_names()]
    for n in model.params:
        changed = not np.array_equal(model.params[n], before[n])
        assert changed == (n not in frozen), n


@pytest.mark.parametrize("flags", [{"use_biaffine": False}, {"use_char": False, "ffnn_activation": "relu"}])
def test_ablated_gradients_match_finite_differences(flags):
    cfg = gradcheck.reduced_config().replace(**flags)
    model = BiaffineNER.build(cfg, _sentences())
    rng = np.random.default_rng(3)
    for v in model.params.values():
        v[...] = rng.normal(0.0, 0.5, v.shape)
    for r in gradcheck.check_model(model, _sentences(), entries_per_group=8):
        assert r.ok, (r.name, r.error)


def test_prepare_rejects_unknown_category():
    model = _model()
    odd = AnnotatedSentence(Sentence(["x"], id=9), {Entity(0, 0, "WEAPON")})
    with pytest.raises(TrainingError, match="WEAPON"):
        prepare_split(model, [odd])
