"""Span-level softmax cross-entropy training with Adam."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .data import AnnotatedSentence
from .decoder import DecodeMode
from .embeddings import ContextualVectorFile
from .evaluation import EvalReport, evaluate
from .model import BiaffineNER, SentenceInputs

log = logging.getLogger(__name__)

INVALID = -1


class TrainingError(ValueError):
    pass


def gold_label_tensor(length: int, spans: Iterable[tuple[int, int, int]]) -> np.ndarray:
    """(l, l) gold category per cell: 0 for non-entity, -1 where start > end."""
    gold = np.zeros((length, length), dtype=np.int64)
    gold[np.tril_indices(length, -1)] = INVALID
    for s, e, cat in spans:
        if not (0 <= s <= e < length):
            raise TrainingError(f"gold span ({s}, {e}) is not a valid span of a {length}-token sentence")
        if cat <= 0:
            raise TrainingError(f"gold span ({s}, {e}) has non-entity category {cat}")
        if gold[s, e] not in (0, cat):
            raise TrainingError(f"gold span ({s}, {e}) has two categories")
        gold[s, e] = cat
    return gold


def sentence_loss(scores: Tensor, gold: np.ndarray) -> Tensor:
    """Sum of per-span cross-entropies over every cell with start <= end."""
    l = scores.shape[0]
    if gold.shape != (l, l):
        raise TrainingError(f"gold labels {gold.shape} do not match score tensor {scores.shape}")
    starts, ends = np.triu_indices(l)
    labels = gold[starts, ends]
    if (labels < 0).any():
        raise TrainingError("gold labels mark a valid span as invalid")
    logits = ad.take(scores, (starts, ends))
    return ad.softmax_cross_entropy(logits, labels)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, config: TrainConfig) -> "AdamState":
        return cls(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """In-place Adam step on every parameter that has a gradient."""
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step
        c2 = 1.0 - b2 ** self.step
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            m, v = self.m[name], self.v[name]
            tmp = np.multiply(g, 1.0 - b1)
            m *= b1
            m += tmp
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - b2
            v *= b2
            v += tmp
            # lr * (m / c1) / (sqrt(v / c2) + eps), without temporaries
            np.sqrt(v, out=tmp)
            tmp *= 1.0 / np.sqrt(c2)
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= self.lr / c1
            params[name] -= tmp


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


# ---------------------------------------------------------------------------
# epochs


def batch_gradients(model: BiaffineNER, batch: Sequence[SentenceInputs],
                    rng: np.random.Generator | None) -> tuple[float, int, dict[str, np.ndarray]]:
    """Summed loss, span count and parameter gradients for a batch (one graph)."""
    leaves = model.leaves(requires_grad=True)
    losses = [sentence_loss(t, inp.gold) for t, inp in zip(model.forward_batch(batch, leaves, rng), batch)]
    loss = losses[0]
    for extra in losses[1:]:
        loss = ad.add(loss, extra)
    loss.backward()
    grads = {n: (t.grad if t.grad is not None else np.zeros_like(t.data))
             for n, t in leaves.items() if t.requires_grad}
    n_spans = sum(inp.length * (inp.length + 1) // 2 for inp in batch)
    return float(loss.data), n_spans, grads


def train_epoch(model: BiaffineNER, data: Sequence[SentenceInputs], opt: AdamState,
                config: TrainConfig, epoch: int = 1) -> float:
    """One pass over ``data`` in seeded shuffled order; returns mean per-span loss.

    Dropout masks come from a generator seeded by (seed, epoch, batch), so a
    run is reproducible from the config alone.
    """
    if not data:
        raise TrainingError("cannot train on an empty corpus")
    order = np.random.default_rng([config.seed, epoch]).permutation(len(data))
    total_loss, total_spans = 0.0, 0
    for k, b in enumerate(range(0, len(order), config.batch_size)):
        batch = [data[i] for i in order[b:b + config.batch_size]]
        rng = np.random.default_rng([config.seed, epoch, k])
        loss, n_spans, grads = batch_gradients(model, batch, rng)
        total_loss += loss
        total_spans += n_spans
        clip_by_global_norm(grads, config.clip_norm)
        opt.update(model.params, grads)
    return total_loss / total_spans


def select_model(dev_scores: Sequence[float | None] | None, n_epochs: int | None = None) -> int:
    """1-based epoch to keep: best dev F1 (earliest on ties), else the last epoch."""
    dev_scores = list(dev_scores or [])
    best = None
    for epoch, score in enumerate(dev_scores, 1):
        if score is not None and (best is None or score > dev_scores[best - 1]):
            best = epoch
    if best is not None:
        return best
    last = len(dev_scores) if n_epochs is None else n_epochs
    if last < 1:
        raise TrainingError("no epoch completed")
    return last


# ---------------------------------------------------------------------------
# evaluation and the full loop


PREDICT_BATCH = 32


def predict_split(model: BiaffineNER, data: Sequence[SentenceInputs], mode: DecodeMode | str,
                  pool: ThreadPoolExecutor | None = None) -> list[set]:
    """Entity sets for every sentence; chunks may be spread over ``pool``."""
    chunks = [data[i:i + PREDICT_BATCH] for i in range(0, len(data), PREDICT_BATCH)]
    run = (lambda chunk: model.predict_batch(chunk, mode))
    results = pool.map(run, chunks) if pool is not None else map(run, chunks)
    return [entities for chunk in results for entities in chunk]


def evaluate_split(model: BiaffineNER, sentences: Sequence[AnnotatedSentence],
                   data: Sequence[SentenceInputs], mode: DecodeMode | str,
                   pool: ThreadPoolExecutor | None = None) -> EvalReport:
    # Aligned by position: ids may repeat when splits are concatenated.
    return evaluate([s.gold for s in sentences], predict_split(model, data, mode, pool))


def prepare_split(model: BiaffineNER, sentences: Sequence[AnnotatedSentence],
                  contextual: ContextualVectorFile | None = None) -> list[SentenceInputs]:
    cats = model.category_index
    out = []
    for s in sentences:
        inp = model.prepare(s, contextual)
        unknown = {e.category for e in s.gold} - set(cats)
        if unknown:
            raise TrainingError(f"sentence {s.id}: categories {sorted(unknown)} unknown to the model")
        inp.gold = gold_label_tensor(inp.length, [(e.start, e.end, cats[e.category]) for e in s.gold])
        out.append(inp)
    return out


@dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int
    best_params: dict[str, np.ndarray]


def fit(model: BiaffineNER, train: Sequence[AnnotatedSentence], dev: Sequence[AnnotatedSentence] = (),
        threads: int = 1, contextual: dict[str, ContextualVectorFile] | None = None,
        on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train for ``config.epochs`` epochs (or until early stopping).

    The model ends up holding the selected checkpoint's parameters.
    """
    cfg = model.config
    contextual = contextual or {}
    mode = DecodeMode.parse(cfg.mode)
    train_data = prepare_split(model, train, contextual.get("train"))
    dev_data = prepare_split(model, dev, contextual.get("dev")) if dev else []
    opt = AdamState.from_config(cfg)
    history: list[dict] = []
    snapshots: dict[int, dict[str, np.ndarray]] = {}
    dev_f1s: list[float | None] = []
    best_dev, since_best = -1.0, 0
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            loss = train_epoch(model, train_data, opt, cfg, epoch)
            row: dict = {"epoch": epoch, "loss": round(loss, 12)}
            stop = False
            if cfg.eval_train or cfg.early_stop_metric == "train_f1":
                rep = evaluate_split(model, train, train_data, mode, pool)
                row.update(train_p=rep.precision, train_r=rep.recall, train_f1=rep.f1)
                if cfg.early_stop_metric == "train_f1" and rep.f1 >= 1.0:
                    stop = True
            if dev_data:
                rep = evaluate_split(model, dev, dev_data, mode, pool)
                row.update(dev_p=rep.precision, dev_r=rep.recall, dev_f1=rep.f1)
                dev_f1s.append(rep.f1)
                if rep.f1 > best_dev:
                    best_dev, since_best = rep.f1, 0
                    snapshots = {epoch: {n: v.copy() for n, v in model.params.items()}}
                else:
                    since_best += 1
                if cfg.early_stop_metric == "dev_f1" and since_best >= cfg.patience:
                    stop = True
            else:
                dev_f1s.append(None)
            history.append(row)
            log.info("epoch %d: %s", epoch, row)
            if on_epoch is not None:
                on_epoch(row)
            if stop:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    best = select_model(dev_f1s, len(history))
    if best in snapshots:
        model.params.update({n: v.copy() for n, v in snapshots[best].items()})
    return TrainResult(history, best, {n: v.copy() for n, v in model.params.items()})
