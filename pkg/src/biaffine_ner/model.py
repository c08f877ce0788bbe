"""The full network: embeddings -> BiLSTM -> start/end FFNNs -> biaffine scores."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .data import AnnotatedSentence, Entity, Sentence
from .decoder import DecodeMode, decode
from .embeddings import (
    CharCnnParams,
    ContextualVectorFile,
    EmbeddingDataError,
    StaticEmbeddingTable,
    build_char_vocabulary,
    char_cnn_batch,
    char_id_matrix,
    random_static_table,
    UNK_CHAR,
)
from .encoder import BiLstmParams, LstmDirection, encode, init_direction
from .scorer import (
    BiaffineParams,
    FfnnParams,
    HeadRepresentations,
    ScoreTensor,
    ffnn_heads,
    score_spans,
)

STATIC_PARAM = "word_emb"


@dataclass
class SentenceInputs:
    """Everything the network needs for one sentence, as plain arrays."""

    sentence_id: int
    length: int
    word_ids: np.ndarray | None
    word_known: np.ndarray | None
    char_ids: np.ndarray | None
    char_lengths: np.ndarray | None
    contextual: np.ndarray | None
    gold: np.ndarray | None = None     # (l, l) category ids, -1 below the diagonal


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, shape)


class BiaffineNER:
    def __init__(self, config: TrainConfig, categories: list[str], char_index: dict[str, int],
                 word_index: dict[str, int], params: dict[str, np.ndarray]):
        self.config = config
        self.categories = list(categories)
        self.char_index = dict(char_index)
        self.word_index = dict(word_index)
        self.params = params
        self._check_shapes()

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, config: TrainConfig, sentences: Iterable[AnnotatedSentence],
              static_table: StaticEmbeddingTable | None = None,
              categories: list[str] | None = None) -> "BiaffineNER":
        """Initialise parameters from ``config.seed``; vocabularies come from ``sentences``."""
        sentences = list(sentences)
        rng = np.random.default_rng(config.seed)
        tokens = [t for s in sentences for t in s.tokens]
        if categories is None:
            categories = sorted({e.category for s in sentences for e in s.gold})
        c = len(categories) + 1
        scale = config.init_scale
        params: dict[str, np.ndarray] = {}
        word_index: dict[str, int] = {}
        if config.use_static:
            if static_table is None:
                static_table = random_static_table(tokens, config.static_dim, rng)
            if static_table.dim != config.static_dim:
                raise EmbeddingDataError(
                    f"static embeddings have dim {static_table.dim}, config expects {config.static_dim}")
            word_index = dict(static_table.vocabulary)
            matrix = static_table.matrix
            params[STATIC_PARAM] = matrix.copy() if len(matrix) else np.zeros((1, config.static_dim))
        char_index = build_char_vocabulary(tokens) if config.use_char else {}
        if config.use_char:
            params["char_emb"] = rng.normal(0.0, 0.3, (len(char_index) + 2, config.char_emb_size))
            params["char_emb"][0] = 0.0
            for w in config.char_filter_widths:
                params[f"char_conv.{w}.weight"] = _glorot(rng, (w * config.char_emb_size, config.char_cnn_size))
                params[f"char_conv.{w}.bias"] = np.zeros(config.char_cnn_size)
        in_dim = config.input_dim
        for layer in range(config.lstm_layers):
            for direction in ("fw", "bw"):
                for key, value in init_direction(in_dim, config.lstm_size, rng, scale, config.forget_bias).items():
                    params[f"lstm.{layer}.{direction}.{key}"] = value
            in_dim = 2 * config.lstm_size
        for head in ("start", "end"):
            d_in = 2 * config.lstm_size
            for k in range(config.ffnn_depth):
                params[f"ffnn_{head}.{k}.weight"] = _glorot(rng, (d_in, config.ffnn_size))
                params[f"ffnn_{head}.{k}.bias"] = np.zeros(config.ffnn_size)
                d_in = config.ffnn_size
        d = config.ffnn_size
        if config.use_biaffine:
            params["biaffine.U"] = np.zeros((d, c, d))
        params["biaffine.W"] = _glorot(rng, (2 * d, c))
        params["biaffine.b"] = np.zeros(c)
        return cls(config, categories, char_index, word_index, params)

    def _check_shapes(self) -> None:
        cfg = self.config
        c = self.n_categories
        if "biaffine.b" not in self.params or self.params["biaffine.b"].shape != (c,):
            raise EmbeddingDataError(f"parameters do not match {c} categories")
        if cfg.use_static and self.params[STATIC_PARAM].shape[1] != cfg.static_dim:
            raise EmbeddingDataError("static embedding parameter does not match static_dim")
        x = self.params["lstm.0.fw.Wx"]
        if x.shape[0] != cfg.input_dim:
            raise EmbeddingDataError(f"first LSTM layer expects {x.shape[0]} inputs, config gives {cfg.input_dim}")

    @property
    def n_categories(self) -> int:
        """Entity categories plus the non-entity class."""
        return len(self.categories) + 1

    @property
    def category_index(self) -> dict[str, int]:
        return {name: i + 1 for i, name in enumerate(self.categories)}

    def trainable_names(self) -> list[str]:
        return [n for n in self.params if n != STATIC_PARAM or self.config.finetune_static]

    # -- inputs -------------------------------------------------------------

    def prepare(self, item: AnnotatedSentence | Sentence,
                contextual: ContextualVectorFile | None = None) -> SentenceInputs:
        cfg = self.config
        sent = item.sentence if isinstance(item, AnnotatedSentence) else item
        l = len(sent.tokens)
        word_ids = word_known = char_ids = char_lengths = ctx = None
        if cfg.use_static:
            idx = [self.word_index.get(t, -1) for t in sent.tokens]
            word_known = np.array([i >= 0 for i in idx], dtype=np.float64)
            word_ids = np.array([max(i, 0) for i in idx], dtype=np.int64)
        if cfg.use_char:
            ids = [[self.char_index.get(ch, UNK_CHAR) for ch in tok] for tok in sent.tokens]
            char_ids, char_lengths = char_id_matrix(ids, max(cfg.char_filter_widths))
        if cfg.use_contextual:
            if contextual is None:
                raise EmbeddingDataError(f"sentence {sent.id}: contextual vectors enabled but none supplied")
            if contextual.dim != cfg.contextual_dim:
                raise EmbeddingDataError(
                    f"contextual vectors have dim {contextual.dim}, model expects {cfg.contextual_dim}")
            ctx = contextual.vectors_for(sent.id, l)
        return SentenceInputs(sent.id, l, word_ids, word_known, char_ids, char_lengths, ctx)

    # -- forward ------------------------------------------------------------

    def leaves(self, requires_grad: bool = False, names: Iterable[str] | None = None) -> dict[str, Tensor]:
        train = set(self.trainable_names() if names is None else names) if requires_grad else set()
        return {n: Tensor(v, requires_grad=n in train, name=n) for n, v in self.params.items()}

    def forward(self, inputs: SentenceInputs, leaves: dict[str, Tensor],
                rng: np.random.Generator | None = None) -> Tensor:
        """(l, l, c) score tensor.  Dropout is applied only when ``rng`` is given."""
        return self.forward_batch([inputs], leaves, rng)[0]

    def forward_batch(self, batch: Sequence[SentenceInputs], leaves: dict[str, Tensor],
                      rng: np.random.Generator | None = None) -> list[Tensor]:
        """Score several sentences in one graph; each keeps its own recurrence."""
        cfg = self.config
        lengths = [inp.length for inp in batch]
        parts: list[Tensor] = []
        if cfg.use_contextual:
            parts.append(Tensor(np.concatenate([inp.contextual for inp in batch], axis=0)))
        if cfg.use_static:
            ids = np.concatenate([inp.word_ids for inp in batch])
            known = np.concatenate([inp.word_known for inp in batch])
            parts.append(ad.apply_mask(ad.gather(leaves[STATIC_PARAM], ids), known[:, None]))
        if cfg.use_char:
            width = max(inp.char_ids.shape[1] for inp in batch)
            char_ids = np.concatenate(
                [np.pad(inp.char_ids, ((0, 0), (0, width - inp.char_ids.shape[1]))) for inp in batch])
            char_lengths = np.concatenate([inp.char_lengths for inp in batch])
            filters = {w: (leaves[f"char_conv.{w}.weight"], leaves[f"char_conv.{w}.bias"])
                       for w in cfg.char_filter_widths}
            cnn = CharCnnParams(self.char_index, leaves["char_emb"], filters)
            parts.append(char_cnn_batch(char_ids, char_lengths, cnn))
        x = parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)
        x = ad.dropout(x, cfg.embedding_dropout, rng)

        layers = []
        for k in range(cfg.lstm_layers):
            pair = tuple(LstmDirection(leaves[f"lstm.{k}.{d}.Wx"], leaves[f"lstm.{k}.{d}.Wh"],
                                       leaves[f"lstm.{k}.{d}.b"]) for d in ("fw", "bw"))
            layers.append(pair)
        x = encode(x, BiLstmParams(layers), cfg.lstm_dropout, rng, cfg.lstm_dropout_mode, lengths)

        heads = [FfnnParams([(leaves[f"ffnn_{h}.{k}.weight"], leaves[f"ffnn_{h}.{k}.bias"])
                             for k in range(cfg.ffnn_depth)]) for h in ("start", "end")]
        hr = ffnn_heads(x, heads[0], heads[1], cfg.ffnn_dropout, rng, cfg.ffnn_activation)
        biaffine = BiaffineParams(leaves.get("biaffine.U") if cfg.use_biaffine else None,
                                  leaves["biaffine.W"], leaves["biaffine.b"])
        if len(batch) == 1:
            return [score_spans(hr, biaffine)]
        out, start = [], 0
        for n in lengths:
            rows = slice(start, start + n)
            out.append(score_spans(HeadRepresentations(ad.take(hr.h_s, rows), ad.take(hr.h_e, rows)), biaffine))
            start += n
        return out

    def score_batch(self, batch: Sequence[SentenceInputs]) -> list[ScoreTensor]:
        return [ScoreTensor(t.data) for t in self.forward_batch(batch, self.leaves())]

    def predict_batch(self, batch: Sequence[SentenceInputs], mode: DecodeMode | str) -> list[set[Entity]]:
        return [self._entities(decode(t, mode)) for t in self.score_batch(batch)]

    def _entities(self, spans) -> set[Entity]:
        return {Entity(s.start, s.end, self.categories[s.category - 1]) for s in spans}

    def score(self, inputs: SentenceInputs) -> ScoreTensor:
        return ScoreTensor(self.forward(inputs, self.leaves()).data)

    def predict(self, inputs: SentenceInputs, mode: DecodeMode | str) -> set[Entity]:
        return self._entities(decode(self.score(inputs), mode))
