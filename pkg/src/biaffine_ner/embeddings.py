"""Token input vectors: static word embeddings, character CNN, contextual vectors."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

log = logging.getLogger(__name__)

PAD_CHAR = 0
UNK_CHAR = 1
CTXV_MAGIC = b"CTXV"


class EmbeddingDataError(ValueError):
    """Input vectors are missing or inconsistent with the configuration."""


# ---------------------------------------------------------------------------
# static embeddings


@dataclass
class StaticEmbeddingTable:
    vocabulary: dict[str, int]
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise EmbeddingDataError(f"embedding matrix must be 2-D, got shape {self.matrix.shape}")
        n = self.matrix.shape[0]
        bad = [t for t, i in self.vocabulary.items() if not 0 <= i < n]
        if bad:
            raise EmbeddingDataError(f"{len(bad)} vocabulary entries point outside the {n}-row matrix")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.vocabulary)

    def index(self, token: str) -> int | None:
        return self.vocabulary.get(token)


def lookup_static(token: str, table: StaticEmbeddingTable) -> np.ndarray:
    """Row for ``token`` (case-sensitive); zeros when out of vocabulary."""
    i = table.index(token)
    if i is None:
        return np.zeros(table.dim)
    return table.matrix[i].copy()


def load_static_embeddings(path: str | Path, dim: int | None = None,
                           restrict_to: Iterable[str] | None = None) -> StaticEmbeddingTable:
    """Read a fastText/word2vec style text file.

    An optional ``<count> <dim>`` header line is recognised.  When ``restrict_to``
    is given only those tokens are kept, which keeps memory bounded for large
    files.  Duplicate tokens keep their first row.
    """
    keep = set(restrict_to) if restrict_to is not None else None
    vocab: dict[str, int] = {}
    rows: list[np.ndarray] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if not parts or parts == [""]:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                header_dim = int(parts[1])
                if dim is not None and header_dim != dim:
                    raise EmbeddingDataError(f"{path}: header dim {header_dim} != expected {dim}")
                dim = header_dim
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                raise EmbeddingDataError(f"{path}:{lineno}: expected {dim} values, got {len(values)}")
            if token in vocab or (keep is not None and token not in keep):
                continue
            try:
                rows.append(np.array(values, dtype=np.float64))
            except ValueError:
                raise EmbeddingDataError(f"{path}:{lineno}: non-numeric value") from None
            vocab[token] = len(rows) - 1
    if dim is None:
        raise EmbeddingDataError(f"{path}: no embeddings found")
    matrix = np.vstack(rows) if rows else np.zeros((0, dim))
    return StaticEmbeddingTable(vocab, matrix)


def write_static_embeddings(table: StaticEmbeddingTable, path: str | Path, header: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"{len(table)} {table.dim}\n")
        for token, i in sorted(table.vocabulary.items(), key=lambda kv: kv[1]):
            fh.write(token + " " + " ".join(repr(float(v)) for v in table.matrix[i]) + "\n")


def random_static_table(tokens: Iterable[str], dim: int, rng: np.random.Generator) -> StaticEmbeddingTable:
    """Stand-in table when no pretrained file is supplied: one N(0, 1/dim) row per token."""
    vocab = {t: i for i, t in enumerate(sorted(set(tokens)))}
    return StaticEmbeddingTable(vocab, rng.normal(0.0, dim ** -0.5, size=(len(vocab), dim)))


# ---------------------------------------------------------------------------
# character CNN


def build_char_vocabulary(tokens: Iterable[str]) -> dict[str, int]:
    """Sorted character inventory; ids 0 and 1 are padding and unknown."""
    chars = sorted({ch for tok in tokens for ch in tok})
    return {ch: i + 2 for i, ch in enumerate(chars)}


@dataclass
class CharCnnParams:
    char_index: dict[str, int]
    table: Tensor                               # (n_chars, emb) ; row 0 = padding
    filters: dict[int, tuple[Tensor, Tensor]]   # width -> (weight (w*emb, channels), bias)

    @property
    def output_dim(self) -> int:
        return sum(w.shape[1] for w, _ in self.filters.values())

    @property
    def max_width(self) -> int:
        return max(self.filters)

    def char_ids(self, token: str) -> list[int]:
        return [self.char_index.get(ch, UNK_CHAR) for ch in token]


def char_id_matrix(tokens: Sequence[Sequence[int]], max_width: int) -> tuple[np.ndarray, np.ndarray]:
    """Pad id lists into a (T, L) matrix, L >= max_width; also return lengths.

    Trailing padding ids are stripped first so extra padding never matters.
    """
    trimmed = []
    for ids in tokens:
        ids = list(ids)
        while ids and ids[-1] == PAD_CHAR:
            ids.pop()
        if not ids:
            raise EmbeddingDataError("empty token has no characters")
        trimmed.append(ids)
    lengths = np.array([len(ids) for ids in trimmed])
    width = max(int(lengths.max()), max_width)
    out = np.zeros((len(trimmed), width), dtype=np.int64)
    for row, ids in enumerate(trimmed):
        out[row, :len(ids)] = ids
    return out, lengths


def char_cnn_batch(ids: np.ndarray, lengths: np.ndarray, params: CharCnnParams) -> Tensor:
    """(T, L) char ids -> (T, channels * n_widths) pooled features.

    Each token is zero-padded to at least the widest filter; for a width ``w``
    the windows starting at 0 .. max(len, widest) - w are pooled.
    """
    # Columns past the longest token (or the widest filter) are padding only.
    ids = ids[:, :max(int(lengths.max()), params.max_width)]
    T, L = ids.shape
    emb = ad.gather(params.table, ids.reshape(-1))
    emb = ad.reshape(emb, (T, L, params.table.shape[1]))
    real = (np.arange(L)[None, :] < lengths[:, None]).astype(np.float64)
    emb = ad.apply_mask(emb, real[:, :, None])
    padded_len = np.maximum(lengths, params.max_width)
    pooled = []
    for width in sorted(params.filters):
        weight, bias = params.filters[width]
        P = L - width + 1
        windows = np.arange(P)[:, None] + np.arange(width)[None, :]
        x = ad.take(emb, (slice(None), windows))                  # (T, P, w, E)
        x = ad.reshape(x, (T, P, width * params.table.shape[1]))
        h = ad.tanh(ad.add(ad.matmul(x, weight), bias))           # (T, P, K)
        invalid = np.arange(P)[None, :] > (padded_len - width)[:, None]
        h = ad.add(h, np.where(invalid, -np.inf, 0.0)[:, :, None])
        pooled.append(ad.max(h, axis=1))
    return ad.concat(pooled, axis=-1)


def char_cnn(token_chars: str | Sequence[int], params: CharCnnParams) -> Tensor:
    """Character CNN features for one token."""
    if len(token_chars) == 0:
        raise EmbeddingDataError("char_cnn: empty token")
    ids = params.char_ids(token_chars) if isinstance(token_chars, str) else list(token_chars)
    mat, lengths = char_id_matrix([ids], params.max_width)
    return ad.reshape(char_cnn_batch(mat, lengths, params), (params.output_dim,))


# ---------------------------------------------------------------------------
# contextual vectors


@dataclass
class ContextualVectorFile:
    dim: int
    records: dict[int, np.ndarray] = field(default_factory=dict)

    def vectors_for(self, sentence_id: int, n_tokens: int) -> np.ndarray:
        if sentence_id not in self.records:
            raise EmbeddingDataError(f"no contextual vectors for sentence {sentence_id}")
        vecs = self.records[sentence_id]
        if vecs.shape[0] != n_tokens:
            raise EmbeddingDataError(
                f"sentence {sentence_id}: {vecs.shape[0]} contextual vectors for {n_tokens} tokens")
        return vecs


def write_contextual(path: str | Path, dim: int, records: Mapping[int, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(CTXV_MAGIC + struct.pack("<I", dim))
        for sid, vecs in records.items():
            vecs = np.asarray(vecs, dtype="<f4")
            if vecs.ndim != 2 or vecs.shape[1] != dim:
                raise EmbeddingDataError(f"sentence {sid}: vectors of shape {vecs.shape}, dim {dim} expected")
            fh.write(struct.pack("<II", sid, vecs.shape[0]))
            fh.write(vecs.tobytes())


def read_contextual(path: str | Path) -> ContextualVectorFile:
    raw = Path(path).read_bytes()
    if raw[:4] != CTXV_MAGIC:
        raise EmbeddingDataError(f"{path}: not a CTXV file")
    (dim,) = struct.unpack_from("<I", raw, 4)
    pos = 8
    out = ContextualVectorFile(dim)
    while pos < len(raw):
        if pos + 8 > len(raw):
            raise EmbeddingDataError(f"{path}: truncated record header at byte {pos}")
        sid, count = struct.unpack_from("<II", raw, pos)
        pos += 8
        nbytes = 4 * count * dim
        if pos + nbytes > len(raw):
            raise EmbeddingDataError(f"{path}: truncated vectors for sentence {sid}")
        vecs = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=pos).reshape(count, dim)
        out.records[sid] = vecs.astype(np.float64)
        pos += nbytes
    return out


# ---------------------------------------------------------------------------
# assembly


def input_dim(use_contextual: bool, contextual_dim: int, use_static: bool, static_dim: int,
              use_char: bool, char_dim: int) -> int:
    dim = (contextual_dim if use_contextual else 0) + (static_dim if use_static else 0) \
        + (char_dim if use_char else 0)
    if dim == 0:
        raise EmbeddingDataError("at least one embedding source must be enabled")
    return dim


def assemble_token_vector(token: str, static_table: StaticEmbeddingTable | None,
                          cnn_params: CharCnnParams | None, contextual: np.ndarray | None = None,
                          *, use_contextual: bool = False, contextual_dim: int = 1024,
                          dropout: float = 0.0, rng: np.random.Generator | None = None,
                          where: str = "") -> Tensor:
    """Concatenate [contextual][static][char-cnn] for one token.

    A source is skipped when its table/params is None (and, for contextual,
    when ``use_contextual`` is off).  Dropout applies only when an ``rng`` is
    passed, i.e. in training.
    """
    parts: list[Tensor] = []
    if use_contextual:
        if contextual is None:
            raise EmbeddingDataError(f"missing contextual vector{' for ' + where if where else ''}")
        contextual = np.asarray(contextual, dtype=np.float64)
        if contextual.shape != (contextual_dim,):
            raise EmbeddingDataError(f"contextual vector has shape {contextual.shape}, expected ({contextual_dim},)")
        parts.append(Tensor(contextual))
    if static_table is not None:
        parts.append(Tensor(lookup_static(token, static_table)))
    if cnn_params is not None:
        parts.append(char_cnn(token, cnn_params))
    if not parts:
        raise EmbeddingDataError("no embedding source enabled")
    vec = ad.concat(parts, axis=-1)
    return ad.dropout(vec, dropout, rng)
