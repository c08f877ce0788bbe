"""Start/end feed-forward heads and the biaffine span scorer.

For every ordered token pair (s, e) the scorer produces a category vector

    scores[s, e] = h_s[s]^T U h_e[e] + W (h_s[s] ++ h_e[e]) + b

with category 0 reserved for non-entity.  Cells with s > e are computed
but masked out by every consumer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SCOR_MAGIC = b"SCOR"


@dataclass
class FfnnParams:
    layers: list[tuple[Tensor, Tensor]]   # (weight, bias) per hidden layer


@dataclass
class HeadRepresentations:
    h_s: Tensor
    h_e: Tensor


@dataclass
class BiaffineParams:
    U: Tensor | None   # (d, c, d); None drops the bilinear term
    W: Tensor          # (2d, c)
    b: Tensor          # (c,)

    @property
    def n_categories(self) -> int:
        return self.b.shape[0]


@dataclass
class ScoreTensor:
    """Raw ``(l, l, c)`` span scores; only cells with start <= end are meaningful."""

    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 3 or self.scores.shape[0] != self.scores.shape[1]:
            raise ad.DimensionError(f"score tensor must be (l, l, c), got {self.scores.shape}")

    @property
    def length(self) -> int:
        return self.scores.shape[0]

    @property
    def n_categories(self) -> int:
        return self.scores.shape[2]

    @property
    def valid_mask(self) -> np.ndarray:
        return np.triu(np.ones((self.length, self.length), dtype=bool))


def count_valid_spans(length: int) -> int:
    if length < 0:
        raise ValueError("length must be non-negative")
    return length * (length + 1) // 2


def valid_span_indices(length: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major (start, end) index arrays of all cells with start <= end."""
    return np.triu_indices(length)


def _ffnn(x: Tensor, params: FfnnParams, activation: str) -> Tensor:
    act = ad.tanh if activation == "tanh" else ad.relu
    for weight, bias in params.layers:
        x = act(ad.add(ad.matmul(x, weight), bias))
    return x


def ffnn_heads(x: Tensor, start: FfnnParams, end: FfnnParams, dropout: float = 0.0,
               rng: np.random.Generator | None = None, activation: str = "tanh") -> HeadRepresentations:
    h_s = ad.dropout(_ffnn(x, start, activation), dropout, rng)
    h_e = ad.dropout(_ffnn(x, end, activation), dropout, rng)
    return HeadRepresentations(h_s, h_e)


def score_spans(heads: HeadRepresentations, params: BiaffineParams) -> Tensor:
    """(l, l, c) differentiable score tensor for all ordered (start, end) pairs."""
    h_s, h_e = heads.h_s, heads.h_e
    d = h_s.shape[1]
    if h_e.shape != h_s.shape or params.W.shape[0] != 2 * d:
        raise ad.DimensionError(
            f"score_spans: heads {h_s.shape}/{h_e.shape} do not fit W {params.W.shape}")
    c = params.n_categories
    l = h_s.shape[0]
    from_start = ad.reshape(ad.matmul(h_s, ad.take(params.W, slice(0, d))), (l, 1, c))
    from_end = ad.reshape(ad.matmul(h_e, ad.take(params.W, slice(d, 2 * d))), (1, l, c))
    out = ad.add(ad.add(from_start, from_end), params.b)
    if params.U is not None:
        if params.U.shape != (d, c, d):
            raise ad.DimensionError(f"U has shape {params.U.shape}, expected {(d, c, d)}")
        out = ad.add(out, ad.biaffine_grid(h_s, params.U, h_e))
    return out


# ---------------------------------------------------------------------------
# SCOR dumps


def write_score_dump(path: str | Path, scores: np.ndarray) -> None:
    scores = np.asarray(scores)
    l, l2, c = scores.shape
    if l != l2:
        raise ad.DimensionError(f"score tensor must be (l, l, c), got {scores.shape}")
    with open(path, "wb") as fh:
        fh.write(SCOR_MAGIC + struct.pack("<II", l, c))
        fh.write(np.ascontiguousarray(scores, dtype="<f4").tobytes())


def read_score_dump(path: str | Path) -> ScoreTensor:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != SCOR_MAGIC:
        raise ValueError(f"{path}: not a SCOR dump")
    l, c = struct.unpack_from("<II", raw, 4)
    expected = 12 + 4 * l * l * c
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for l={l}, c={c}, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(l, l, c)
    return ScoreTensor(data.astype(np.float64))
