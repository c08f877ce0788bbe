"""Multi-layer bidirectional LSTM over exact-length token sequences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class LstmDirection:
    Wx: Tensor   # (D, 4H), gates packed [input, forget, output, candidate]
    Wh: Tensor   # (H, 4H)
    b: Tensor    # (4H,)


@dataclass
class BiLstmParams:
    layers: list[tuple[LstmDirection, LstmDirection]]   # (forward, backward) per layer

    @property
    def hidden_size(self) -> int:
        return self.layers[0][0].Wh.shape[0]

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden_size


def init_direction(input_dim: int, hidden: int, rng: np.random.Generator,
                   scale: float = 0.1, forget_bias: float = 1.0) -> dict[str, np.ndarray]:
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = forget_bias
    return {
        "Wx": rng.uniform(-scale, scale, (input_dim, 4 * hidden)),
        "Wh": rng.uniform(-scale, scale, (hidden, 4 * hidden)),
        "b": b,
    }


def _recurrent_lstm(x: Tensor, d: LstmDirection, reverse: bool, mask: np.ndarray) -> Tensor:
    # Unfused path used only for variational hidden-to-hidden dropout.
    T = x.shape[0]
    H = d.Wh.shape[0]
    pre = ad.add(ad.matmul(x, d.Wx), d.b)
    h = Tensor(np.zeros(H))
    c = Tensor(np.zeros(H))
    outs: list[Tensor | None] = [None] * T
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        z = ad.add(ad.take(pre, t), ad.matmul(ad.reshape(ad.apply_mask(h, mask), (1, H)), d.Wh))
        z = ad.reshape(z, (4 * H,))
        sig = ad.sigmoid(ad.take(z, slice(0, 3 * H)))
        i, f, o = (ad.take(sig, slice(k * H, (k + 1) * H)) for k in range(3))
        g = ad.tanh(ad.take(z, slice(3 * H, 4 * H)))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        outs[t] = ad.reshape(h, (1, H))
    return ad.concat(outs, axis=0)


def encode(token_vectors: Tensor, params: BiLstmParams, dropout: float = 0.0,
           rng: np.random.Generator | None = None, dropout_mode: str = "inter_layer",
           lengths: Sequence[int] | None = None) -> Tensor:
    """(N, D) token vectors -> (N, 2H) representations, [forward | backward] per row.

    ``lengths`` splits the rows into independent sentences (default: one).
    Dropout is active only when ``rng`` is given.  In ``inter_layer`` mode
    each sentence draws one mask per layer output, shared across its time
    steps; ``recurrent`` mode instead masks the hidden state fed back into
    each direction.
    """
    if token_vectors.ndim != 2 or token_vectors.shape[0] == 0:
        raise ad.DimensionError(f"encode needs a non-empty (l, D) input, got {token_vectors.shape}")
    lengths = [token_vectors.shape[0]] if lengths is None else [int(n) for n in lengths]
    x = token_vectors
    train = rng is not None and dropout > 0.0
    for k, (fw, bw) in enumerate(params.layers):
        outs = []
        for d, reverse in ((fw, False), (bw, True)):
            if train and dropout_mode == "recurrent":
                pieces, start = [], 0
                for n in lengths:
                    mask = ad.dropout_mask((d.Wh.shape[0],), dropout, rng)
                    piece = ad.take(x, slice(start, start + n))
                    pieces.append(_recurrent_lstm(piece, d, reverse, mask))
                    start += n
                outs.append(pieces[0] if len(pieces) == 1 else ad.concat(pieces, axis=0))
            else:
                outs.append(ad.lstm(x, d.Wx, d.Wh, d.b, reverse=reverse, lengths=lengths))
        x = ad.concat(outs, axis=-1)
        if train and dropout_mode == "inter_layer" and k < len(params.layers) - 1:
            masks = ad.dropout_mask((len(lengths), x.shape[1]), dropout, rng)
            x = ad.apply_mask(x, np.repeat(masks, lengths, axis=0))
    return x
