import numpy as np
import pytest

from biaffine_ner import autodiff as ad
from biaffine_ner.autodiff import Tensor
from biaffine_ner.encoder import BiLstmParams, LstmDirection, encode, init_direction
from oracles import central_difference, loop_lstm, rel_err


def _params(rng, in_dim, hidden, layers=1, scale=0.5, requires_grad=False):
    out = []
    for k in range(layers):
        d_in = in_dim if k == 0 else 2 * hidden
        pair = []
        for _ in range(2):
            p = init_direction(d_in, hidden, rng, scale=scale)
            p["b"] = rng.normal(size=p["b"].shape) * scale
            pair.append(LstmDirection(*(Tensor(p[n], requires_grad=requires_grad) for n in ("Wx", "Wh", "b"))))
        out.append(tuple(pair))
    return BiLstmParams(out)


def test_single_token_shape_default_width():
    rng = np.random.default_rng(0)
    params = _params(rng, 7, 200, layers=3)
    out = encode(Tensor(rng.normal(size=(1, 7))), params)
    assert out.shape == (1, 400) and params.output_dim == 400


def test_zero_weights_give_zero_outputs():
    zero = LstmDirection(Tensor(np.zeros((4, 12))), Tensor(np.zeros((3, 12))), Tensor(np.zeros(12)))
    out = encode(Tensor(np.ones((5, 4))), BiLstmParams([(zero, zero)]))
    assert np.array_equal(out.data, np.zeros((5, 6)))


def test_one_layer_matches_loop_oracle():
    rng = np.random.default_rng(1)
    params = _params(rng, 3, 4)
    x = rng.normal(size=(4, 3))
    out = encode(Tensor(x), params).data
    fw, bw = params.layers[0]
    np.testing.assert_allclose(out[:, :4], loop_lstm(x, fw.Wx.data, fw.Wh.data, fw.b.data), atol=1e-12)
    np.testing.assert_allclose(out[:, 4:], loop_lstm(x, bw.Wx.data, bw.Wh.data, bw.b.data, reverse=True),
                               atol=1e-12)


def _swap_banks(params: BiLstmParams, hidden: int) -> BiLstmParams:
    """Swap forward/backward banks; upper layers see their input halves swapped."""
    layers = []
    for k, (fw, bw) in enumerate(params.layers):
        new = []
        for d in (bw, fw):
            Wx = d.Wx.data
            if k > 0:
                Wx = np.concatenate([Wx[hidden:], Wx[:hidden]])
            new.append(LstmDirection(Tensor(Wx), d.Wh, d.b))
        layers.append(tuple(new))
    return BiLstmParams(layers)


@pytest.mark.parametrize("layers", [1, 3])
def test_reversal_with_swapped_banks(layers):
    rng = np.random.default_rng(2)
    H = 5
    params = _params(rng, 4, H, layers=layers)
    x = rng.normal(size=(6, 4))
    out = encode(Tensor(x), params).data
    rev = encode(Tensor(x[::-1].copy()), _swap_banks(params, H)).data
    swapped = np.concatenate([rev[:, H:], rev[:, :H]], axis=1)[::-1]
    np.testing.assert_allclose(swapped, out, rtol=0, atol=1e-14)


def test_batched_sentences_are_independent():
    rng = np.random.default_rng(3)
    params = _params(rng, 4, 3, layers=2)
    lengths = [2, 5, 1]
    x = rng.normal(size=(8, 4))
    packed = encode(Tensor(x), params, lengths=lengths).data
    start = 0
    for n in lengths:
        alone = encode(Tensor(x[start:start + n]), params).data
        np.testing.assert_allclose(packed[start:start + n], alone, atol=1e-13)
        start += n


@pytest.mark.parametrize("mode", ["inter_layer", "recurrent"])
def test_gradients_match_finite_differences(mode):
    rng = np.random.default_rng(4)
    params = _params(rng, 3, 3, layers=2, requires_grad=True)
    x = rng.normal(size=(3, 3))
    R = rng.normal(size=(3, 6))

    def run(p):
        # the same seed reproduces the same dropout masks in every evaluation
        return encode(Tensor(x), p, dropout=0.3, rng=np.random.default_rng(9), dropout_mode=mode)

    ad.sum(ad.mul(run(params), R)).backward()
    for layer in params.layers:
        for d in layer:
            for leaf in (d.Wx, d.Wh, d.b):
                numeric = central_difference(lambda: float(np.sum(run(params).data * R)), leaf.data)
                assert rel_err(leaf.grad, numeric) < 1e-4


def test_dropout_only_with_rng():
    rng = np.random.default_rng(5)
    params = _params(rng, 3, 4, layers=2)
    x = Tensor(rng.normal(size=(4, 3)))
    plain = encode(x, params).data
    assert np.array_equal(encode(x, params, dropout=0.4).data, plain)
    dropped = encode(x, params, dropout=0.4, rng=np.random.default_rng(0)).data
    assert not np.array_equal(dropped, plain)


def test_empty_input_rejected():
    params = _params(np.random.default_rng(6), 3, 2)
    with pytest.raises(ad.DimensionError):
        encode(Tensor(np.zeros((0, 3))), params)
