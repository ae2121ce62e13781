import numpy as np
import pytest

from downscalebench import gradchecks
from downscalebench.errors import ConfigError, ShapeError
from downscalebench.layers import (
    Conv2d,
    LayerNorm,
    Linear,
    MultiHeadSelfAttention,
    PatchEmbed,
    Sequential,
    conv2d_forward,
    grad_check,
    grad_check_report,
    mhsa_forward,
    relu_forward,
    softmax,
    spectral_conv_forward,
)
from downscalebench.layers.modules import from_patches, to_patches


def conv_loop(x, w, b):
    """Direct 3x3 'same' correlation with zero padding."""
    bsz, cin, h, wd = x.shape
    cout = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    y = np.zeros((bsz, cout, h, wd))
    for n in range(bsz):
        for o in range(cout):
            for r in range(h):
                for c in range(wd):
                    y[n, o, r, c] = b[o] + np.sum(w[o] * xp[n, :, r : r + 3, c : c + 3])
    return y


# -- forward oracles -----------------------------------------------------------


def test_conv2d_matches_loop():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 5, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    y, _ = conv2d_forward(x, w, b)
    np.testing.assert_allclose(y, conv_loop(x, w, b), atol=1e-12)


def test_conv2d_keeps_dtype():
    rng = np.random.default_rng(0)
    layer = Conv2d(2, 3, rng)
    y, _ = layer.forward(rng.standard_normal((1, 2, 4, 4)).astype(np.float32))
    assert y.dtype == np.float32 and y.shape == (1, 3, 4, 4)


def test_linear_is_affine():
    rng = np.random.default_rng(1)
    layer = Linear(5, 3, rng)
    x = rng.standard_normal((2, 4, 5))
    y, _ = layer.forward(x)
    np.testing.assert_allclose(y, x @ layer.weight.value + layer.bias.value, rtol=1e-6)


def test_relu():
    y, mask = relu_forward(np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(y, [0, 0, 2])


def test_softmax_rows():
    s = np.random.default_rng(2).standard_normal((3, 7)) * 50
    p = softmax(s)
    np.testing.assert_allclose(p.sum(-1), 1, atol=1e-12)
    np.testing.assert_allclose(softmax(s + 1000), p, atol=1e-12)


def test_layernorm_standardises():
    x = np.random.default_rng(3).normal(4, 3, (2, 5, 16))
    y, _ = LayerNorm(16).forward(x)
    np.testing.assert_allclose(y.mean(-1), 0, atol=1e-6)
    np.testing.assert_allclose(y.var(-1), 1, atol=1e-3)


def test_mhsa_single_token_is_value_projection():
    rng = np.random.default_rng(4)
    d = 8
    x = rng.standard_normal((1, 1, d))
    wqkv, bqkv = rng.standard_normal((d, 3 * d)), rng.standard_normal(3 * d)
    wo, bo = rng.standard_normal((d, d)), rng.standard_normal(d)
    y, _ = mhsa_forward(x, wqkv, bqkv, wo, bo, heads=2)
    v = x @ wqkv[:, 2 * d :] + bqkv[2 * d :]
    np.testing.assert_allclose(y, v @ wo + bo, rtol=1e-10)


def test_mhsa_identical_tokens_give_identical_outputs():
    rng = np.random.default_rng(5)
    layer = MultiHeadSelfAttention(8, 4, rng)
    x = np.repeat(rng.standard_normal((1, 1, 8)), 6, axis=1)
    y, ctx = layer.forward(x)
    np.testing.assert_allclose(y, np.repeat(y[:, :1], 6, axis=1), atol=1e-6)
    attn = ctx[4]
    np.testing.assert_allclose(attn, 1 / 6, atol=1e-6)


def test_mhsa_rejects_bad_heads():
    with pytest.raises(ConfigError):
        MultiHeadSelfAttention(6, 4, np.random.default_rng(0))


def spectral_identity(modes):
    w_real = np.ones((1, 1, 2 * modes, modes))
    return w_real, np.zeros_like(w_real)


@pytest.mark.parametrize("axis", [0, 1])
def test_spectral_passband_and_stopband(axis):
    size, modes = 16, 4
    r, c = np.mgrid[0:size, 0:size]
    coord = r if axis == 0 else c
    wr, wi = spectral_identity(modes)
    low = np.cos(2 * np.pi * 2 * coord / size)[None, None]
    high = np.cos(2 * np.pi * 6 * coord / size)[None, None]
    y_low, _ = spectral_conv_forward(low, wr, wi, modes)
    y_high, _ = spectral_conv_forward(high, wr, wi, modes)
    np.testing.assert_allclose(y_low, low, atol=1e-10)
    np.testing.assert_allclose(y_high, 0, atol=1e-10)


def test_spectral_zero_weights_give_zero():
    x = np.random.default_rng(6).standard_normal((2, 3, 16, 16))
    w = np.zeros((3, 2, 8, 4))
    y, _ = spectral_conv_forward(x, w, w, 4)
    assert y.shape == (2, 2, 16, 16)
    assert np.all(y == 0)


def spectral_oracle(x, wr, wi, m):
    """Re(ifft2(M * fft2(x))) built mode by mode with numpy.fft.

    M holds the weight on the kept corner blocks and its conjugate on their
    mirror images.
    """
    b, cin, h, w = x.shape
    wc = wr + 1j * wi
    xf = np.fft.fft2(x)
    yf = np.zeros((b, wc.shape[1], h, w), complex)
    rows = np.r_[0:m, h - m : h]
    for i, r in enumerate(rows):
        for c in range(m):
            yf[:, :, r, c] += xf[:, :, r, c] @ wc[:, :, i, c]
            if c > 0:
                yf[:, :, -r % h, -c % w] += xf[:, :, -r % h, -c % w] @ np.conj(wc[:, :, i, c])
    return np.fft.ifft2(yf).real


def test_spectral_matches_numpy_oracle():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3, 16, 8))
    wr, wi = rng.standard_normal((2, 3, 4, 8, 4))
    y, _ = spectral_conv_forward(x, wr, wi, 4)
    np.testing.assert_allclose(y, spectral_oracle(x, wr, wi, 4), atol=1e-12)


def test_spectral_too_many_modes():
    with pytest.raises(ShapeError):
        spectral_conv_forward(np.zeros((1, 1, 8, 8)), np.zeros((1, 1, 10, 5)), np.zeros((1, 1, 10, 5)), 5)


def test_patch_round_trip():
    x = np.random.default_rng(8).standard_normal((2, 3, 8, 12))
    t = to_patches(x, 4)
    assert t.shape == (2, 6, 48)
    np.testing.assert_array_equal(from_patches(t, 3, 8, 12, 4), x)


def test_patch_embed_token_mismatch():
    emb = PatchEmbed(1, 4, 8, 4, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        emb.forward(np.zeros((1, 1, 16, 16)))


def test_sequential_names():
    rng = np.random.default_rng(0)
    seq = Sequential(Conv2d(1, 2, rng), Conv2d(2, 1, rng))
    assert [n for n, _ in seq.named_parameters()] == ["0.weight", "0.bias", "1.weight", "1.bias"]


# -- gradients -----------------------------------------------------------------


@pytest.mark.parametrize("name", [n for n in gradchecks.CASES if n not in ("cnn", "fno", "cnn-vit")])
def test_layer_gradients(name):
    res = gradchecks.run_case(name, seeds=(0, 1))
    assert res["max_rel_error"] <= 1e-3, res
    assert res["checked"] > 0


def test_gradcheck_detects_a_wrong_backward():
    rng = np.random.default_rng(0)
    layer = Linear(4, 3, rng)
    x = rng.standard_normal((2, 4))
    orig = layer.backward

    def broken(ctx, dy):
        dx = orig(ctx, dy)
        layer.weight.grad *= 1.1
        return dx

    layer.backward = broken
    assert grad_check(layer, x) > 1e-2


def test_gradcheck_leaves_layer_untouched():
    rng = np.random.default_rng(0)
    layer = Conv2d(2, 2, rng)
    before = layer.weight.value.copy()
    grad_check_report(layer, rng.standard_normal((1, 2, 4, 4)))
    assert layer.weight.value.dtype == np.float32
    np.testing.assert_array_equal(layer.weight.value, before)
