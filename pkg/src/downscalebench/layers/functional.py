"""Forward/backward kernel pairs.

Every ``*_forward`` returns ``(y, ctx)``; the matching ``*_backward`` takes that
ctx and the upstream gradient and returns the input gradient followed by the
parameter gradients. All kernels preserve the dtype of their inputs, which is
what lets the gradient checker run them in float64.
"""

import math
import threading

import numpy as np

from ..errors import ConfigError, ShapeError
from ..fft import fft_last

# -- convolution -------------------------------------------------------------


def _im2col(xp, k, h, w):
    # (B, C, H+k-1, W+k-1) -> (B, C*k*k, H*W), rows ordered (c, i, j) like w.reshape(O, -1)
    b, c = xp.shape[:2]
    cols = np.empty((b, c, k, k, h, w), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + h, j : j + w]
    return cols.reshape(b, c * k * k, h * w)


def conv2d_forward(x, w, b):
    """Same-padded stride-1 cross-correlation plus bias.

    x: (B, C, H, W); w: (O, C, k, k) with odd k; b: (O,).
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects a 4-D input, got shape {x.shape}")
    o, c, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d kernel must be square and odd, got {w.shape[2:]}")
    if x.shape[1] != c:
        raise ShapeError(f"conv2d channel mismatch: input has {x.shape[1]}, weight expects {c}")
    bsz, _, h, wd = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = _im2col(xp, k, h, wd)
    y = np.matmul(w.reshape(o, -1), cols) + b[:, None]
    return y.reshape(bsz, o, h, wd), (cols, w, x.shape)


def conv2d_backward(ctx, dy):
    cols, w, xshape = ctx
    bsz, c, h, wd = xshape
    o, _, k, _ = w.shape
    p = k // 2
    dy3 = dy.reshape(bsz, o, h * wd)
    dw = np.matmul(dy3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = dy3.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(o, -1).T, dy3).reshape(bsz, c, k, k, h, wd)
    dxp = np.zeros((bsz, c, h + 2 * p, wd + 2 * p), dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + h, j : j + wd] += dcols[:, :, i, j]
    return np.ascontiguousarray(dxp[:, :, p : p + h, p : p + wd]), dw, db


def pointwise_forward(x, w, b):
    """1x1 convolution: channel mixing at every cell. w: (O, C)."""
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"pointwise channel mismatch: input has {x.shape[1]}, weight expects {w.shape[1]}")
    y = np.einsum("oc,bchw->bohw", w, x, optimize=True) + b[None, :, None, None]
    return y, (x, w)


def pointwise_backward(ctx, dy):
    x, w = ctx
    dw = np.einsum("bohw,bchw->oc", dy, x, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    dx = np.einsum("oc,bohw->bchw", w, dy, optimize=True)
    return dx, dw, db


# -- pointwise nonlinearity --------------------------------------------------


_relu_log = threading.local()


def record_relu_masks(log):
    """Route every subsequent ReLU mask on this thread into ``log`` (None stops)."""
    _relu_log.masks = log


def relu_forward(x):
    mask = x > 0
    log = getattr(_relu_log, "masks", None)
    if log is not None:
        log.append(mask)
    return x * mask, mask


def relu_backward(mask, dy):
    return dy * mask


# -- dense -------------------------------------------------------------------


def linear_forward(x, w, b):
    """y = x @ w + b over the last axis. w: (in, out)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear inner dimension mismatch: {x.shape[-1]} vs {w.shape[0]}")
    return x @ w + b, (x, w)


def linear_backward(ctx, dy):
    x, w = ctx
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


def layernorm_forward(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def layernorm_backward(ctx, dy):
    xhat, inv, gamma = ctx
    d = xhat.shape[-1]
    lead = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=lead)
    dbeta = dy.sum(axis=lead)
    g = dy * gamma
    dx = inv / d * (d * g - g.sum(axis=-1, keepdims=True) - xhat * (g * xhat).sum(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


# -- attention ---------------------------------------------------------------


def softmax(s):
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def mhsa_forward(x, wqkv, bqkv, wo, bo, heads):
    """Multi-head scaled dot-product self-attention.

    x: (B, N, D); wqkv: (D, 3D); wo: (D, D).
    """
    bsz, n, d = x.shape
    if d % heads:
        raise ConfigError(f"model dimension {d} is not divisible by {heads} heads")
    if wqkv.shape != (d, 3 * d):
        raise ShapeError(f"qkv weight must be {(d, 3 * d)}, got {wqkv.shape}")
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)
    qkv = x @ wqkv + bqkv
    qkv = qkv.reshape(bsz, n, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    attn = softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
    o = (attn @ v).transpose(0, 2, 1, 3).reshape(bsz, n, d)
    y = o @ wo + bo
    return y, (x, q, k, v, attn, o, wqkv, wo, heads, scale)


def mhsa_backward(ctx, dy):
    x, q, k, v, attn, o, wqkv, wo, heads, scale = ctx
    bsz, n, d = x.shape
    dh = d // heads
    dy2 = dy.reshape(-1, d)
    dwo = o.reshape(-1, d).T @ dy2
    dbo = dy2.sum(axis=0)
    do = (dy @ wo.T).reshape(bsz, n, heads, dh).transpose(0, 2, 1, 3)
    dattn = do @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ do
    ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(bsz, n, 3 * d)
    dqkv2 = dqkv.reshape(-1, 3 * d)
    dwqkv = x.reshape(-1, d).T @ dqkv2
    dbqkv = dqkv2.sum(axis=0)
    dx = dqkv @ wqkv.T
    return dx, dwqkv, dbqkv, dwo, dbo


# -- spectral convolution ----------------------------------------------------


def _mode_rows(h, modes):
    return np.concatenate([np.arange(modes), np.arange(h - modes, h)])


def _col_weights(modes, dtype):
    # one-sided spectrum: every column but the zero one stands in for its mirror
    d = np.full(modes, 2.0)
    d[0] = 1.0
    return d.astype(dtype)


def _low_modes(x, rows, modes):
    """fft2(x)[..., rows, :modes] with the row pass run on the kept columns only."""
    a = fft_last(x)[..., :modes]
    b = fft_last(np.swapaxes(a, -1, -2))[..., rows]
    return np.swapaxes(b, -1, -2)


def _from_low_modes(z, rows, h, w):
    """ifft2 of a spectrum that is zero outside ``[rows, :modes]``."""
    modes = z.shape[-1]
    col = np.zeros(z.shape[:-2] + (modes, h), dtype=z.dtype)
    col[..., rows] = np.swapaxes(z, -1, -2)
    col = fft_last(col, inverse=True)
    full = np.zeros(z.shape[:-2] + (h, w), dtype=z.dtype)
    full[..., :modes] = np.swapaxes(col, -1, -2)
    return fft_last(full, inverse=True) / (h * w)


def spectral_conv_forward(x, w_real, w_imag, modes):
    """Fourier-domain channel mixing on the lowest ``modes`` frequencies.

    x: (B, Cin, H, W). Weights: (Cin, Cout, 2*modes, modes); weight rows
    ``[0, modes)`` act on the lowest positive row frequencies and rows
    ``[modes, 2*modes)`` on the lowest negative ones, over the non-negative
    column frequencies ``[0, modes)``. The mirrored half of the spectrum gets
    the conjugate multiplier, so the output is real; it is formed as the real
    part of the inverse transform of the one-sided spectrum, with every
    non-zero column counted twice to stand in for its mirror.
    """
    bsz, cin, h, w = x.shape
    if h < 2 * modes or w < 2 * modes:
        raise ShapeError(f"spectral_conv with {modes} modes needs spatial size >= {2 * modes}, got {h}x{w}")
    if w_real.shape[0] != cin:
        raise ShapeError(f"spectral_conv channel mismatch: input has {cin}, weight expects {w_real.shape[0]}")
    rows = _mode_rows(h, modes)
    wc = w_real + 1j * w_imag
    xm = _low_modes(x, rows, modes)
    # (2m, m, B, Cin) @ (2m, m, Cin, Cout) -> (2m, m, B, Cout)
    z = np.matmul(xm.transpose(2, 3, 0, 1), wc.transpose(2, 3, 0, 1)).transpose(2, 3, 0, 1)
    z = z * _col_weights(modes, x.dtype)
    y = np.ascontiguousarray(_from_low_modes(z, rows, h, w).real)
    return y, (xm, wc, x.shape, modes)


def spectral_conv_backward(ctx, dy):
    xm, wc, xshape, modes = ctx
    bsz, cin, h, w = xshape
    rows = _mode_rows(h, modes)
    gv = _low_modes(dy, rows, modes) / (h * w)
    gz = gv * _col_weights(modes, dy.dtype)
    gwt = np.matmul(np.conj(xm).transpose(2, 3, 1, 0), gz.transpose(2, 3, 0, 1))
    gw = gwt.transpose(2, 3, 0, 1)
    gx = np.matmul(gz.transpose(2, 3, 0, 1), np.conj(wc).transpose(2, 3, 1, 0)).transpose(2, 3, 0, 1)
    dx = (_from_low_modes(gx, rows, h, w).real * (h * w)).astype(dy.dtype)
    return np.ascontiguousarray(dx), np.ascontiguousarray(gw.real), np.ascontiguousarray(gw.imag)
