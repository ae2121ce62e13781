"""Radix-2 Cooley-Tukey FFT over the two trailing axes.

The transforms are vectorised over all leading axes, so a whole
(batch, channel, height, width) stack is transformed with one small matrix
product and log2(n / 8) butterfly passes per axis. Only power-of-two lengths
are supported.
"""

from functools import lru_cache

import numpy as np

from .errors import ShapeError


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def _complex_dtype(dtype):
    return np.result_type(dtype, np.complex64)


LEAF = 8


@lru_cache(maxsize=None)
def _leaf_matrix(n, inverse):
    sign = 1.0 if inverse else -1.0
    k = np.arange(n)
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n)


@lru_cache(maxsize=None)
def _twiddles(half, inverse):
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 1j * np.pi * np.arange(half) / half)[:, None]


def _fft_last(x, inverse):
    """Radix-2 decimation in time along the last axis.

    Input index i = r * (n / leaf) + c is viewed as (r, c). The recursion's
    leaves, the length-``leaf`` sub-sequences spaced n/leaf apart, are
    transformed with a direct DFT matrix; each butterfly stage then merges
    pairs of half-length transforms (even columns with odd columns) until one
    length-n transform remains.
    """
    n = x.shape[-1]
    lead = x.shape[:-1]
    leaf = min(n, LEAF)
    y = x.reshape(lead + (leaf, n // leaf))
    y = np.matmul(_leaf_matrix(leaf, inverse).astype(x.dtype), y)
    while y.shape[-2] < n:
        rows, cols = y.shape[-2:]
        even = y[..., : cols // 2]
        odd = y[..., cols // 2 :] * _twiddles(rows, inverse).astype(x.dtype)
        y = np.concatenate([even + odd, even - odd], axis=-2)
    return y.reshape(lead + (n,))


def fft_last(x, inverse=False):
    """Unnormalised 1-D transform along the last axis (power-of-two length)."""
    x = np.asarray(x)
    if not _is_pow2(x.shape[-1]):
        raise ShapeError(f"fft length must be a power of two, got {x.shape[-1]}")
    return _fft_last(np.ascontiguousarray(x.astype(_complex_dtype(x.dtype), copy=False)), inverse)


def _fft2(x, inverse):
    x = _fft_last(np.ascontiguousarray(x), inverse)
    x = _fft_last(np.ascontiguousarray(np.swapaxes(x, -1, -2)), inverse)
    return np.ascontiguousarray(np.swapaxes(x, -1, -2))


def _check(shape):
    if len(shape) < 2:
        raise ShapeError(f"fft2 needs at least 2 dimensions, got shape {shape}")
    h, w = shape[-2], shape[-1]
    for axis, n in (("height", h), ("width", w)):
        if not _is_pow2(n):
            raise ShapeError(f"fft2 {axis} must be a power of two, got {n}")


def fft2(t):
    """Unnormalised forward 2-D DFT over the last two axes."""
    t = np.asarray(t)
    _check(t.shape)
    return _fft2(t.astype(_complex_dtype(t.dtype), copy=False), inverse=False)


def ifft2_complex(c):
    """Inverse 2-D DFT (divided by H*W) keeping the complex result."""
    c = np.asarray(c)
    _check(c.shape)
    x = _fft2(c.astype(_complex_dtype(c.dtype), copy=False), inverse=True)
    x /= c.shape[-1] * c.shape[-2]
    return x


def ifft2(c):
    """Inverse 2-D DFT returning the real part as a float grid."""
    x = ifft2_complex(c)
    return np.ascontiguousarray(x.real)
