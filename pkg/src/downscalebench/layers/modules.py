"""Stateful layer objects that own their parameters.

``forward(x)`` returns ``(y, ctx)``. ``backward(ctx, dy)`` returns the input
gradient and *accumulates* parameter gradients into ``Parameter.grad``.
Composite modules discover their parameters by attribute order, so the
parameter naming of a model is fixed by how it is constructed.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError
from . import functional as F


@dataclass(eq=False)
class Parameter:
    value: np.ndarray
    name: str = ""
    grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0


def _uniform(rng, shape, fan_in, dtype=np.float32):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    yield from m.named_parameters(f"{prefix}{key}{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x):
        raise NotImplementedError

    def backward(self, ctx, dy):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)[0]


class Identity(Module):
    def forward(self, x):
        return x, None

    def backward(self, ctx, dy):
        return dy


class ReLU(Module):
    def forward(self, x):
        return F.relu_forward(x)

    def backward(self, ctx, dy):
        return F.relu_backward(ctx, dy)


class Conv2d(Module):
    def __init__(self, cin, cout, rng, kernel=3):
        fan_in = cin * kernel * kernel
        self.weight = Parameter(_uniform(rng, (cout, cin, kernel, kernel), fan_in))
        self.bias = Parameter(_uniform(rng, (cout,), fan_in))

    def forward(self, x):
        return F.conv2d_forward(x, self.weight.value, self.bias.value)

    def backward(self, ctx, dy):
        dx, dw, db = F.conv2d_backward(ctx, dy)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class Pointwise(Module):
    """1x1 convolution."""

    def __init__(self, cin, cout, rng):
        self.weight = Parameter(_uniform(rng, (cout, cin), cin))
        self.bias = Parameter(_uniform(rng, (cout,), cin))

    def forward(self, x):
        return F.pointwise_forward(x, self.weight.value, self.bias.value)

    def backward(self, ctx, dy):
        dx, dw, db = F.pointwise_backward(ctx, dy)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class Linear(Module):
    def __init__(self, din, dout, rng):
        self.weight = Parameter(_uniform(rng, (din, dout), din))
        self.bias = Parameter(_uniform(rng, (dout,), din))

    def forward(self, x):
        return F.linear_forward(x, self.weight.value, self.bias.value)

    def backward(self, ctx, dy):
        dx, dw, db = F.linear_backward(ctx, dy)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.weight = Parameter(np.ones(dim, dtype=np.float32))
        self.bias = Parameter(np.zeros(dim, dtype=np.float32))
        self.eps = eps

    def forward(self, x):
        return F.layernorm_forward(x, self.weight.value, self.bias.value, self.eps)

    def backward(self, ctx, dy):
        dx, dg, db = F.layernorm_backward(ctx, dy)
        self.weight.grad += dg
        self.bias.grad += db
        return dx


class SpectralConv2d(Module):
    def __init__(self, cin, cout, modes, rng):
        self.modes = modes
        scale = 1.0 / (cin * cout)
        shape = (cin, cout, 2 * modes, modes)
        self.weight_real = Parameter((scale * rng.random(shape)).astype(np.float32))
        self.weight_imag = Parameter((scale * rng.random(shape)).astype(np.float32))

    def forward(self, x):
        return F.spectral_conv_forward(x, self.weight_real.value, self.weight_imag.value, self.modes)

    def backward(self, ctx, dy):
        dx, dwr, dwi = F.spectral_conv_backward(ctx, dy)
        self.weight_real.grad += dwr
        self.weight_imag.grad += dwi
        return dx


class MultiHeadSelfAttention(Module):
    def __init__(self, dim, heads, rng):
        if dim % heads:
            raise ConfigError(f"model dimension {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.out = Linear(dim, dim, rng)

    def forward(self, x):
        return F.mhsa_forward(
            x, self.qkv.weight.value, self.qkv.bias.value, self.out.weight.value, self.out.bias.value, self.heads
        )

    def backward(self, ctx, dy):
        dx, dwqkv, dbqkv, dwo, dbo = F.mhsa_backward(ctx, dy)
        self.qkv.weight.grad += dwqkv
        self.qkv.bias.grad += dbqkv
        self.out.weight.grad += dwo
        self.out.bias.grad += dbo
        return dx


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def named_parameters(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}{i}.")

    def forward(self, x):
        ctxs = []
        for layer in self.layers:
            x, c = layer.forward(x)
            ctxs.append(c)
        return x, ctxs

    def backward(self, ctxs, dy):
        for layer, c in zip(reversed(self.layers), reversed(ctxs)):
            dy = layer.backward(c, dy)
        return dy


class ResidualBlock(Module):
    """conv - ReLU - conv with an identity skip."""

    def __init__(self, width, rng):
        self.conv1 = Conv2d(width, width, rng)
        self.act = ReLU()
        self.conv2 = Conv2d(width, width, rng)

    def forward(self, x):
        h, c1 = self.conv1.forward(x)
        h, c2 = self.act.forward(h)
        h, c3 = self.conv2.forward(h)
        return x + h, (c1, c2, c3)

    def backward(self, ctx, dy):
        c1, c2, c3 = ctx
        d = self.conv2.backward(c3, dy)
        d = self.act.backward(c2, d)
        return dy + self.conv1.backward(c1, d)


class FourierBlock(Module):
    """Spectral convolution plus a pointwise skip, optionally followed by ReLU."""

    def __init__(self, width, modes, rng, activate=True):
        self.spectral = SpectralConv2d(width, width, modes, rng)
        self.skip = Pointwise(width, width, rng)
        self.activate = activate

    def forward(self, x):
        a, cs = self.spectral.forward(x)
        b, cp = self.skip.forward(x)
        y = a + b
        mask = None
        if self.activate:
            y, mask = F.relu_forward(y)
        return y, (cs, cp, mask)

    def backward(self, ctx, dy):
        cs, cp, mask = ctx
        if mask is not None:
            dy = F.relu_backward(mask, dy)
        return self.spectral.backward(cs, dy) + self.skip.backward(cp, dy)


class FeedForward(Module):
    def __init__(self, dim, inner, rng):
        self.fc1 = Linear(dim, inner, rng)
        self.act = ReLU()
        self.fc2 = Linear(inner, dim, rng)

    def forward(self, x):
        h, c1 = self.fc1.forward(x)
        h, c2 = self.act.forward(h)
        y, c3 = self.fc2.forward(h)
        return y, (c1, c2, c3)

    def backward(self, ctx, dy):
        c1, c2, c3 = ctx
        d = self.fc2.backward(c3, dy)
        d = self.act.backward(c2, d)
        return self.fc1.backward(c1, d)


class TransformerBlock(Module):
    """Pre-norm block: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, dim, heads, mlp_ratio, rng):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, mlp_ratio * dim, rng)

    def forward(self, x):
        h, c1 = self.norm1.forward(x)
        h, c2 = self.attn.forward(h)
        x = x + h
        h, c3 = self.norm2.forward(x)
        h, c4 = self.ffn.forward(h)
        return x + h, (c1, c2, c3, c4)

    def backward(self, ctx, dy):
        c1, c2, c3, c4 = ctx
        d = self.ffn.backward(c4, dy)
        dy = dy + self.norm2.backward(c3, d)
        d = self.attn.backward(c2, dy)
        return dy + self.norm1.backward(c1, d)


def to_patches(x, p):
    """(B, C, H, W) -> (B, H/p * W/p, C*p*p), tokens in row-major order."""
    b, c, h, w = x.shape
    t = x.reshape(b, c, h // p, p, w // p, p).transpose(0, 2, 4, 1, 3, 5)
    return t.reshape(b, (h // p) * (w // p), c * p * p)


def from_patches(t, c, h, w, p):
    b = t.shape[0]
    x = t.reshape(b, h // p, w // p, c, p, p).transpose(0, 3, 1, 4, 2, 5)
    return np.ascontiguousarray(x.reshape(b, c, h, w))


class PatchEmbed(Module):
    """Non-overlapping patch projection plus learned absolute positions."""

    def __init__(self, width, patch, dim, n_tokens, rng):
        self.patch = patch
        self.proj = Linear(width * patch * patch, dim, rng)
        self.pos = Parameter((0.02 * rng.standard_normal((n_tokens, dim))).astype(np.float32))

    def forward(self, x):
        t = to_patches(x, self.patch)
        if t.shape[1] != self.pos.value.shape[0]:
            raise ShapeError(f"input yields {t.shape[1]} tokens, positional table holds {self.pos.value.shape[0]}")
        y, c = self.proj.forward(t)
        return y + self.pos.value, (c, x.shape)

    def backward(self, ctx, dy):
        c, shape = ctx
        self.pos.grad += dy.sum(axis=0)
        dt = self.proj.backward(c, dy)
        return from_patches(dt, shape[1], shape[2], shape[3], self.patch)


class Unpatch(Module):
    """Linear map from tokens back to a (B, width, H, W) feature grid."""

    def __init__(self, dim, width, patch, rng):
        self.patch = patch
        self.width = width
        self.proj = Linear(dim, width * patch * patch, rng)

    def forward_grid(self, t, h, w):
        y, c = self.proj.forward(t)
        return from_patches(y, self.width, h, w, self.patch), c

    def backward(self, ctx, dy):
        return self.proj.backward(ctx, to_patches(dy, self.patch))
