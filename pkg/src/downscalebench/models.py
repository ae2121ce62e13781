"""The three downscaling networks and their shared LR -> HR wrapper.

Every model first upsamples the low-resolution field bicubically to the target
grid and then refines it with a network operating at high resolution, so one
network definition serves any scale factor.
"""

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, ShapeError
from .grid import bicubic_upsample
from .layers import (
    Conv2d,
    FourierBlock,
    LayerNorm,
    Module,
    PatchEmbed,
    Pointwise,
    ReLU,
    ResidualBlock,
    Sequential,
    TransformerBlock,
    Unpatch,
)

FAMILIES = ("cnn", "fno", "cnn-vit")
DEFAULT_DEPTH = {"cnn": 16, "fno": 4, "cnn-vit": 4}
SCALES = (2, 8)


def canonical_family(name):
    key = str(name).lower().replace("_", "-")
    if key == "cnnvit":
        key = "cnn-vit"
    if key not in FAMILIES:
        raise ConfigError(f"unknown architecture family {name!r}; expected one of {FAMILIES}")
    return key


@dataclass(frozen=True)
class ArchitectureSpec:
    family: str
    width: int = 64
    depth: int = None
    modes: int = 12
    heads: int = 4
    hidden_dim: int = 256
    patch_size: int = 8
    mlp_ratio: int = 4
    scale_factor: int = 2
    hr_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "family", canonical_family(self.family))
        if self.depth is None:
            object.__setattr__(self, "depth", DEFAULT_DEPTH[self.family])
        self.validate()

    def validate(self):
        problems = []
        for name in ("width", "depth", "hr_size", "scale_factor"):
            if int(getattr(self, name)) < 1:
                problems.append(f"{name} must be positive")
        if self.scale_factor < 2:
            problems.append("scale_factor must be >= 2")
        if self.family == "fno" and self.modes < 1:
            problems.append("modes must be positive")
        if self.family == "cnn-vit":
            if self.heads < 1 or self.hidden_dim < 1 or self.patch_size < 1 or self.mlp_ratio < 1:
                problems.append("heads, hidden_dim, patch_size and mlp_ratio must be positive")
            elif self.hidden_dim % self.heads:
                problems.append(f"hidden_dim {self.hidden_dim} is not divisible by heads {self.heads}")
            if self.patch_size >= 1 and self.hr_size % self.patch_size:
                problems.append(f"hr_size {self.hr_size} is not divisible by patch_size {self.patch_size}")
        if problems:
            raise ConfigError("invalid architecture spec: " + "; ".join(problems))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})

    def with_(self, **kw):
        return replace(self, **kw)


def reduced_spec(family, scale=2, hr_size=16):
    """Small configuration of ``family`` used by gradient checks and probes."""
    return ArchitectureSpec(
        family, width=8, depth=2, modes=4, heads=2, hidden_dim=16, patch_size=4, scale_factor=scale, hr_size=hr_size
    )


def check_hr_shape(spec, h, w):
    """Raise ShapeError unless an (h, w) high-resolution grid suits ``spec``."""
    if spec.family == "fno":
        need = 2 * spec.modes
        for axis, n in (("height", h), ("width", w)):
            if n < need:
                raise ShapeError(f"FNO with {spec.modes} modes needs HR {axis} >= {need}, got {n}")
            if n & (n - 1):
                raise ShapeError(f"FNO needs power-of-two HR {axis}, got {n}")
    if spec.family == "cnn-vit":
        if (h, w) != (spec.hr_size, spec.hr_size):
            raise ShapeError(f"CNN-ViT was built for {spec.hr_size}x{spec.hr_size} HR grids, got {h}x{w}")


class ResidualCNN(Module):
    def __init__(self, spec, rng):
        self.head = Conv2d(1, spec.width, rng)
        self.blocks = [ResidualBlock(spec.width, rng) for _ in range(spec.depth)]
        self.tail = Conv2d(spec.width, 1, rng)
        self.body = Sequential(self.head, *self.blocks, self.tail)

    def named_parameters(self, prefix=""):
        yield from self.head.named_parameters(prefix + "head.")
        for i, b in enumerate(self.blocks):
            yield from b.named_parameters(f"{prefix}block{i}.")
        yield from self.tail.named_parameters(prefix + "tail.")

    def forward(self, x):
        return self.body.forward(x)

    def backward(self, ctx, dy):
        return self.body.backward(ctx, dy)


class FNO(Module):
    def __init__(self, spec, rng):
        self.lift = Pointwise(1, spec.width, rng)
        self.blocks = [
            FourierBlock(spec.width, spec.modes, rng, activate=i < spec.depth - 1) for i in range(spec.depth)
        ]
        self.proj = Pointwise(spec.width, 1, rng)
        self.body = Sequential(self.lift, *self.blocks, self.proj)

    def named_parameters(self, prefix=""):
        yield from self.lift.named_parameters(prefix + "lift.")
        for i, b in enumerate(self.blocks):
            yield from b.named_parameters(f"{prefix}block{i}.")
        yield from self.proj.named_parameters(prefix + "proj.")

    def forward(self, x):
        return self.body.forward(x)

    def backward(self, ctx, dy):
        return self.body.backward(ctx, dy)


class CNNViT(Module):
    """Conv stem, transformer over patch tokens, conv head.

    The un-patched transformer features are added back onto the stem
    features before the output conv, so local detail from the stem reaches
    the head without passing through the token bottleneck.
    """

    def __init__(self, spec, rng):
        w, p, d = spec.width, spec.patch_size, spec.hidden_dim
        n_tokens = (spec.hr_size // p) ** 2
        self.stem = Sequential(Conv2d(1, w, rng), ReLU(), Conv2d(w, w, rng), ReLU())
        self.embed = PatchEmbed(w, p, d, n_tokens, rng)
        self.blocks = [TransformerBlock(d, spec.heads, spec.mlp_ratio, rng) for _ in range(spec.depth)]
        self.norm = LayerNorm(d)
        self.unpatch = Unpatch(d, w, p, rng)
        self.tail = Conv2d(w, 1, rng)
        self.encoder = Sequential(*self.blocks, self.norm)

    def named_parameters(self, prefix=""):
        yield from self.stem.named_parameters(prefix + "stem.")
        yield from self.embed.named_parameters(prefix + "embed.")
        for i, b in enumerate(self.blocks):
            yield from b.named_parameters(f"{prefix}block{i}.")
        yield from self.norm.named_parameters(prefix + "norm.")
        yield from self.unpatch.named_parameters(prefix + "unpatch.")
        yield from self.tail.named_parameters(prefix + "tail.")

    def forward(self, x):
        h, w = x.shape[-2:]
        s, c_stem = self.stem.forward(x)
        t, c_emb = self.embed.forward(s)
        t, c_enc = self.encoder.forward(t)
        g, c_un = self.unpatch.forward_grid(t, h, w)
        y, c_tail = self.tail.forward(s + g)
        return y, (c_stem, c_emb, c_enc, c_un, c_tail)

    def backward(self, ctx, dy):
        c_stem, c_emb, c_enc, c_un, c_tail = ctx
        dsg = self.tail.backward(c_tail, dy)
        dt = self.unpatch.backward(c_un, dsg)
        dt = self.encoder.backward(c_enc, dt)
        ds = dsg + self.embed.backward(c_emb, dt)
        return self.stem.backward(c_stem, ds)


_NETS = {"cnn": ResidualCNN, "fno": FNO, "cnn-vit": CNNViT}


@dataclass(eq=False)
class Model:
    spec: ArchitectureSpec
    seed: int
    net: Module
    parameters: list = field(default_factory=list)

    def named(self):
        return {p.name: p for p in self.parameters}

    def n_params(self):
        return int(sum(p.value.size for p in self.parameters))

    def zero_grad(self):
        for p in self.parameters:
            p.zero_grad()

    def final_layer(self):
        return self.net.proj if self.spec.family == "fno" else self.net.tail

    def upsample(self, lr):
        lr = np.asarray(lr, dtype=np.float32)
        if lr.ndim != 4 or lr.shape[1] != 1:
            raise ShapeError(f"expected LR input of shape (batch, 1, h, w), got {lr.shape}")
        h, w = lr.shape[-2:]
        check_hr_shape(self.spec, h * self.spec.scale_factor, w * self.spec.scale_factor)
        return bicubic_upsample(lr, self.spec.scale_factor)

    def forward(self, lr):
        """Predict the HR field for a (batch, 1, h, w) LR batch."""
        return self.net.forward(self.upsample(lr))[0]

    def forward_backward(self, lr, hr_target):
        """MSE loss of one batch; leaves d(loss)/d(param) in every Parameter.grad."""
        x = self.upsample(lr)
        hr_target = np.asarray(hr_target, dtype=np.float32)
        if hr_target.shape != x.shape:
            raise ShapeError(f"target shape {hr_target.shape} does not match prediction shape {x.shape}")
        self.zero_grad()
        pred, ctx = self.net.forward(x)
        resid = pred - hr_target
        loss = float(np.mean(resid.astype(np.float64) ** 2))
        self.net.backward(ctx, (2.0 / resid.size) * resid)
        return loss

    def loss(self, lr, hr_target):
        pred = self.forward(lr)
        return float(np.mean((pred.astype(np.float64) - hr_target) ** 2))


def build(spec, seed=0):
    """Instantiate ``spec`` with parameters drawn deterministically from ``seed``."""
    if isinstance(spec, dict):
        spec = ArchitectureSpec.from_dict(spec)
    spec.validate()
    rng = np.random.default_rng(seed)
    net = _NETS[spec.family](spec, rng)
    params = []
    for name, p in net.named_parameters():
        p.name = name
        params.append(p)
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate parameter names in model")
    return Model(spec=spec, seed=int(seed), net=net, parameters=params)


def copy_model(model):
    twin = build(model.spec, model.seed)
    for dst, src in zip(twin.parameters, model.parameters):
        dst.value = src.value.copy()
        dst.grad = np.zeros_like(dst.value)
    return twin
