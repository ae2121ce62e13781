"""Seeded synthetic climate-like fields for desk-scale runs.

Three families with different covariance structure:

``gaussian-bumps``
    sums of isotropic Gaussian blobs over a constant background;
``anisotropic-bumps``
    rotated, elongated blobs (a distribution-shifted second simulation);
``banded-spectrum``
    periodic Gaussian random fields whose power spectrum falls off as
    ``k ** -slope`` inside a band of radial wavenumbers.
"""

import datetime as dt
from pathlib import Path

import numpy as np

from . import grd
from .data import DACH, DatasetManifest, as_region
from .errors import ConfigError
from .fft import ifft2_complex

KINDS = ("gaussian-bumps", "anisotropic-bumps", "banded-spectrum")


def _coords(size):
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    return y + 0.5, x + 0.5


def gaussian_bumps(rng, size, n_bumps=(10, 20), sigma=(1.0, 3.0)):
    y, x = _coords(size)
    scale = size / 64
    f = np.zeros((size, size))
    for _ in range(rng.integers(*n_bumps, endpoint=True)):
        cy, cx = rng.uniform(0, size, 2)
        s = rng.uniform(*sigma) * scale
        f += rng.standard_normal() * np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * s * s))
    return f


def anisotropic_bumps(rng, size, n_bumps=(10, 20), major=(4.0, 10.0), minor=(1.0, 2.5)):
    y, x = _coords(size)
    scale = size / 64
    f = np.zeros((size, size))
    for _ in range(rng.integers(*n_bumps, endpoint=True)):
        cy, cx = rng.uniform(0, size, 2)
        a = rng.uniform(*major) * scale
        b = rng.uniform(*minor) * scale
        th = rng.uniform(0, np.pi)
        u = (x - cx) * np.cos(th) + (y - cy) * np.sin(th)
        v = -(x - cx) * np.sin(th) + (y - cy) * np.cos(th)
        f += rng.standard_normal() * np.exp(-(u * u) / (2 * a * a) - (v * v) / (2 * b * b))
    return f


def radial_wavenumber(size):
    k = np.fft.fftfreq(size, d=1.0 / size)
    return np.sqrt(k[:, None] ** 2 + k[None, :] ** 2)


def banded_spectrum(rng, size, slope=3.0, band=(2.0, None)):
    """Periodic field with power |F(k)|^2 proportional to k**-slope on the band."""
    kmin, kmax = band
    kmax = size / 2 if kmax is None else kmax
    k = radial_wavenumber(size)
    amp = np.zeros_like(k)
    inside = (k >= kmin) & (k <= kmax)
    amp[inside] = k[inside] ** (-slope / 2)
    noise = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
    return ifft2_complex(noise * amp).real * size


_MAKERS = {
    "gaussian-bumps": gaussian_bumps,
    "anisotropic-bumps": anisotropic_bumps,
    "banded-spectrum": banded_spectrum,
}


def make_field(kind, rng, size, **kw):
    if kind not in _MAKERS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; expected one of {KINDS}")
    return _MAKERS[kind](rng, size, **kw)


def synth_dataset(
    kind,
    n,
    size,
    seed,
    out_dir,
    variable="tas",
    units="K",
    mean=280.0,
    amplitude=10.0,
    region=DACH,
    product=None,
    test_fraction=0.0,
    **field_kw,
):
    """Write ``n`` GRD1 fields plus sidecars and a ``manifest.json`` into ``out_dir``.

    Fields are ``mean + amplitude * f / std(f)`` for a unit-free generator
    field ``f``. The last ``round(test_fraction * n)`` samples are tagged
    ``test``, the rest ``train``.
    """
    if kind not in _MAKERS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; expected one of {KINDS}")
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if size < 4 or size & (size - 1):
        raise ConfigError(f"size must be a power of two >= 4, got {size}")
    region = as_region(region)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    product = product or f"synthetic-{kind}"
    n_test = int(round(test_fraction * n))
    t0 = dt.datetime(2010, 1, 1)
    files, tags = [], []
    for i in range(n):
        f = make_field(kind, rng, size, **field_kw)
        sd = f.std()
        f = mean + amplitude * (f - f.mean()) / (sd if sd > 0 else 1.0)
        name = f"sample_{i:05d}.grd"
        meta = {
            "variable": variable,
            "units": units,
            **region.to_dict(),
            "source": product,
            "timestamp": (t0 + dt.timedelta(hours=6 * i)).isoformat(),
        }
        grd.write_grd(out_dir / name, f.astype(np.float32), meta)
        files.append(name)
        tags.append("test" if i >= n - n_test else "train")
    res = [(region.lat_max - region.lat_min) / size, (region.lon_max - region.lon_min) / size]
    manifest = DatasetManifest(
        name=product,
        variables=[variable],
        native_resolution=res,
        region=region,
        sample_files=files,
        split_tags=tags,
        declared_count=n,
        kind=kind,
        root=out_dir,
    )
    manifest.save(out_dir / "manifest.json")
    return manifest
