"""Dataset manifests, region and patch extraction, LR/HR pairs, norm stats.

Grids follow the raster convention used throughout: rows run north to south,
columns west to east, longitudes in [-180, 180].
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import grd
from .errors import BoundsError, ConfigError, InvalidStatsError, ShapeError
from .grid import NormStats, avg_pool, normalize

PRODUCTS = ("ERA5", "MERRA2", "CFSR", "NorESM", "synthetic")
DECLARED_COUNTS = {"ERA5": 50_000, "MERRA2": 50_000, "CFSR": 30_000, "NorESM": 37_152}


@dataclass(frozen=True)
class Region:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not self.lat_min < self.lat_max:
            raise BoundsError(f"lat_min {self.lat_min} must be < lat_max {self.lat_max}")
        if not self.lon_min < self.lon_max:
            raise BoundsError(f"lon_min {self.lon_min} must be < lon_max {self.lon_max}")

    def overlaps(self, other):
        """True when the two boxes share a region of positive area."""
        return (
            self.lat_min < other.lat_max
            and other.lat_min < self.lat_max
            and self.lon_min < other.lon_max
            and other.lon_min < self.lon_max
        )

    def contains(self, other):
        return (
            self.lat_min <= other.lat_min
            and other.lat_max <= self.lat_max
            and self.lon_min <= other.lon_min
            and other.lon_max <= self.lon_max
        )

    def to_dict(self):
        return {"lat_min": self.lat_min, "lat_max": self.lat_max, "lon_min": self.lon_min, "lon_max": self.lon_max}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["lat_min"]), float(d["lat_max"]), float(d["lon_min"]), float(d["lon_max"]))


DACH = Region(45.0, 55.0, 5.0, 15.0)
NORTH_AMERICA = Region(35.0, 50.0, -125.0, -70.0)
GLOBE = Region(-90.0, 90.0, -180.0, 180.0)
NAMED_REGIONS = {"DACH": DACH, "NORTH_AMERICA": NORTH_AMERICA, "GLOBE": GLOBE}


def as_region(obj):
    """Region from a Region, a bounds dict or a named-region key."""
    if isinstance(obj, Region):
        return obj
    if isinstance(obj, str):
        key = obj.upper().replace("-", "_").replace(" ", "_")
        if key not in NAMED_REGIONS:
            raise ConfigError(f"unknown region {obj!r}; expected bounds or one of {sorted(NAMED_REGIONS)}")
        return NAMED_REGIONS[key]
    if isinstance(obj, dict):
        return Region.from_dict(obj)
    raise ConfigError(f"cannot interpret {obj!r} as a region")


@dataclass
class DatasetManifest:
    name: str
    variables: list
    native_resolution: list
    region: Region
    sample_files: list
    split_tags: list
    declared_count: int = None
    split_roles: dict = field(default_factory=dict)
    lr_files: list = None
    kind: str = None
    root: Path = None

    def __post_init__(self):
        if not self.sample_files:
            raise ConfigError(f"manifest {self.name!r} lists no sample files")
        if len(self.split_tags) != len(self.sample_files):
            raise ConfigError(
                f"manifest {self.name!r}: {len(self.split_tags)} split tags for {len(self.sample_files)} files"
            )
        if self.lr_files is not None and len(self.lr_files) != len(self.sample_files):
            raise ConfigError(f"manifest {self.name!r}: lr_files and sample_files differ in length")
        if isinstance(self.region, dict):
            self.region = Region.from_dict(self.region)

    def role(self, tag):
        return self.split_roles.get(tag, tag)

    def indices(self, role=None):
        if role is None:
            return list(range(len(self.sample_files)))
        return [i for i, t in enumerate(self.split_tags) if self.role(t) == role]

    def path(self, i, lr=False):
        rel = (self.lr_files if lr else self.sample_files)[i]
        p = Path(rel)
        return p if p.is_absolute() or self.root is None else self.root / p

    def to_dict(self):
        d = {
            "name": self.name,
            "variables": list(self.variables),
            "native_resolution": list(self.native_resolution),
            "region": self.region.to_dict(),
            "sample_files": [str(f) for f in self.sample_files],
            "split_tags": list(self.split_tags),
            "declared_count": self.declared_count,
            "split_roles": dict(self.split_roles),
        }
        if self.lr_files is not None:
            d["lr_files"] = [str(f) for f in self.lr_files]
        if self.kind is not None:
            d["kind"] = self.kind
        return d

    def save(self, path):
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_dict(cls, d, root=None):
        return cls(
            name=d["name"],
            variables=list(d["variables"]),
            native_resolution=list(d["native_resolution"]),
            region=Region.from_dict(d["region"]),
            sample_files=list(d["sample_files"]),
            split_tags=list(d["split_tags"]),
            declared_count=d.get("declared_count"),
            split_roles=dict(d.get("split_roles") or {}),
            lr_files=d.get("lr_files"),
            kind=d.get("kind"),
            root=Path(root) if root is not None else None,
        )


def load_manifest(path):
    path = Path(path)
    return DatasetManifest.from_dict(json.loads(path.read_text()), root=path.parent)


def ingest(path, manifest=None):
    """Read one GRD1 raster and its sidecar, validating against ``manifest``."""
    meta = grd.read_meta(path)
    grid = grd.read_grd(path)
    if manifest is not None and meta.get("variable") not in manifest.variables:
        raise ConfigError(f"{path}: variable {meta.get('variable')!r} is not declared in manifest {manifest.name!r}")
    return grid, meta


# -- geometry ----------------------------------------------------------------


def _cell(cell_size):
    if np.ndim(cell_size) == 0:
        return float(cell_size), float(cell_size)
    dlat, dlon = cell_size
    return float(dlat), float(dlon)


def _floor(v):
    return int(math.floor(round(v, 9)))


def _ceil(v):
    return int(math.ceil(round(v, 9)))


def extract_region(grid, grid_bounds, cell_size, want):
    """Sub-grid of ``grid`` covering ``want``; rows are north to south."""
    grid = np.asarray(grid)
    dlat, dlon = _cell(cell_size)
    if want.lat_min < grid_bounds.lat_min or want.lat_max > grid_bounds.lat_max:
        raise BoundsError(f"latitude range {want.lat_min}..{want.lat_max} outside grid bounds")
    if want.lon_min < grid_bounds.lon_min or want.lon_max > grid_bounds.lon_max:
        raise BoundsError(f"longitude range {want.lon_min}..{want.lon_max} outside grid bounds")
    r0 = _floor((grid_bounds.lat_max - want.lat_max) / dlat)
    r1 = _ceil((grid_bounds.lat_max - want.lat_min) / dlat)
    c0 = _floor((want.lon_min - grid_bounds.lon_min) / dlon)
    c1 = _ceil((want.lon_max - grid_bounds.lon_min) / dlon)
    h, w = grid.shape[-2:]
    r1, c1 = min(r1, h), min(c1, w)
    return grid[..., r0:r1, c0:c1]


def make_patches(grid, patch=64, stride=None):
    """Row-major tiling of the trailing two axes; partial edge tiles are dropped."""
    grid = np.asarray(grid)
    stride = stride or patch
    h, w = grid.shape[-2:]
    if patch > h or patch > w:
        raise ShapeError(f"patch {patch} larger than grid {h}x{w}")
    return [
        grid[..., r : r + patch, c : c + patch].copy()
        for r in range(0, h - patch + 1, stride)
        for c in range(0, w - patch + 1, stride)
    ]


def reassemble_patches(patches, h, w):
    """Inverse of make_patches for non-overlapping tilings of divisible grids."""
    p = patches[0].shape[-1]
    rows = [np.concatenate(patches[i : i + w // p], axis=-1) for i in range(0, len(patches), w // p)]
    return np.concatenate(rows, axis=-2)[..., :h, :w]


# -- pairs -------------------------------------------------------------------


@dataclass
class SamplePair:
    lr: np.ndarray
    hr: np.ndarray
    variable: str
    source: str


def synthesize_pairs(hr_patches, scale, variable="", source=""):
    """Pair each HR patch with its ``scale`` x ``scale`` average-pooled LR field."""
    if scale < 1:
        raise ShapeError(f"scale must be >= 1, got {scale}")
    return [SamplePair(avg_pool(hr, scale), np.asarray(hr, dtype=np.float32), variable, source) for hr in hr_patches]


@dataclass
class PairSet:
    """Stacked (N, 1, h, w) LR and (N, 1, H, W) HR arrays with per-sample labels."""

    lr: np.ndarray
    hr: np.ndarray
    variables: list = field(default_factory=list)
    sources: list = field(default_factory=list)

    def __len__(self):
        return 0 if self.lr is None else len(self.lr)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return PairSet(
            self.lr[idx], self.hr[idx], [self.variables[i] for i in idx], [self.sources[i] for i in idx]
        )

    @classmethod
    def from_pairs(cls, pairs):
        if not pairs:
            raise ConfigError("no sample pairs")
        lr = np.stack([p.lr.reshape((1,) + p.lr.shape[-2:]) for p in pairs]).astype(np.float32)
        hr = np.stack([p.hr.reshape((1,) + p.hr.shape[-2:]) for p in pairs]).astype(np.float32)
        return cls(lr, hr, [p.variable for p in pairs], [p.source for p in pairs])

    @classmethod
    def concat(cls, sets):
        sets = [s for s in sets if len(s)]
        return cls(
            np.concatenate([s.lr for s in sets]),
            np.concatenate([s.hr for s in sets]),
            [v for s in sets for v in s.variables],
            [v for s in sets for v in s.sources],
        )


def split_validation(pairs, fraction=0.1, seed=0):
    """Deterministically carve a validation subset off ``pairs``."""
    n = len(pairs)
    k = int(round(fraction * n))
    if k < 1 or k >= n:
        return pairs, None
    perm = np.random.default_rng(seed).permutation(n)
    return pairs.subset(np.sort(perm[k:])), pairs.subset(np.sort(perm[:k]))


# -- statistics --------------------------------------------------------------


def _iter_fields(manifest, role):
    for i in manifest.indices(role):
        grid, meta = ingest(manifest.path(i), manifest)
        yield meta["variable"], grid


def compute_norm_stats(manifests, split="train"):
    """Per-variable mean/std over every cell of the ``split`` samples.

    Products in a training mixture are pooled per variable. Accumulation is in
    float64.
    """
    if isinstance(manifests, DatasetManifest):
        manifests = [manifests]
    acc = {}
    for m in manifests:
        for var, grid in _iter_fields(m, split):
            g = grid.astype(np.float64)
            n, s, ss = acc.get(var, (0, 0.0, 0.0))
            acc[var] = (n + g.size, s + g.sum(), ss + np.sum(g * g))
    if not acc:
        raise ConfigError(f"no samples with split role {split!r}")
    stats = {}
    for var, (n, s, ss) in acc.items():
        mean = s / n
        var_ = max(ss / n - mean * mean, 0.0)
        std = math.sqrt(var_)
        if std <= 1e-12 * max(1.0, abs(mean)):
            raise InvalidStatsError(f"variable {var!r} has zero variance over the {split!r} split")
        stats[var] = NormStats(mean, std, n)
    return stats


def save_stats(stats, path):
    Path(path).write_text(json.dumps({k: v.to_dict() for k, v in sorted(stats.items())}, indent=1) + "\n")


def load_stats(path):
    raw = json.loads(Path(path).read_text())
    return {k: NormStats(v["mean"], v["std"], v.get("n_cells", 0)) for k, v in raw.items()}


def load_pairs(manifest, scale, stats, role=None, patch=64, limit=None):
    """Normalised LR/HR pairs from the ``role`` samples of ``manifest``.

    LR fields come from the manifest's ``lr_files`` when present (genuine
    coarse-model output); otherwise they are average-pooled from HR.
    """
    pairs = []
    for i in manifest.indices(role):
        hr, meta = ingest(manifest.path(i), manifest)
        var = meta["variable"]
        if var not in stats:
            raise InvalidStatsError(f"no normalisation stats for variable {var!r}")
        s = stats[var]
        hr = normalize(hr, s)
        if manifest.lr_files is not None:
            lr, _ = ingest(manifest.path(i, lr=True), manifest)
            lr = normalize(lr, s)
            if hr.shape[-2:] != (lr.shape[-2] * scale, lr.shape[-1] * scale):
                raise ShapeError(f"{manifest.path(i)}: HR {hr.shape} is not {scale}x LR {lr.shape}")
            pairs.append(SamplePair(lr, hr, var, manifest.name))
        else:
            pairs.extend(synthesize_pairs(make_patches(hr, patch), scale, var, manifest.name))
        if limit is not None and len(pairs) >= limit:
            pairs = pairs[:limit]
            break
    return PairSet.from_pairs(pairs)
