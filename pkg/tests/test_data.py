import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from downscalebench import grd
from downscalebench.data import (
    DACH,
    GLOBE,
    NORTH_AMERICA,
    DatasetManifest,
    Region,
    as_region,
    compute_norm_stats,
    extract_region,
    ingest,
    load_manifest,
    load_pairs,
    load_stats,
    make_patches,
    reassemble_patches,
    save_stats,
    split_validation,
    synthesize_pairs,
)
from downscalebench.errors import BoundsError, ConfigError, InvalidStatsError, ShapeError
from downscalebench.grid import normalize


def write_manifest(tmp_path, grids, variable="tas", tags=None, name="synthetic"):
    files = []
    for i, g in enumerate(grids):
        f = f"s{i}.grd"
        grd.write_grd(tmp_path / f, np.asarray(g, dtype=np.float32), {"variable": variable, "source": name})
        files.append(f)
    m = DatasetManifest(
        name=name,
        variables=[variable],
        native_resolution=[0.25, 0.25],
        region=DACH,
        sample_files=files,
        split_tags=tags or ["train"] * len(files),
    )
    m.save(tmp_path / "manifest.json")
    return load_manifest(tmp_path / "manifest.json")


# -- regions -----------------------------------------------------------------


def test_region_invariants():
    with pytest.raises(BoundsError):
        Region(10, 5, 0, 1)
    with pytest.raises(BoundsError):
        Region(0, 1, 3, 3)


def test_named_regions_are_disjoint():
    assert not DACH.overlaps(NORTH_AMERICA)
    assert GLOBE.contains(DACH)
    assert DACH.overlaps(Region(50, 60, 10, 20))
    # touching edges share no area
    assert not DACH.overlaps(Region(55, 60, 5, 15))


def test_as_region():
    assert as_region("dach") == DACH
    assert as_region("north-america") == NORTH_AMERICA
    assert as_region(DACH.to_dict()) == DACH
    with pytest.raises(ConfigError):
        as_region("atlantis")


def test_extract_dach_from_quarter_degree_globe():
    # 0.25 degree global grid: 720 x 1440; rows north to south
    grid = np.zeros((720, 1440), dtype=np.float32)
    out = extract_region(grid, GLOBE, 0.25, DACH)
    assert out.shape == ((55 - 45) / 0.25, (15 - 5) / 0.25) == (40, 40)


def test_extract_picks_the_right_cells():
    rows, cols = np.mgrid[0:720, 0:1440]
    grid = rows * 10_000 + cols
    out = extract_region(grid, GLOBE, 0.25, DACH)
    # first row starts at 90 - 55 = 35 degrees below the top edge
    assert out[0, 0] == (35 * 4) * 10_000 + (185 * 4)
    assert out[-1, -1] == (45 * 4 - 1) * 10_000 + (195 * 4 - 1)


def test_extract_whole_and_single_cell():
    grid = np.arange(16.0).reshape(4, 4)
    bounds = Region(0, 4, 0, 4)
    np.testing.assert_array_equal(extract_region(grid, bounds, 1.0, bounds), grid)
    one = extract_region(grid, bounds, 1.0, Region(3, 4, 0, 1))
    assert one.shape == (1, 1) and one[0, 0] == 0


def test_extract_out_of_bounds_names_axis():
    grid = np.zeros((4, 4))
    bounds = Region(0, 4, 0, 4)
    with pytest.raises(BoundsError, match="latitude"):
        extract_region(grid, bounds, 1.0, Region(-1, 2, 0, 1))
    with pytest.raises(BoundsError, match="longitude"):
        extract_region(grid, bounds, 1.0, Region(0, 1, 2, 5))


# -- patches -----------------------------------------------------------------


@pytest.mark.parametrize("size,count", [(128, 4), (130, 4), (64, 1)])
def test_patch_counts(size, count):
    assert len(make_patches(np.zeros((size, size)), 64)) == count


def test_single_patch_equals_input():
    g = np.random.default_rng(0).standard_normal((64, 64))
    np.testing.assert_array_equal(make_patches(g)[0], g)


def test_patch_larger_than_grid():
    with pytest.raises(ShapeError):
        make_patches(np.zeros((32, 64)), 64)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.sampled_from([4, 8, 16]))
def test_patches_reassemble_exactly(nr, nc, p):
    g = np.random.default_rng(nr * 10 + nc).standard_normal((nr * p, nc * p))
    back = reassemble_patches(make_patches(g, p), nr * p, nc * p)
    np.testing.assert_array_equal(back, g)


def test_patches_are_row_major():
    g = np.arange(4.0).repeat(2).reshape(2, 4).repeat(2, axis=0)  # columns 0,0,1,1 ...
    g = np.block([[np.zeros((2, 2)), np.ones((2, 2))], [2 * np.ones((2, 2)), 3 * np.ones((2, 2))]])
    assert [p[0, 0] for p in make_patches(g, 2)] == [0, 1, 2, 3]


# -- pairs -------------------------------------------------------------------


@pytest.mark.parametrize("scale,side", [(2, 32), (8, 8)])
def test_pair_shapes(scale, side):
    hr = np.random.default_rng(0).standard_normal((64, 64)).astype(np.float32)
    (pair,) = synthesize_pairs([hr], scale, "tas", "ERA5")
    assert pair.lr.shape == (side, side)
    assert pair.hr.shape == (64, 64)
    assert (pair.variable, pair.source) == ("tas", "ERA5")
    assert abs(pair.lr.astype(np.float64).mean() - hr.astype(np.float64).mean()) <= 1e-6


def test_pair_divisibility():
    with pytest.raises(ShapeError):
        synthesize_pairs([np.zeros((12, 12))], 8)


# -- manifests and ingest ----------------------------------------------------


def test_manifest_invariants():
    with pytest.raises(ConfigError):
        DatasetManifest("x", ["tas"], [1, 1], DACH, [], [])
    with pytest.raises(ConfigError):
        DatasetManifest("x", ["tas"], [1, 1], DACH, ["a.grd"], ["train", "test"])


def test_manifest_round_trip_keeps_order(tmp_path):
    m = write_manifest(tmp_path, [np.full((4, 4), float(i)) for i in range(5)], tags=["train", "test"] * 2 + ["train"])
    assert m.sample_files == [f"s{i}.grd" for i in range(5)]
    assert m.indices("test") == [1, 3]
    raw = json.loads((tmp_path / "manifest.json").read_text())
    assert DatasetManifest.from_dict(raw).to_dict() == raw


def test_ingest_rejects_undeclared_variable(tmp_path):
    m = write_manifest(tmp_path, [np.zeros((4, 4))])
    grd.write_grd(tmp_path / "other.grd", np.zeros((4, 4)), {"variable": "pr"})
    with pytest.raises(ConfigError, match="pr"):
        ingest(tmp_path / "other.grd", m)


def test_split_roles_remap_tags(tmp_path):
    m = write_manifest(tmp_path, [np.zeros((4, 4))] * 3, tags=["ssp126", "ssp585", "ssp245"])
    m.split_roles = {"ssp126": "train", "ssp585": "train", "ssp245": "test"}
    assert m.indices("train") == [0, 1]
    assert m.indices("test") == [2]


# -- statistics --------------------------------------------------------------


def test_stats_of_zero_and_two_fields(tmp_path):
    m = write_manifest(tmp_path, [np.zeros((4, 4)), np.full((4, 4), 2.0)])
    s = compute_norm_stats(m)["tas"]
    assert s.mean == 1.0 and s.std == 1.0 and s.n_cells == 32


def test_constant_dataset_rejected(tmp_path):
    m = write_manifest(tmp_path, [np.full((4, 4), 7.0)] * 3)
    with pytest.raises(InvalidStatsError):
        compute_norm_stats(m)


def test_stats_ignore_test_split(tmp_path):
    m = write_manifest(tmp_path, [np.zeros((4, 4)), np.full((4, 4), 2.0), np.full((4, 4), 1e6)], tags=["train", "train", "test"])
    assert compute_norm_stats(m, "train")["tas"].mean == 1.0


def test_stats_pool_across_products(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a = write_manifest(tmp_path / "a", [np.zeros((4, 4))], name="ERA5")
    b = write_manifest(tmp_path / "b", [np.full((4, 4), 2.0)], name="MERRA2")
    s = compute_norm_stats([a, b])["tas"]
    assert (s.mean, s.std) == (1.0, 1.0)


def test_normalised_training_split_is_standard(tmp_path):
    rng = np.random.default_rng(0)
    grids = [rng.normal(280, 12, (16, 16)) for _ in range(6)]
    m = write_manifest(tmp_path, grids)
    s = compute_norm_stats(m)["tas"]
    z = np.stack([normalize(np.asarray(g, dtype=np.float32), s) for g in grids]).astype(np.float64)
    assert abs(z.mean()) <= 1e-5
    assert abs(z.std() - 1) <= 1e-5


def test_stats_file_round_trip(tmp_path):
    m = write_manifest(tmp_path, [np.zeros((4, 4)), np.full((4, 4), 2.0)])
    stats = compute_norm_stats(m)
    save_stats(stats, tmp_path / "stats.json")
    assert load_stats(tmp_path / "stats.json") == stats


def test_load_pairs_and_validation_split(tmp_path):
    rng = np.random.default_rng(1)
    m = write_manifest(tmp_path, [rng.standard_normal((128, 128)) for _ in range(3)])
    stats = compute_norm_stats(m)
    pairs = load_pairs(m, 8, stats, "train")
    assert len(pairs) == 12
    assert pairs.lr.shape == (12, 1, 8, 8) and pairs.hr.shape == (12, 1, 64, 64)
    tr, va = split_validation(pairs, 0.25, seed=3)
    assert len(tr) == 9 and len(va) == 3
    both = np.concatenate([tr.hr, va.hr])
    assert sorted(map(bytes, both.reshape(12, -1))) == sorted(map(bytes, pairs.hr.reshape(12, -1)))


def test_load_pairs_with_native_lr_files(tmp_path):
    rng = np.random.default_rng(2)
    hr = [rng.standard_normal((16, 16)) for _ in range(2)]
    m = write_manifest(tmp_path, hr)
    lr_files = []
    for i in range(2):
        grd.write_grd(tmp_path / f"lr{i}.grd", rng.standard_normal((8, 8)).astype(np.float32), {"variable": "tas"})
        lr_files.append(f"lr{i}.grd")
    m.lr_files = lr_files
    stats = compute_norm_stats(m)
    pairs = load_pairs(m, 2, stats)
    np.testing.assert_allclose(pairs.lr[1, 0], normalize(grd.read_grd(tmp_path / "lr1.grd"), stats["tas"]))
    with pytest.raises(ShapeError):
        load_pairs(m, 8, stats)
