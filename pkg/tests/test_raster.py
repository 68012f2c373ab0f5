import json

import numpy as np
import pytest

from thermosharp.errors import DataError
from thermosharp.raster import (
    EvalTriple, Grid2D, NormStats, ScenePair, as_values_mask, block_mean,
    compute_norm_stats, grid_from_csv, grid_to_csv, load_raster, save_raster,
)


def test_grid_basic_properties():
    g = Grid2D(np.arange(12.0).reshape(3, 4), 100.0, units="K")
    assert g.shape == (3, 4) and g.height == 3 and g.width == 4
    assert g.pixel_size == 100.0 and g.units == "K"
    assert g.all_valid()
    assert np.array_equal(g.valid_values(), np.arange(12.0))


def test_grid_values_are_readonly():
    g = Grid2D(np.ones((2, 2)), 1.0)
    with pytest.raises((ValueError, RuntimeError)):
        g.values[0, 0] = 5.0


def test_grid_masks_nonfinite_and_zeros_invalid():
    v = np.array([[1.0, np.nan], [np.inf, 4.0]])
    g = Grid2D(v, 1.0)
    assert np.array_equal(g.mask, [[True, False], [False, True]])
    assert g.values[0, 1] == 0.0 and g.values[1, 0] == 0.0
    assert np.array_equal(g.valid_values(), [1.0, 4.0])


def test_grid_explicit_mask_zeroes_hidden_values():
    g = Grid2D(np.array([[1.0, 2.0]]), 1.0, mask=np.array([[True, False]]))
    assert g.values[0, 1] == 0.0
    assert not g.all_valid()


def test_grid_rejects_bad_inputs():
    with pytest.raises(ValueError):
        Grid2D(np.ones(3), 1.0)                    # 1-D
    with pytest.raises(ValueError):
        Grid2D(np.ones((2, 2)), 0.0)               # pixel size
    with pytest.raises(ValueError):
        Grid2D(np.ones((2, 2)), 1.0, mask=np.ones((3, 2), bool))
    with pytest.raises(ValueError):
        # non-finite under a True mask is a contradiction
        Grid2D(np.array([[np.nan]]), 1.0, mask=np.array([[True]]))


def test_crop_matches_numpy_slices():
    rng = np.random.default_rng(0)
    g = Grid2D(rng.normal(size=(6, 7)), 2.5, units="K")
    c = g.crop(1, 4, 2, 6)
    assert c.shape == (3, 4)
    assert np.array_equal(c.values, g.values[1:4, 2:6])
    assert c.pixel_size == 2.5 and c.units == "K"


def test_as_values_mask_on_arrays_and_grids():
    v, m = as_values_mask(np.array([[1.0, np.nan]]))
    assert m.tolist() == [[True, False]]
    g = Grid2D(np.ones((2, 2)), 1.0)
    v2, m2 = as_values_mask(g)
    assert v2 is g.values and m2 is g.mask


def test_scene_pair_validates_dims_and_pixel_size():
    lst = Grid2D(np.ones((4, 4)), 400.0, units="K")
    ndvi = Grid2D(np.ones((16, 16)), 100.0)
    pair = ScenePair(lst, ndvi, 4)
    assert pair.r == 4
    with pytest.raises(ValueError):
        ScenePair(lst, Grid2D(np.ones((15, 16)), 100.0), 4)
    with pytest.raises(ValueError):
        ScenePair(lst, Grid2D(np.ones((16, 16)), 90.0), 4)   # pixel mismatch
    with pytest.raises(ValueError):
        ScenePair(lst, ndvi, 1)


def test_eval_triple_validates_reference():
    lst = Grid2D(np.ones((4, 4)), 400.0, units="K")
    ndvi = Grid2D(np.ones((16, 16)), 100.0)
    pair = ScenePair(lst, ndvi, 4)
    EvalTriple(pair, Grid2D(np.ones((16, 16)), 100.0, units="K"))
    with pytest.raises(ValueError):
        EvalTriple(pair, Grid2D(np.ones((8, 8)), 100.0))


def test_norm_stats_validation_and_round_trip():
    s = NormStats(290.0, 2.0, 0.4, 0.1)
    assert NormStats.from_dict(s.to_dict()) == s
    with pytest.raises(ValueError):
        NormStats(0.0, 0.0, 0.0, 1.0)


def test_compute_norm_stats_pools_valid_pixels():
    lst_a = Grid2D(np.array([[1.0, 2.0], [3.0, np.nan]]), 4.0, units="K")
    lst_b = Grid2D(np.full((2, 2), 5.0), 4.0, units="K")
    ndvi = Grid2D(np.linspace(0, 1, 64).reshape(8, 8), 1.0)
    pairs = [ScenePair(lst_a, ndvi, 4), ScenePair(lst_b, ndvi, 4)]
    stats = compute_norm_stats(pairs)
    pooled = np.array([1.0, 2.0, 3.0, 5.0, 5.0, 5.0, 5.0])
    assert stats.lst_mean == pytest.approx(pooled.mean())
    assert stats.lst_std == pytest.approx(pooled.std())
    assert stats.ndvi_mean == pytest.approx(0.5)


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    v = rng.normal(290.0, 3.0, size=(5, 6))
    v[0, 0] = np.nan
    g = Grid2D(v, 250.0, units="K")
    path = tmp_path / "t.f32raw"
    save_raster(g, path)
    back = load_raster(path)
    # disk payload is float32; values survive at that precision
    assert np.array_equal(back.mask, g.mask)
    assert np.allclose(back.valid_values(), g.valid_values(), rtol=1e-6)
    assert back.pixel_size == 250.0 and back.units == "K"
    sidecar = json.loads((tmp_path / "t.json").read_text())
    assert sidecar["width"] == 6 and sidecar["height"] == 5
    assert sidecar["stats"]["valid_count"] == 29


def test_load_raster_failure_modes(tmp_path):
    with pytest.raises(DataError):
        load_raster(tmp_path / "missing.f32raw")
    g = Grid2D(np.ones((2, 2)), 1.0)
    path = tmp_path / "v.f32raw"
    save_raster(g, path)
    path.write_bytes(b"\x00" * 4)   # truncated payload
    with pytest.raises(DataError):
        load_raster(path)
    (tmp_path / "v.json").write_text("{not json")
    with pytest.raises(DataError):
        load_raster(path)


def test_csv_round_trip(tmp_path):
    v = np.array([[1.5, np.nan], [2.0, -3.25]])
    g = Grid2D(v, 10.0)
    path = tmp_path / "g.csv"
    grid_to_csv(g, path)
    back = grid_from_csv(path, 10.0)
    assert np.array_equal(back.mask, g.mask)
    assert np.array_equal(back.valid_values(), g.valid_values())
    with pytest.raises(DataError):
        grid_from_csv(tmp_path / "missing.csv", 1.0)


def test_block_mean_matches_reshape_oracle():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(8, 12))
    out = block_mean(v, 4)
    oracle = v.reshape(2, 4, 3, 4).mean(axis=(1, 3))
    assert np.allclose(out, oracle, rtol=1e-14)


def test_block_mean_mask_and_grid_semantics():
    v = np.arange(16.0).reshape(4, 4)
    mask = np.ones((4, 4), bool)
    mask[:2, :2] = False          # entire first block invalid
    mask[0, 2] = False            # one pixel of another block invalid
    g = Grid2D(v, 50.0, mask, units="K")
    out = block_mean(g, 2)
    assert isinstance(out, Grid2D)
    assert out.pixel_size == 100.0 and out.units == "K"
    assert not out.mask[0, 0]
    # partial block averages its remaining valid pixels
    expected = np.mean([v[1, 2], v[1, 3], v[0, 3]])
    assert out.values[0, 1] == pytest.approx(expected)
    with pytest.raises(ValueError):
        block_mean(v, 3)          # 4 not divisible by 3
