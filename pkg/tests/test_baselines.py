import numpy as np
import pytest

from thermosharp import baselines, datagen, linops
from thermosharp.errors import DataError, NumericError
from thermosharp.raster import Grid2D, ScenePair, block_mean


def _linear_scene(n=64, r=4, slope=-11.0, intercept=300.0, seed=3):
    """Scene whose fine thermal field is an exact affine map of the index."""
    rng = np.random.default_rng(seed)
    ndvi = Grid2D(datagen.fractal_field(n, -2.0, rng), 100.0, units="1")
    lst_hr = Grid2D(intercept + slope * ndvi.values, 100.0, units="K")
    lst_lr = linops.mtf_degrade(lst_hr, r)
    return ScenePair(lst_lr, ndvi, r), lst_hr


# ---------------------------------------------------------------------------
# regression

def test_fit_linear_recovers_exact_affine_map():
    rng = np.random.default_rng(0)
    v = Grid2D(rng.uniform(0.1, 0.9, size=(12, 12)), 400.0)
    t = Grid2D(290.0 - 8.0 * v.values, 400.0, units="K")
    model = baselines.fit_linear(t, v)
    assert model.slope == pytest.approx(-8.0, abs=1e-10)
    assert model.intercept == pytest.approx(290.0, abs=1e-8)
    assert np.abs(model.residual_lr.values).max() < 1e-10


def test_fit_linear_residual_definition():
    rng = np.random.default_rng(1)
    v = Grid2D(rng.uniform(size=(10, 10)), 400.0)
    t = Grid2D(280.0 + 5.0 * v.values + rng.normal(0, 0.5, (10, 10)), 400.0,
               units="K")
    model = baselines.fit_linear(t, v)
    expect = t.values - (model.slope * v.values + model.intercept)
    assert np.allclose(model.residual_lr.values, expect)
    assert model.residual_lr.pixel_size == 400.0
    # OLS residuals are centered and orthogonal to the regressor
    assert abs(model.residual_lr.values.mean()) < 1e-10
    assert abs(model.residual_lr.values.ravel() @ v.values.ravel()) < 1e-7


def test_fit_linear_constant_index_is_degenerate():
    v = Grid2D(np.full((8, 8), 0.4), 400.0)
    t = Grid2D(np.full((8, 8), 290.0), 400.0, units="K")
    with pytest.raises(NumericError):
        baselines.fit_linear(t, v)


def test_fit_linear_needs_two_joint_pixels():
    mask = np.zeros((4, 4), dtype=bool)
    mask[0, 0] = True
    v = Grid2D(np.ones((4, 4)), 400.0, mask)
    t = Grid2D(np.full((4, 4), 290.0), 400.0, mask, "K")
    with pytest.raises(DataError):
        baselines.fit_linear(t, v)


# ---------------------------------------------------------------------------
# exact recovery of zero-residual scenes

def test_tsharp_recovers_exact_linear_scene():
    pair, lst_hr = _linear_scene()
    sr = baselines.tsharp_sharpen(pair)
    assert sr.shape == lst_hr.shape
    assert sr.units == "K"
    assert np.abs(sr.values - lst_hr.values).max() < 1e-8


def test_atprk_recovers_exact_linear_scene():
    pair, lst_hr = _linear_scene()
    sr = baselines.atprk_sharpen(pair)
    assert np.abs(sr.values - lst_hr.values).max() < 1e-8


# ---------------------------------------------------------------------------
# variogram estimation

def test_empirical_variogram_of_white_noise_is_flat():
    rng = np.random.default_rng(5)
    res = Grid2D(rng.standard_normal((16, 16)), 400.0)
    emp = baselines.empirical_variogram(res)
    # semivariance of iid noise is the variance at every lag
    assert np.allclose(emp.lags_m % 400.0, 0.0)
    assert emp.lags_m[0] == 400.0
    assert emp.pair_counts.min() > 50
    assert np.all(np.abs(emp.semivariances - 1.0) < 0.4)
    assert abs(emp.semivariances.mean() - 1.0) < 0.12


def test_empirical_variogram_needs_enough_pixels():
    res = Grid2D(np.random.default_rng(0).standard_normal((5, 5)), 400.0)
    with pytest.raises(DataError):
        baselines.empirical_variogram(res)


def test_empirical_variogram_respects_max_lag():
    rng = np.random.default_rng(6)
    res = Grid2D(rng.standard_normal((16, 16)), 400.0)
    emp = baselines.empirical_variogram(res, max_lag_px=3)
    assert emp.lags_m.max() <= 3 * 400.0


def test_fit_variogram_recovers_model_from_its_own_curve():
    true = baselines.VariogramModel(nugget=0.2, partial_sill=1.0, range_m=800.0)
    lags = np.arange(1, 16, dtype=np.float64) * 100.0
    emp = baselines.EmpiricalVariogram(
        lags, true.semivariance(lags), np.full(lags.shape, 1000, dtype=np.int64))
    fit = baselines.fit_variogram(emp)
    assert not fit.from_fallback
    assert fit.nugget == pytest.approx(0.2, abs=0.02)
    assert fit.partial_sill == pytest.approx(1.0, rel=0.05)
    assert fit.range_m == pytest.approx(800.0, rel=0.05)


def test_fit_variogram_flat_curve_gives_pure_nugget():
    lags = np.arange(1, 10, dtype=np.float64) * 100.0
    emp = baselines.EmpiricalVariogram(
        lags, np.full(lags.shape, 0.5), np.full(lags.shape, 500, dtype=np.int64))
    fit = baselines.fit_variogram(emp)
    assert fit.nugget + fit.partial_sill == pytest.approx(0.5, abs=1e-3)
    assert fit.partial_sill < 1e-3


def test_fit_variogram_needs_three_bins():
    emp = baselines.EmpiricalVariogram(
        np.array([100.0, 200.0]), np.array([0.5, 0.6]),
        np.array([10, 10], dtype=np.int64))
    with pytest.raises(DataError):
        baselines.fit_variogram(emp)


def test_variogram_model_identities():
    m = baselines.VariogramModel(nugget=0.3, partial_sill=0.9, range_m=500.0)
    assert m.semivariance(0.0) == 0.0
    assert m.covariance(0.0) == pytest.approx(1.2)
    h = np.array([50.0, 200.0, 500.0, 2000.0])
    # gamma(h) + C(h) equals the sill at any positive lag
    assert np.allclose(m.semivariance(h) + m.covariance(h), 1.2)
    g = m.semivariance(h)
    assert np.all(np.diff(g) > 0)
    # at the range parameter the model reaches 95% of its sill
    assert m.semivariance(500.0) == pytest.approx(
        0.3 + 0.9 * (1 - np.exp(-3.0)))


# ---------------------------------------------------------------------------
# area-to-point kriging

@pytest.fixture(scope="module")
def residual_and_model():
    rng = np.random.default_rng(11)
    smooth = linops.conv_replicate(rng.standard_normal((12, 12)),
                                   linops.gaussian_kernel(1.5))
    res = Grid2D(smooth - smooth.mean(), 400.0, units="K")
    model = baselines.VariogramModel(nugget=0.01, partial_sill=0.5,
                                     range_m=1500.0)
    return res, model


def test_kriging_weights_sum_to_one_everywhere(residual_and_model):
    res, model = residual_and_model
    plan = baselines.build_kriging_plan(res, model, r=4)
    sums = plan.weights.sum(axis=-1)
    assert np.abs(sums - 1.0).max() < 1e-10


def test_kriging_weights_sum_to_one_with_masked_blocks(residual_and_model):
    res, model = residual_and_model
    mask = np.ones(res.shape, dtype=bool)
    mask[3, 4] = False
    holed = Grid2D(res.values, res.pixel_size, mask, res.units)
    plan = baselines.build_kriging_plan(holed, model, r=4)
    sums = plan.weights.sum(axis=-1)
    assert np.abs(sums - 1.0).max() < 1e-10


def test_kriging_rejects_even_neighborhood(residual_and_model):
    res, model = residual_and_model
    with pytest.raises(ValueError):
        baselines.build_kriging_plan(res, model, r=4, neighborhood=4)


def test_atp_kriging_is_block_mean_coherent(residual_and_model):
    res, model = residual_and_model
    fine = baselines.atp_kriging(res, model, r=4)
    assert fine.shape == (48, 48)
    assert fine.pixel_size == pytest.approx(100.0)
    back = block_mean(fine, 4)
    assert np.abs(back.values - res.values).max() < 1e-8


def test_atp_kriging_flat_model_degenerates_to_nearest_neighbor(
        residual_and_model):
    res, _ = residual_and_model
    flat = baselines.VariogramModel(nugget=0.5, partial_sill=0.0, range_m=400.0)
    fine = baselines.atp_kriging(res, flat, r=4)
    assert np.array_equal(fine.values, np.kron(res.values, np.ones((4, 4))))


def test_atprk_coherence_on_synthetic_scene():
    scene = datagen.synth_scene(datagen.SynthConfig(hr_size=64, seed=21))
    pair = scene.pair
    v_lr = baselines.degrade_ndvi(pair.ndvi_hr, pair.r)
    model = baselines.fit_linear(pair.lst_lr, v_lr)
    vario = baselines.fit_variogram(
        baselines.empirical_variogram(model.residual_lr))
    fine = baselines.atp_kriging(model.residual_lr, vario, pair.r)
    back = block_mean(fine, pair.r)
    err = np.abs(back.values - model.residual_lr.values)
    assert err.mean() < 0.05 * model.residual_lr.values.std()
    assert err.max() < 1e-8  # coherent to solver precision, not just on average


# ---------------------------------------------------------------------------
# bicubic baseline

def test_bicubic_baseline_shape_and_constant():
    t = Grid2D(np.full((8, 8), 290.0), 400.0, units="K")
    v = Grid2D(np.random.default_rng(0).uniform(size=(32, 32)), 100.0)
    sr = baselines.bicubic_baseline(ScenePair(t, v, 4))
    assert sr.shape == (32, 32)
    assert sr.pixel_size == 100.0
    assert np.allclose(sr.values, 290.0)


def test_bicubic_baseline_masked_coarse_pixel():
    rng = np.random.default_rng(2)
    vals = 290.0 + rng.normal(size=(8, 8))
    mask = np.ones((8, 8), dtype=bool)
    mask[2, 3] = False
    t = Grid2D(vals, 400.0, mask, "K")
    v = Grid2D(rng.uniform(size=(32, 32)), 100.0)
    sr = baselines.bicubic_baseline(ScenePair(t, v, 4))
    # the invalid coarse block maps to an invalid 4x4 fine block
    assert not sr.mask[8:12, 12:16].any()
    assert sr.mask.sum() == 32 * 32 - 16
    assert np.all(sr.values[~sr.mask] == 0.0)


def test_tsharp_propagates_index_mask():
    pair, _ = _linear_scene(n=32)
    vals = pair.ndvi_hr.values.copy()
    mask = np.ones_like(vals, dtype=bool)
    mask[5, 7] = False
    holed = ScenePair(pair.lst_lr, Grid2D(vals, 100.0, mask), pair.r)
    sr = baselines.tsharp_sharpen(holed)
    assert not sr.mask[5, 7]
    assert sr.values[5, 7] == 0.0


# ---------------------------------------------------------------------------
# golden raster

def test_atprk_matches_golden_raster(golden_dir):
    from thermosharp.raster import load_raster
    scene = datagen.synth_scene(datagen.SynthConfig(hr_size=64, seed=42))
    sr = baselines.atprk_sharpen(scene.pair)
    golden = load_raster(golden_dir / "atprk_seed42.f32raw")
    # golden values are stored as float32; tolerance covers the quantization
    assert sr.shape == golden.shape
    assert np.abs(sr.values - golden.values).max() < 5e-5
