import numpy as np
import pytest

from thermosharp import baselines, datagen, linops, objective
from thermosharp.errors import ConfigError, DataError
from thermosharp.raster import EvalTriple, Grid2D, ScenePair


# ---------------------------------------------------------------------------
# configuration

def test_synth_config_validation():
    with pytest.raises(ConfigError):
        datagen.SynthConfig(hr_size=4)
    with pytest.raises(ConfigError):
        datagen.SynthConfig(hr_size=66, scale_factor=4)  # not a multiple
    with pytest.raises(ConfigError):
        datagen.SynthConfig(scale_factor=1)
    with pytest.raises(ConfigError):
        datagen.SynthConfig(trend_ndvi_weight=1.5)
    with pytest.raises(ConfigError):
        datagen.SynthConfig(ndvi_texture_corr=0.0)
    with pytest.raises(ConfigError):
        datagen.SynthConfig(ndvi_texture_corr=1.1)
    with pytest.raises(ConfigError):
        datagen.SynthConfig(noise_std_k=-0.1)
    with pytest.raises(ConfigError):
        datagen.SynthConfig(pixel_size_m=0.0)


def test_synth_config_dict_round_trip():
    cfg = datagen.SynthConfig(hr_size=64, seed=5, gamma_true=-1.0)
    assert datagen.SynthConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------------------
# field construction

def test_fractal_field_range_and_determinism():
    f1 = datagen.fractal_field(64, -2.0, np.random.default_rng(3))
    f2 = datagen.fractal_field(64, -2.0, np.random.default_rng(3))
    assert np.array_equal(f1, f2)
    assert f1.min() == 0.0 and f1.max() == 1.0


def test_fractal_field_slope_controls_smoothness():
    from thermosharp import metrics
    rough = datagen.fractal_field(128, -1.0, np.random.default_rng(4))
    smooth = datagen.fractal_field(128, -4.0, np.random.default_rng(4))
    _, ar = metrics.radial_spectrum(rough + 1.0)
    _, as_ = metrics.radial_spectrum(smooth + 1.0)
    # steeper spectral slope leaves less relative high-frequency power
    assert (as_[40:] / as_[1]).mean() < (ar[40:] / ar[1]).mean()


def test_synth_scene_shapes_and_units(synth_scene_small):
    scene = synth_scene_small
    assert isinstance(scene, EvalTriple)
    pair, ref = scene.pair, scene.ref_hr
    assert ref.shape == (64, 64) and pair.ndvi_hr.shape == (64, 64)
    assert pair.lst_lr.shape == (16, 16)
    assert pair.lst_lr.pixel_size == 400.0
    assert ref.units == "K" and pair.lst_lr.units == "K"
    assert pair.ndvi_hr.values.min() >= 0.0
    assert pair.ndvi_hr.values.max() <= 1.0


def test_synth_scene_deterministic():
    cfg = datagen.SynthConfig(hr_size=32, seed=13)
    a = datagen.synth_scene(cfg)
    b = datagen.synth_scene(cfg)
    assert np.array_equal(a.ref_hr.values, b.ref_hr.values)
    assert np.array_equal(a.pair.ndvi_hr.values, b.pair.ndvi_hr.values)


def test_coarse_grid_is_exactly_the_degraded_fine_grid(synth_scene_small):
    pair, ref = synth_scene_small.pair, synth_scene_small.ref_hr
    redeg = linops.mtf_degrade(ref, pair.r)
    assert np.array_equal(pair.lst_lr.values, redeg.values)


# ---------------------------------------------------------------------------
# coupling properties the benchmark relies on

def test_fine_texture_anticorrelates_with_index():
    corrs = []
    for seed in range(8):
        scene = datagen.synth_scene(datagen.SynthConfig(hr_size=128, seed=seed))
        k = linops.gaussian_kernel(linops.default_mtf_sigma(scene.pair.r))
        hp_t = linops.highpass(scene.ref_hr.values, k).ravel()
        hp_v = linops.highpass(scene.pair.ndvi_hr.values, k).ravel()
        corrs.append(np.corrcoef(hp_t, hp_v)[0, 1])
    corrs = np.array(corrs)
    # partially informative on purpose: clearly negative, far from -1
    assert np.all(corrs < -0.40)
    assert np.all(corrs > -0.60)
    assert corrs.mean() < -0.45


def test_coarse_regression_overstates_the_texture_coupling():
    ratios = []
    for seed in range(8):
        cfg = datagen.SynthConfig(hr_size=128, seed=seed)
        scene = datagen.synth_scene(cfg)
        v_lr = baselines.degrade_ndvi(scene.pair.ndvi_hr, scene.pair.r)
        slope = baselines.fit_linear(scene.pair.lst_lr, v_lr).slope
        ratios.append(slope / cfg.gamma_true)
    ratios = np.array(ratios)
    # the smooth trend rides on the smoothed index, inflating the coarse fit
    assert np.all(ratios > 1.0)
    assert ratios.mean() > 1.3


def test_standardized_coupling_sits_in_the_preset_range():
    gs = []
    for seed in range(8):
        scene = datagen.synth_scene(datagen.SynthConfig(hr_size=128, seed=seed))
        pair = scene.pair
        stats = objective.stats_from_pair(pair)
        k = linops.gaussian_kernel(linops.default_mtf_sigma(pair.r))
        t_std = (scene.ref_hr.values - stats.lst_mean) / stats.lst_std
        v_std = (pair.ndvi_hr.values - stats.ndvi_mean) / stats.ndvi_std
        ht = linops.highpass(t_std, k).ravel()
        hv = linops.highpass(v_std, k).ravel()
        gs.append(float(ht @ hv / (hv @ hv)))
    gs = np.array(gs)
    assert np.all(gs < -0.25)
    assert np.all(gs > -0.50)
    assert -0.42 < gs.mean() < -0.30


# ---------------------------------------------------------------------------
# evaluation reference

def test_degrade_reference_blur_only_keeps_grid(synth_scene_small):
    ref = synth_scene_small.ref_hr
    out = datagen.degrade_reference(ref, half_width_m=100.0)
    assert out.shape == ref.shape
    assert out.pixel_size == ref.pixel_size
    # a 0.5 px sigma blur must remove variance, not add bias
    assert out.values.std() < ref.values.std()
    assert out.values.mean() == pytest.approx(ref.values.mean(), abs=0.05)


def test_degrade_reference_small_half_width_is_identity(synth_scene_small):
    ref = synth_scene_small.ref_hr
    # sigma = 0.5 * 50 / 100 = 0.25 px, under the identity-kernel threshold
    out = datagen.degrade_reference(ref, half_width_m=50.0)
    assert np.array_equal(out.values, ref.values)


def test_degrade_reference_resamples_to_target_gsd(synth_scene_small):
    ref = synth_scene_small.ref_hr
    out = datagen.degrade_reference(ref, target_gsd_m=200.0, half_width_m=250.0)
    assert out.shape == (32, 32)
    assert out.pixel_size == 200.0


def test_degrade_reference_validation(synth_scene_small):
    ref = synth_scene_small.ref_hr
    with pytest.raises(ConfigError):
        datagen.degrade_reference(ref, half_width_m=0.0)
    with pytest.raises(ConfigError):
        datagen.degrade_reference(ref, target_gsd_m=-5.0)
    with pytest.raises(ConfigError):
        datagen.degrade_reference(ref, target_gsd_m=1e7)  # coarser than extent
    holed = Grid2D(ref.values, ref.pixel_size,
                   np.ones(ref.shape, bool) & (ref.values > -1), ref.units)
    mask = holed.mask.copy()
    mask[0, 0] = False
    holed = Grid2D(ref.values, ref.pixel_size, mask, ref.units)
    with pytest.raises(DataError):
        datagen.degrade_reference(holed, target_gsd_m=200.0)


# ---------------------------------------------------------------------------
# patch slicing

def test_slice_patches_partitions_the_scene(synth_scene_medium):
    pair = synth_scene_medium.pair
    patches = datagen.slice_patches(synth_scene_medium, lr_patch=8)
    assert len(patches) == 16
    # reassemble the coarse grid from the row-major tiles
    tiles = [p.lst_lr.values for p in patches]
    rows = [np.hstack(tiles[i * 4:(i + 1) * 4]) for i in range(4)]
    assert np.array_equal(np.vstack(rows), pair.lst_lr.values)
    hr_tiles = [p.ndvi_hr.values for p in patches]
    rows = [np.hstack(hr_tiles[i * 4:(i + 1) * 4]) for i in range(4)]
    assert np.array_equal(np.vstack(rows), pair.ndvi_hr.values)
    assert all(p.r == pair.r for p in patches)


def test_slice_patches_rejects_masked_tiles(synth_scene_medium):
    pair = synth_scene_medium.pair
    vals = pair.ndvi_hr.values.copy()
    mask = np.ones_like(vals, dtype=bool)
    mask[0, 0] = False
    holed = ScenePair(pair.lst_lr, Grid2D(vals, 100.0, mask), pair.r)
    assert len(datagen.slice_patches(holed, lr_patch=8)) == 15
    assert len(datagen.slice_patches(holed, lr_patch=8,
                                     reject_masked=False)) == 16


def test_slice_patches_requires_even_tiling(synth_scene_medium):
    with pytest.raises(ValueError):
        datagen.slice_patches(synth_scene_medium, lr_patch=5)
    with pytest.raises(ValueError):
        datagen.slice_patches(synth_scene_medium, lr_patch=0)


# ---------------------------------------------------------------------------
# scene directories

def test_scene_round_trip(tmp_path, synth_scene_small):
    cfg = datagen.SynthConfig(hr_size=64, seed=7)
    d = tmp_path / "scene"
    datagen.write_scene(d, synth_scene_small, cfg)
    back = datagen.read_scene(d)
    assert isinstance(back, EvalTriple)
    # payloads are float32 on disk
    assert np.allclose(back.ref_hr.values, synth_scene_small.ref_hr.values,
                       atol=1e-3)
    assert back.pair.r == synth_scene_small.pair.r
    assert back.pair.lst_lr.pixel_size == 400.0
    assert datagen.read_scene_config(d) == cfg


def test_scene_round_trip_without_reference(tmp_path, synth_scene_small):
    d = tmp_path / "scene"
    datagen.write_scene(d, synth_scene_small.pair)
    back = datagen.read_scene(d)
    assert isinstance(back, ScenePair)
    assert datagen.read_scene_config(d) is None
    with pytest.raises(DataError):
        datagen.read_scene(d, need_reference=True)


def test_read_scene_rejects_non_scene_dir(tmp_path):
    with pytest.raises(DataError):
        datagen.read_scene(tmp_path)


def test_make_suite(tmp_path):
    cfg = datagen.SynthConfig(hr_size=32)
    paths = datagen.make_suite(tmp_path, cfg, count=3, start_seed=40)
    assert [p.split("/")[-1] for p in paths] == ["scene_000", "scene_001",
                                                 "scene_002"]
    seeds = [datagen.read_scene_config(p).seed for p in paths]
    assert seeds == [40, 41, 42]
    first = datagen.read_scene(paths[0])
    direct = datagen.synth_scene(datagen.SynthConfig(hr_size=32, seed=40))
    assert np.allclose(first.ref_hr.values, direct.ref_hr.values, atol=1e-3)
    with pytest.raises(ConfigError):
        datagen.make_suite(tmp_path, cfg, count=0)
