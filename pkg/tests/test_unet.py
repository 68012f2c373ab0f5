import numpy as np
import pytest
from dataclasses import replace

from thermosharp import datagen, objective, unet
from thermosharp.raster import Grid2D


def param_count_oracle(widths):
    """Per-layer arithmetic for the fixed plan: 3x3 convs without bias,
    batchnorm (scale+shift) everywhere except the head."""
    c0, c1, c2, c3 = widths
    convs = [
        (2, c0), (c0, c0),                      # stem
        (c0, c0), (c0, c0), (c0, c1),           # encoder level 1
        (c1, c1), (c1, c1), (c1, c2),           # encoder level 2
        (c2, c2), (c2, c2), (c2, c3),           # encoder level 3
        (c3 + c2, c2), (c2, c2),                # decoder level 3
        (c2 + c1, c1), (c1, c1),                # decoder level 2
        (c1 + c0, c0), (c0, c0),                # decoder level 1
        (c0, 1),                                # head (no batchnorm)
    ]
    conv_params = sum(9 * ci * co for ci, co in convs)
    bn_params = sum(2 * co for _, co in convs[:-1])
    return conv_params + bn_params


def test_param_count_matches_independent_arithmetic():
    for widths in ((8, 16, 32, 64), (4, 8, 16, 32), (8, 8, 8, 8)):
        params = unet.build_unet(unet.UNetConfig(base_channels=widths))
        assert params.param_count() == param_count_oracle(widths)


def test_param_count_frozen_value_for_base_plan():
    params = unet.build_unet(unet.UNetConfig(base_channels=(8, 16, 32, 64)))
    assert params.param_count() == 98264


def test_build_is_deterministic_per_seed():
    cfg = unet.UNetConfig(seed=5)
    a = unet.build_unet(cfg).named_arrays()
    b = unet.build_unet(cfg).named_arrays()
    c = unet.build_unet(replace(cfg, seed=6)).named_arrays()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a)


def test_config_validation():
    with pytest.raises(ValueError):
        unet.UNetConfig(base_channels=(8, 16, 32))
    with pytest.raises(ValueError):
        unet.UNetConfig(in_channels=3)
    with pytest.raises(ValueError):
        unet.UNetConfig(out_channels=2)
    cfg = unet.UNetConfig()
    assert unet.UNetConfig.from_dict(cfg.to_dict()) == cfg


def test_forward_shapes_and_dim_requirements():
    params = unet.build_unet(unet.UNetConfig(base_channels=(4, 4, 4, 4)))
    out = unet.unet_forward(params, np.zeros((16, 16)), np.zeros((16, 16)))
    assert out.shape == (16, 16)
    with pytest.raises(ValueError):
        unet.unet_forward(params, np.zeros((12, 12)), np.zeros((12, 12)))
    with pytest.raises(ValueError):
        unet.unet_forward(params, np.zeros((16, 16)), np.zeros((16, 8)))
    with pytest.raises(ValueError):
        unet.unet_forward(params, np.zeros((16, 16)), np.zeros((16, 16)),
                          mode="train")
    with pytest.raises(ValueError):
        unet.unet_forward(params, np.zeros((16, 16)), np.zeros((16, 16)),
                          mode="jit")


def test_forward_is_deterministic():
    params = unet.build_unet(unet.UNetConfig(base_channels=(4, 4, 4, 4)))
    rng = np.random.default_rng(0)
    v, t = rng.normal(size=(16, 16)), rng.normal(size=(16, 16))
    assert np.array_equal(unet.unet_forward(params, v, t),
                          unet.unet_forward(params, v, t))


@pytest.fixture(scope="module")
def tiny_training():
    scene = datagen.synth_scene(replace(datagen.SynthConfig(hr_size=64), seed=50))
    patches = datagen.slice_patches(scene, 8)    # 4 patches of 32 px hr
    cfg = unet.UNetConfig(base_channels=(4, 8, 8, 8), seed=0)
    sif_cfg = objective.sif_preset("sif1")
    params, history, stats = unet.train_sif(patches, sif_cfg, cfg,
                                            epochs=8, batch_size=2, lr=2e-3,
                                            seed=0)
    return patches, params, history, stats, sif_cfg


def test_train_sif_reduces_loss_and_reports_breakdowns(tiny_training):
    _, _, history, _, _ = tiny_training
    assert len(history) == 8
    assert all(isinstance(h, objective.LossBreakdown) for h in history)
    assert history[-1].total < history[0].total


def test_infer_returns_kelvin_grid(tiny_training):
    patches, params, _, stats, _ = tiny_training
    pair = patches[0]
    out = unet.infer(params, pair, stats)
    assert isinstance(out, Grid2D)
    assert out.units == "K"
    assert out.shape == pair.ndvi_hr.shape
    assert out.pixel_size == pair.ndvi_hr.pixel_size
    # output lives near the coarse grid's temperature range
    assert abs(out.values.mean() - pair.lst_lr.values.mean()) < 5.0


def test_sif_loss_of_matches_objective_on_inferred_grid(tiny_training):
    patches, params, _, stats, sif_cfg = tiny_training
    pair = patches[1]
    lb = unet.sif_loss_of(params, pair, sif_cfg, stats)
    sr = unet.infer(params, pair, stats)
    std_sr = objective.standardize(sr, stats.lst_mean, stats.lst_std)
    std_pair = objective.standardize_pair(pair, stats)
    lb2 = objective.sif_loss(std_sr, std_pair, sif_cfg)
    assert lb.total == pytest.approx(lb2.total, rel=1e-12)


def test_save_load_round_trip(tiny_training, tmp_path):
    patches, params, _, stats, _ = tiny_training
    unet.save_unet(tmp_path, params, stats, extra_meta={"mode": "sif1"})
    params2, stats2, meta = unet.load_unet(tmp_path)
    assert stats2 == stats
    assert meta["mode"] == "sif1"
    a, b = params.named_arrays(), params2.named_arrays()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    pair = patches[0]
    assert np.array_equal(unet.infer(params, pair, stats).values,
                          unet.infer(params2, pair, stats2).values)


def test_train_sc_returns_scalar_history():
    scene = datagen.synth_scene(replace(datagen.SynthConfig(hr_size=64), seed=51))
    patches = datagen.slice_patches(scene, 8)    # 4 patches, coarse 8 px
    cfg = unet.UNetConfig(base_channels=(4, 8, 8, 8), seed=0)
    params, history, stats = unet.train_sc(patches, cfg, epochs=3,
                                           batch_size=2, lr=1e-3, seed=0)
    assert len(history) == 3
    assert all(isinstance(h, float) for h in history)
    out = unet.infer(params, patches[0], stats)
    assert out.shape == patches[0].ndvi_hr.shape


def test_train_sc_rejects_coarse_dims_not_divisible_by_r():
    from thermosharp.raster import ScenePair
    lst = Grid2D(np.full((6, 6), 290.0), 400.0, units="K")
    ndvi = Grid2D(np.random.default_rng(0).uniform(size=(24, 24)), 100.0)
    pair = ScenePair(lst, ndvi, 4)
    cfg = unet.UNetConfig(base_channels=(4, 8, 8, 8), seed=0)
    with pytest.raises(ValueError):
        unet.train_sc([pair, pair], cfg, epochs=1, batch_size=2, lr=1e-3, seed=0)
