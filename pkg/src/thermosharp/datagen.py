"""Synthetic scene generation for tests, demos, and benchmarks.

A scene couples a fine vegetation-index field to temperature at two spatial
frequencies on purpose: a strong negative association between the smooth
trend and the smoothed index, and a much weaker one between their fine-scale
textures. Regression baselines calibrated on coarse grids therefore inject
too much index texture when applied at fine scale, which is exactly the
failure mode the variational and learned sharpeners are meant to avoid.

The observed index is only partially informative about the temperature
texture: it is a correlated mixture of the texture-driving field and an
independent field with the same spectrum (ndvi_texture_corr sets the
correlation). Mean-square-trained predictors shrink toward the conditional
mean and under-restore fine texture, while texture-matching objectives
spend their full budget on the observed index.

The coarse thermal grid is produced from the fine one with the same
observation operator the sharpeners assume, so the forward model is exact by
construction.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import linops
from .errors import ConfigError, DataError
from .raster import EvalTriple, Grid2D, ScenePair, load_raster, save_raster


@dataclass(frozen=True)
class SynthConfig:
    hr_size: int = 256
    scale_factor: int = 4
    pixel_size_m: float = 100.0
    spectral_slope: float = -2.0          # index field power-law exponent
    gamma_true: float = -2.5              # fine texture coupling, K per index unit
    trend_amplitude_k: float = 0.75
    trend_ndvi_weight: float = 0.5        # 0 = independent trend, 1 = index-driven
    ndvi_texture_corr: float = 0.7        # corr(observed index, texture driver)
    noise_std_k: float = 0.2
    base_temperature_k: float = 295.0
    mtf_sigma_px: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.hr_size < 8:
            raise ConfigError("hr_size must be at least 8")
        if self.scale_factor < 2 or self.hr_size % self.scale_factor:
            raise ConfigError("hr_size must be a multiple of scale_factor >= 2")
        if not 0.0 <= self.trend_ndvi_weight <= 1.0:
            raise ConfigError("trend_ndvi_weight must lie in [0, 1]")
        if not 0.0 < self.ndvi_texture_corr <= 1.0:
            raise ConfigError("ndvi_texture_corr must lie in (0, 1]")
        if self.noise_std_k < 0 or self.trend_amplitude_k < 0:
            raise ConfigError("amplitudes must be non-negative")
        if self.pixel_size_m <= 0:
            raise ConfigError("pixel_size_m must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)


def fractal_field(n, slope, rng) -> np.ndarray:
    """Isotropic random field with power-law spectrum, min-max scaled to [0, 1]."""
    f = np.fft.fftfreq(n)
    rho = np.hypot(f[:, None], f[None, :])
    amp = np.zeros_like(rho)
    nz = rho > 0
    amp[nz] = rho[nz] ** (slope / 2.0)
    spec = amp * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    field = np.fft.ifft2(spec).real
    lo, hi = field.min(), field.max()
    if hi - lo <= 0:
        return np.full((n, n), 0.5)
    return (field - lo) / (hi - lo)


def _standardized(x):
    s = x.std()
    return (x - x.mean()) / (s if s > 0 else 1.0)


def synth_scene(cfg: SynthConfig) -> EvalTriple:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.hr_size
    r = cfg.scale_factor
    sigma = linops.default_mtf_sigma(r) if cfg.mtf_sigma_px is None \
        else cfg.mtf_sigma_px
    kernel = linops.gaussian_kernel(sigma)

    # Observed index = correlated mixture of the texture driver and an
    # independent same-spectrum field, rescaled to [0, 1]; the driver gets
    # the same affine map so both share fine-scale units.
    z_driver = _standardized(fractal_field(n, cfg.spectral_slope, rng))
    z_indep = _standardized(fractal_field(n, cfg.spectral_slope, rng))
    c = cfg.ndvi_texture_corr
    mixed = c * z_driver + np.sqrt(1.0 - c * c) * z_indep
    lo, hi = mixed.min(), mixed.max()
    span = hi - lo if hi > lo else 1.0
    ndvi = (mixed - lo) / span
    driver = (z_driver - lo) / span

    driver_smooth = linops.conv_replicate(driver, kernel)
    trend_own = fractal_field(n, cfg.spectral_slope - 2.0, rng)
    w = cfg.trend_ndvi_weight
    mix = -w * _standardized(driver_smooth) + (1.0 - w) * _standardized(trend_own)
    trend = cfg.trend_amplitude_k * _standardized(mix)

    texture = cfg.gamma_true * linops.highpass(driver, kernel)
    noise = cfg.noise_std_k * rng.standard_normal((n, n))

    lst_hr = Grid2D(cfg.base_temperature_k + trend + texture + noise,
                    cfg.pixel_size_m, units="K")
    ndvi_hr = Grid2D(ndvi, cfg.pixel_size_m, units="1")
    lst_lr = linops.mtf_degrade(lst_hr, r, cfg.mtf_sigma_px)
    return EvalTriple(ScenePair(lst_lr, ndvi_hr, r), lst_hr)


def degrade_reference(lst_hr: Grid2D, target_gsd_m=None,
                      half_width_m=250.0) -> Grid2D:
    """Evaluation reference: the fine grid as an ideal fine-resolution
    thermal sensor would record it.

    Gaussian blur with half kernel width half_width_m on the ground (sigma is
    half of it), then bicubic resampling to target_gsd_m. target_gsd_m of
    None keeps the input grid; it must stay finer than the image extent.
    """
    if half_width_m <= 0:
        raise ConfigError("half_width_m must be positive")
    kernel = linops.gaussian_kernel(0.5 * half_width_m / lst_hr.pixel_size)
    mask = None if lst_hr.all_valid() else lst_hr.mask
    values = linops.conv_replicate(lst_hr.values, kernel, mask)
    if target_gsd_m is None or target_gsd_m == lst_hr.pixel_size:
        return Grid2D(np.where(lst_hr.mask, values, 0.0), lst_hr.pixel_size,
                      lst_hr.mask, lst_hr.units)
    target_gsd_m = float(target_gsd_m)
    if target_gsd_m <= 0:
        raise ConfigError("target_gsd_m must be positive")
    out_h = int(round(lst_hr.height * lst_hr.pixel_size / target_gsd_m))
    out_w = int(round(lst_hr.width * lst_hr.pixel_size / target_gsd_m))
    if out_h < 1 or out_w < 1:
        raise ConfigError("target_gsd_m is coarser than the image extent")
    if not lst_hr.all_valid():
        raise DataError("resampling a masked reference is not supported")
    out = linops.bicubic_resize(values, out_h, out_w)
    return Grid2D(out, target_gsd_m, units=lst_hr.units)


def scene_pair(scene) -> ScenePair:
    return scene.pair if isinstance(scene, EvalTriple) else scene


def slice_patches(scene, lr_patch=64, reject_masked=True) -> list:
    """Partition a scene into non-overlapping training pairs, row-major.

    lr_patch is the coarse-grid tile size; fine tiles are r times larger.
    The grid dims must tile evenly. With reject_masked, tiles touching any
    invalid pixel are dropped.
    """
    pair = scene_pair(scene)
    ndvi, lst_lr, r = pair.ndvi_hr, pair.lst_lr, pair.r
    lr_patch = int(lr_patch)
    if lr_patch < 1:
        raise ValueError("lr_patch must be positive")
    if lst_lr.height % lr_patch or lst_lr.width % lr_patch:
        raise ValueError(f"patch size {lr_patch} does not tile {lst_lr.shape}")
    hr_patch = lr_patch * r
    out = []
    for i in range(0, lst_lr.height, lr_patch):
        for j in range(0, lst_lr.width, lr_patch):
            t = lst_lr.crop(i, i + lr_patch, j, j + lr_patch)
            v = ndvi.crop(i * r, i * r + hr_patch, j * r, j * r + hr_patch)
            if reject_masked and not (v.all_valid() and t.all_valid()):
                continue
            out.append(ScenePair(t, v, r))
    return out


# ---------------------------------------------------------------------------
# scene directories

def write_scene(scene_dir, scene, cfg: SynthConfig | None = None) -> None:
    pair = scene_pair(scene)
    os.makedirs(scene_dir, exist_ok=True)
    save_raster(pair.ndvi_hr, os.path.join(scene_dir, "ndvi_hr.f32raw"))
    save_raster(pair.lst_lr, os.path.join(scene_dir, "lst_lr.f32raw"))
    members = ["ndvi_hr", "lst_lr"]
    if isinstance(scene, EvalTriple):
        save_raster(scene.ref_hr, os.path.join(scene_dir, "lst_hr.f32raw"))
        members.append("lst_hr")
    meta = {"members": members, "scale_factor": pair.r}
    if cfg is not None:
        meta["synth_config"] = cfg.to_dict()
    tmp = os.path.join(scene_dir, "scene.json.tmp")
    with open(tmp, "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, os.path.join(scene_dir, "scene.json"))


def read_scene(scene_dir, need_reference=False):
    """Load a scene directory; EvalTriple when the fine-scale thermal grid is
    present, bare ScenePair otherwise."""
    meta_path = os.path.join(scene_dir, "scene.json")
    if not os.path.isfile(meta_path):
        raise DataError(f"not a scene directory (no scene.json): {scene_dir}")
    ndvi = load_raster(os.path.join(scene_dir, "ndvi_hr.f32raw"))
    lst_lr = load_raster(os.path.join(scene_dir, "lst_lr.f32raw"))
    if ndvi.height % lst_lr.height or ndvi.width % lst_lr.width:
        raise DataError(f"fine dims not a multiple of coarse dims in {scene_dir}")
    pair = ScenePair(lst_lr, ndvi, ndvi.height // lst_lr.height)
    hr_path = os.path.join(scene_dir, "lst_hr.f32raw")
    if os.path.exists(hr_path):
        return EvalTriple(pair, load_raster(hr_path))
    if need_reference:
        raise DataError(f"scene has no fine-scale thermal grid: {scene_dir}")
    return pair


def read_scene_config(scene_dir) -> SynthConfig | None:
    with open(os.path.join(scene_dir, "scene.json")) as f:
        meta = json.load(f)
    d = meta.get("synth_config")
    return SynthConfig.from_dict(d) if d else None


def make_suite(out_dir, cfg: SynthConfig, count, start_seed=None) -> list:
    """Write `count` scenes under out_dir/scene_###; returns their paths."""
    if count < 1:
        raise ConfigError("count must be at least 1")
    base = cfg.seed if start_seed is None else int(start_seed)
    paths = []
    for i in range(count):
        c = replace(cfg, seed=base + i)
        d = os.path.join(out_dir, f"scene_{i:03d}")
        write_scene(d, synth_scene(c), c)
        paths.append(d)
    return paths
