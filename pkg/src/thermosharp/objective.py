"""The self-supervised sharpening objective.

A candidate fine-scale thermal field is scored by two Huber terms computed in
standardized units: a reconstruction term comparing the coarsened candidate
against the observed coarse grid, and a texture term comparing the candidate's
directional detail against the vegetation index detail scaled by a coupling
factor gamma. The total is the convex combination

    total = alpha * texture + (1 - alpha) * reconstruction.

Texture detail is extracted either by the four directional derivative kernels
or by a high-pass filter (identity minus the same Gaussian blur used in the
coarsening operator). Texture channels are averaged, not summed, so alpha
keeps the same meaning for both texture operators.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import linops
from .raster import Grid2D, NormStats, ScenePair, as_values_mask

TEXTURE_SOBEL = "sobel"
TEXTURE_HIGHPASS = "highpass"
_TEXTURE_OPS = (TEXTURE_SOBEL, TEXTURE_HIGHPASS)

PRESETS = {
    "sif1": {"alpha": 0.99, "gamma": -0.5, "texture_op": TEXTURE_SOBEL},
    "sif2": {"alpha": 0.10, "gamma": -0.25, "texture_op": TEXTURE_HIGHPASS},
}


@dataclass(frozen=True)
class SifConfig:
    """Weights and operator choices of the sharpening objective."""

    alpha: float
    gamma: float
    texture_op: str
    scale_factor: int
    huber_delta: float = 1.0
    mtf_sigma_px: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not np.isfinite(self.gamma):
            raise ValueError("gamma must be finite")
        if self.texture_op not in _TEXTURE_OPS:
            raise ValueError(f"texture_op must be one of {_TEXTURE_OPS}")
        if int(self.scale_factor) < 2:
            raise ValueError("scale_factor must be >= 2")
        object.__setattr__(self, "scale_factor", int(self.scale_factor))
        if not self.huber_delta > 0:
            raise ValueError("huber_delta must be positive")
        if self.mtf_sigma_px is None:
            object.__setattr__(self, "mtf_sigma_px",
                               linops.default_mtf_sigma(self.scale_factor))
        elif not self.mtf_sigma_px > 0:
            raise ValueError("mtf_sigma_px must be positive")

    def mtf_kernel(self):
        return linops.gaussian_kernel(self.mtf_sigma_px)

    def to_json(self):
        return json.dumps({
            "alpha": self.alpha, "gamma": self.gamma,
            "texture_op": self.texture_op, "scale_factor": self.scale_factor,
            "huber_delta": self.huber_delta, "mtf_sigma_px": self.mtf_sigma_px,
        })

    @classmethod
    def from_json(cls, s):
        d = json.loads(s)
        return cls(alpha=float(d["alpha"]), gamma=float(d["gamma"]),
                   texture_op=str(d["texture_op"]),
                   scale_factor=int(d["scale_factor"]),
                   huber_delta=float(d.get("huber_delta", 1.0)),
                   mtf_sigma_px=d.get("mtf_sigma_px"))


def sif_preset(name, scale_factor=4, **overrides) -> SifConfig:
    """Named configurations 'sif1' (derivative texture) and 'sif2' (high-pass)."""
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(SifConfig(scale_factor=scale_factor, **base), **overrides) \
        if overrides else SifConfig(scale_factor=scale_factor, **base)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    rec_term: float
    texture_term: float


def huber_value(x, delta):
    ax = np.abs(x)
    return np.where(ax <= delta, 0.5 * x * x, delta * (ax - 0.5 * delta))


def huber_deriv(x, delta):
    return np.clip(x, -delta, delta)


def huber_mean(a, b, delta=1.0):
    """Mean Huber penalty of a - b over jointly valid pixels."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    av, am = as_values_mask(a)
    bv, bm = as_values_mask(b)
    if av.shape != bv.shape:
        raise ValueError("shape mismatch")
    m = am & bm
    n = int(m.sum())
    if n == 0:
        raise ValueError("no jointly valid pixels")
    d = av[m] - bv[m]
    return float(huber_value(d, delta).mean())


def texture_channels(values, cfg: SifConfig):
    """Detail channels of a field under the configured texture operator."""
    if cfg.texture_op == TEXTURE_SOBEL:
        return linops.sobel_directional(values)
    return linops.highpass(values, cfg.mtf_kernel())[None, :, :]


def reconstruction_loss(candidate, lst_lr, cfg: SifConfig) -> float:
    """Huber mean between the observed coarse grid and the coarsened candidate."""
    cv, _ = as_values_mask(candidate)
    tv, tm = as_values_mask(lst_lr)
    degraded = linops.mtf_degrade(cv, cfg.scale_factor, cfg.mtf_sigma_px)
    if degraded.shape != tv.shape:
        raise ValueError("coarsened candidate does not match the coarse grid")
    return huber_mean(Grid2D(tv, 1.0, tm), degraded, cfg.huber_delta)


def texture_loss(candidate, ndvi_hr, cfg: SifConfig) -> float:
    """Channel-averaged Huber mean between gamma-scaled index detail and
    candidate detail. Inputs are expected in standardized units."""
    cv, _ = as_values_mask(candidate)
    vv, _ = as_values_mask(ndvi_hr)
    if cv.shape != vv.shape:
        raise ValueError("candidate and index grids must share dims")
    target = cfg.gamma * texture_channels(vv, cfg)
    got = texture_channels(cv, cfg)
    per_channel = [huber_mean(t, g, cfg.huber_delta) for t, g in zip(target, got)]
    return float(np.mean(per_channel))


def sif_loss(candidate, pair: ScenePair, cfg: SifConfig) -> LossBreakdown:
    """Total objective on a standardized candidate/pair."""
    if cfg.scale_factor != pair.r:
        raise ValueError("config scale_factor must match the pair")
    rec = reconstruction_loss(candidate, pair.lst_lr, cfg)
    tex = texture_loss(candidate, pair.ndvi_hr, cfg)
    return LossBreakdown(cfg.alpha * tex + (1.0 - cfg.alpha) * rec, rec, tex)


def standardize(grid: Grid2D, mean, std) -> Grid2D:
    if not std > 0:
        raise ValueError("std must be strictly positive")
    values = np.where(grid.mask, (grid.values - mean) / std, 0.0)
    return Grid2D(values, grid.pixel_size, grid.mask, grid.units)


def destandardize(grid: Grid2D, mean, std) -> Grid2D:
    if not std > 0:
        raise ValueError("std must be strictly positive")
    values = np.where(grid.mask, grid.values * std + mean, 0.0)
    return Grid2D(values, grid.pixel_size, grid.mask, grid.units)


def standardize_pair(pair: ScenePair, stats: NormStats) -> ScenePair:
    return ScenePair(standardize(pair.lst_lr, stats.lst_mean, stats.lst_std),
                     standardize(pair.ndvi_hr, stats.ndvi_mean, stats.ndvi_std),
                     pair.r)


def stats_from_pair(pair: ScenePair) -> NormStats:
    """Per-scene fallback stats when no dataset-level stats are available."""
    def _stats(g):
        v = g.valid_values()
        if v.size == 0:
            raise ValueError("no valid pixels")
        std = float(v.std())
        return float(v.mean()), (std if std > 1e-12 else 1.0)

    lm, ls = _stats(pair.lst_lr)
    nm, ns = _stats(pair.ndvi_hr)
    return NormStats(lm, ls, nm, ns)
