"""Guided super-resolution of coarse thermal rasters.

A coarse land-surface-temperature grid is sharpened to the resolution of a
co-registered vegetation-index grid. The package provides the shared raster
model, the exact linear operators and their adjoints, the two-term sharpening
objective, a small reverse-mode autodiff engine, a U-Net trained directly
against that objective, a per-scene variational solver, classical regression
and kriging baselines, spectral evaluation metrics, a synthetic scene
generator, and a command-line front end.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericError
from .raster import (EvalTriple, Grid2D, NormStats, ScenePair,
                     compute_norm_stats, load_raster, save_raster)
from .objective import (PRESETS, SifConfig, LossBreakdown, sif_loss,
                        sif_preset)
from .datagen import SynthConfig, degrade_reference, slice_patches, synth_scene
from .varsolver import SolveConfig, solve_direct
from .unet import UNetConfig, build_unet, infer, train_sc, train_sif
from .baselines import atprk_sharpen, bicubic_baseline, tsharp_sharpen
from .metrics import evaluate_scene

__all__ = [
    "__version__",
    "ConfigError", "DataError", "NumericError",
    "Grid2D", "ScenePair", "EvalTriple", "NormStats",
    "compute_norm_stats", "load_raster", "save_raster",
    "SifConfig", "LossBreakdown", "PRESETS", "sif_preset", "sif_loss",
    "SynthConfig", "synth_scene", "slice_patches", "degrade_reference",
    "SolveConfig", "solve_direct",
    "UNetConfig", "build_unet", "train_sif", "train_sc", "infer",
    "bicubic_baseline", "tsharp_sharpen", "atprk_sharpen",
    "evaluate_scene",
]
