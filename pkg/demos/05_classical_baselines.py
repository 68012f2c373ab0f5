"""The two regression baselines, shown on an exactly linear scene first.

When fine temperature is an affine function of the vegetation index,
both TsHARP and ATPRK must reproduce it to numerical precision; that is
the contract their implementations are tested against. On a realistic
scene they differ: ATPRK kriges the regression residuals back in, and
its result re-aggregates exactly to the observed coarse grid.
"""

import numpy as np

from thermosharp import baselines, datagen, metrics
from thermosharp.linops import mtf_degrade
from thermosharp.raster import Grid2D, ScenePair, block_mean

rng = np.random.default_rng(1)

# exactly linear scene
ndvi = Grid2D(datagen.fractal_field(64, -2.0, rng), 100.0, units="1")
lst_hr = Grid2D(301.5 - 12.0 * ndvi.values, 100.0, units="K")
pair = ScenePair(mtf_degrade(lst_hr, 4), ndvi, 4)

model = baselines.fit_linear(pair.lst_lr, baselines.degrade_ndvi(pair.ndvi_hr, 4))
print(f"recovered regression: slope {model.slope:.6f} "
      f"(true -12), intercept {model.intercept:.4f} (true 301.5)")
for name, fn in (("tsharp", baselines.tsharp_sharpen),
                 ("atprk", baselines.atprk_sharpen)):
    err = np.abs(fn(pair).values - lst_hr.values).max()
    print(f"  {name}: max error {err:.2e} K")

# realistic scene: nonlinear texture leaves structured residuals
scene = datagen.synth_scene(datagen.SynthConfig(hr_size=64, seed=17))
pair, ref = scene.pair, scene.ref_hr

model = baselines.fit_linear(pair.lst_lr,
                             baselines.degrade_ndvi(pair.ndvi_hr, pair.r))
emp = baselines.empirical_variogram(model.residual_lr)
vario = baselines.fit_variogram(emp)
print(f"\nresidual variogram: nugget {vario.nugget:.4f}, "
      f"partial sill {vario.partial_sill:.4f}, range {vario.range_m:.0f} m"
      + (" (fallback)" if vario.from_fallback else ""))

bic = baselines.bicubic_baseline(pair)
print("\nscores on the synthetic scene:")
for name, sr in (("bicubic", bic),
                 ("tsharp", baselines.tsharp_sharpen(pair)),
                 ("atprk", baselines.atprk_sharpen(pair))):
    s = metrics.evaluate_scene(sr, ref, bic)
    print(f"  {name:8s} rmse {s['rmse_k']:.3f} K  ssim {s['ssim']:.3f}  "
          f"frr {s['frr']:.3f}  fro {s['fro']:.3f}")

# coherence: kriged residuals aggregate back to the coarse residuals
kriged = baselines.atp_kriging(model.residual_lr, vario, pair.r)
err = np.abs(block_mean(kriged, pair.r).values - model.residual_lr.values)
print(f"\nATPRK coherence: mean back-aggregation error {err.mean():.2e} K "
      f"({err.mean() / model.residual_lr.values.std():.2e} of residual std)")
