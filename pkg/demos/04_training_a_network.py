"""Train a small network on the self-supervised objective, then reuse it.

The network never sees a fine-scale thermal target. It amortizes the
per-scene minimization of demo 03: one forward pass replaces hundreds of
gradient iterations. Deliberately tiny here so the demo runs in about a
minute; the benchmark configuration in the README uses the full widths.
"""

import tempfile
import time
from pathlib import Path

from thermosharp import datagen, metrics, objective, unet

patches = []
for seed in (40, 41):
    scene = datagen.synth_scene(datagen.SynthConfig(hr_size=64, seed=seed))
    patches.extend(datagen.slice_patches(scene, lr_patch=8))
print(f"training set: {len(patches)} patches")

sif_cfg = objective.sif_preset("sif1", scale_factor=patches[0].r)
net_cfg = unet.UNetConfig(base_channels=(4, 8, 8, 8), seed=0)

t0 = time.monotonic()
params, history, stats = unet.train_sif(
    patches, sif_cfg, net_cfg, epochs=8, batch_size=4, lr=2e-3, seed=0)
print(f"trained {params.param_count()} parameters "
      f"in {time.monotonic() - t0:.0f} s")
for i, h in enumerate(history):
    print(f"  epoch {i + 1}: total {h.total:.4f}  "
          f"rec {h.rec_term:.4f}  texture {h.texture_term:.4f}")

work = Path(tempfile.mkdtemp(prefix="thermosharp_demo_"))
unet.save_unet(work / "model", params, stats)
params2, stats2, meta = unet.load_unet(work / "model")
print(f"\ncheckpoint round trip via {work / 'model'} "
      f"(meta keys: {sorted(meta)})")

held_out = datagen.synth_scene(datagen.SynthConfig(hr_size=64, seed=90))
sr = unet.infer(params2, held_out.pair, stats2)
print(f"held-out scene: inferred {sr.shape} grid in {sr.units}")
print(f"  rmse vs reference "
      f"{metrics.rmse(sr, held_out.ref_hr):.3f} K")
print(f"  objective value "
      f"{unet.sif_loss_of(params2, held_out.pair, sif_cfg, stats2).total:.4f}")
