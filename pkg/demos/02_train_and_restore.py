"""Train the desk-scale network briefly and restore the test images.

A short demonstration run (a couple of minutes on CPU): 24 images,
15 epochs.  For real experiments raise the image count and epochs, or
drive the same flow through the CLI:

    hairbench simulate --clean CLEAN_DIR --out DS --seed 7
    hairbench train --manifest DS/manifest.jsonl --out CKPT
    hairbench infer --checkpoint CKPT --input DS/corrupted --output RESTORED
"""

from pathlib import Path

import numpy as np
from scipy import ndimage

from hairbench import hairsim, image_io, pipeline

out = Path("demo_output/training")
out.mkdir(parents=True, exist_ok=True)
rng = np.random.default_rng(1)

clean_dir = out / "clean"
clean_dir.mkdir(exist_ok=True)
for i in range(24):
    base = rng.uniform(0.45, 0.75, 3)
    tex = ndimage.gaussian_filter(rng.normal(0, 1, (64, 64, 3)), (5, 5, 0))
    img = np.clip(base + tex / np.abs(tex).max() * 0.12, 0, 1)
    image_io.save_image(clean_dir / f"img{i:02d}.png", img)

manifest = hairsim.build_dataset(clean_dir, hairsim.DatasetRecipe(),
                                 out / "ds", split=0.7, seed=5)
print(f"dataset at {manifest.parent}")

config = pipeline.TrainConfig(
    manifest=str(manifest),
    checkpoint_dir=str(out / "ckpt"),
    preset="desk",          # 64x64 inputs, filter counts (32, 64)
    lr=1e-4,
    batch_size=4,
    max_epochs=15,
    patience=5,
    seed=0,
)
result = pipeline.train(config)
print(f"training stopped ({result.stopped_reason}); "
      f"best epoch {result.best_epoch}, val loss {result.best_val_loss:.4f}")
print("per-epoch curve (also in ckpt/curve.csv and ckpt/curve.svg):")
for row in result.curve:
    print(f"  epoch {row['epoch']:3d}  train {row['train_loss']:.4f}  "
          f"val {row['val_loss']:.4f}  val-PSNR {row['val_psnr']:.2f} dB")

written, skipped = pipeline.infer(out / "ckpt", manifest.parent / "corrupted",
                                  out / "restored")
print(f"restored {len(written)} images into {out / 'restored'}")
