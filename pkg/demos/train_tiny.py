"""Overfit the smallest model on a single tiny phantom and watch the loss.

This is the fastest possible end-to-end check of the whole stack — phantom
generation, the spectral encoder/decoder, the combined Dice+CE loss, AdamW —
in well under a minute on a laptop CPU.

Run:  python demos/train_tiny.py
"""

import numpy as np

from fseg.network import build, preset_config
from fseg.phantom import AugmentConfig, PhantomSpec, clip_and_map, generate_phantom
from fseg.train import TrainConfig, train

vol, label = generate_phantom(PhantomSpec(size=16, n_tubes=1, noise_sigma=15.0, seed=3))
img = clip_and_map(vol.data, AugmentConfig())
sample = (img, label.astype(np.int64))

model = build(preset_config("fseg-s-reduced"), (16, 16, 16), seed=0)
cfg = TrainConfig(lr=1e-3, batch_size=1, max_steps=40, val_interval=10,
                  seed=0, deterministic=True)
history = train(model, [sample], [sample], cfg)

print("step   loss")
for i, loss in enumerate(history["loss"], start=1):
    if i % 5 == 0 or i == 1:
        bar = "#" * int(40 * loss / history["loss"][0])
        print(f"{i:4d}  {loss:.4f}  {bar}")
print(f"\nbest val Dice {history['best_val_dice']:.4f} at step {history['best_step']}")
