"""Generate a handful of synthetic vessel phantoms and save mid-slices.

Each phantom is a stack of smooth tubes (jittered spline centerlines swept by
a sphere) over a darker background, plus Gaussian noise.  The label volume
marks tube voxels with class 1.  Slices land in demos/out/ as PGM images.

Run:  python demos/phantom_gallery.py
"""

import os

import numpy as np

from fseg.cli import write_pgm
from fseg.phantom import PhantomSpec, generate_phantom

out_dir = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out_dir, exist_ok=True)

for seed in range(4):
    spec = PhantomSpec(size=64, n_tubes=3, noise_sigma=25.0, seed=seed)
    vol, label = generate_phantom(spec)
    mid = spec.size // 2
    write_pgm(os.path.join(out_dir, f"phantom_{seed}_img.pgm"), vol.data[mid])
    write_pgm(os.path.join(out_dir, f"phantom_{seed}_lab.pgm"),
              label[mid].astype(np.float32))
    fg = int((label == 1).sum())
    print(f"seed {seed}: {fg:6d} vessel voxels "
          f"({100.0 * fg / label.size:.2f}% of the volume)")

print(f"\nwrote mid-slice images to {out_dir}")
