"""Tour of the two frequency-domain building blocks.

1. The global filter: a learned complex-valued mask applied to the volume's
   spectrum.  With the mask at its identity initialization the block is a
   near-identity map; zeroing high frequencies turns it into a low-pass.

2. Parameter-free fusion: a decoder feature at half resolution contributes
   the low band of the output spectrum, the encoder skip contributes the
   ring above the decoder's Nyquist.  No weights are involved in the merge.

Run:  python demos/spectral_filter_and_fusion.py
"""

import numpy as np

from fseg.fft import rfft3d
from fseg.spectral import (
    FourierBlockParams,
    PadSpec,
    fourier_fuse,
    global_filter,
    spectral_upsample2x,
)
from fseg.tensor import Tensor

rng = np.random.default_rng(0)

# --- the global filter block ------------------------------------------------
C, N = 2, 8
pad = PadSpec("none")
params = FourierBlockParams.create(C, (N, N, N), pad, mlp_ratio=2,
                                   rng=rng, dtype=np.float64)
x = Tensor(rng.standard_normal((C, N, N, N)))

y = global_filter(x, params, pad)
print(f"global filter on [{C},{N},{N},{N}]: output shape {tuple(y.shape)}")
print(f"residual design: |y - x| mean at init = {np.abs(y.data - x.data).mean():.4f}")

# Zero every frequency mask entry beyond the DC corner -> aggressive low-pass.
params.w_freq.data[:] = 0.0
params.w_freq.data[:, 0, 0, 0] = 1.0
y_lp = global_filter(x, params, pad)
spec = np.abs(rfft3d(Tensor(y_lp.data - x.data)).data.data) ** 2
dc_share = spec[:, 0, 0, 0].sum() / spec.sum()
print(f"with a DC-only mask the deviation from the input concentrates at DC:")
print(f"  fraction of (y-x) energy in the DC bin: {dc_share:.3f}")
print()

# --- parameter-free fusion ---------------------------------------------------
M = 4
enc = Tensor(rng.standard_normal((C, 2 * M, 2 * M, 2 * M)))  # skip, full res
dec = Tensor(rng.standard_normal((C, M, M, M)))              # decoder, half res

fused = fourier_fuse(enc, dec)
up = spectral_upsample2x(dec)
print(f"fusion of enc {tuple(enc.shape)} with dec {tuple(dec.shape)} "
      f"-> {tuple(fused.shape)}")

# With a zero encoder the fusion is exactly the band-limited upsampling of dec.
zero_enc = Tensor(np.zeros_like(enc.data))
only_dec = fourier_fuse(zero_enc, dec)
print(f"enc=0  => fusion == spectral upsample of dec "
      f"(max diff {np.abs(only_dec.data - up.data).max():.2e})")

# With a zero decoder the result is the high-pass remainder of the encoder.
zero_dec = Tensor(np.zeros((C, M, M, M)))
only_enc = fourier_fuse(enc, zero_dec)
low = np.abs(rfft3d(only_enc).data.data)[:, :2, :2, :2].max()
print(f"dec=0  => encoder's low band suppressed (low-bin magnitude {low:.2e})")
print("the merge itself used no parameters at all")
