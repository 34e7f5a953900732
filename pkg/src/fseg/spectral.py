"""Frequency-domain primitives: anti-aliasing spatial padding, centered
spectral crop/embed, the learnable global filter block, and the
parameter-free spectral fusion of encoder and decoder features.

Nyquist handling (even extents): centered crops and embeds use a floor
split, i.e. the cube covers frequencies -floor(M/2) .. ceil(M/2)-1 per axis.
Where an operation must preserve realness of a spatial signal (fusion,
spectral upsampling), the straddling -M/2 face is split (embed) or folded
(crop) onto its +M/2 partner, and in-place masks are widened to the closed,
symmetric cube. The plain ops keep the literal floor-split block so that
embed -> crop round trips are exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import GeometryError, LayoutError, ShapeMismatchError
from .fft import Spectrum3D, fft3d, fftshift3, fft_raw, ifft3d, ifftshift3, irfft3d, rfft3d
from .tensor import Parameter, Tensor

log = logging.getLogger(__name__)

IMAG_RESIDUE_TOL = 1e-5


@dataclass
class PadSpec:
    """Trailing zero-padding of the three spatial axes."""

    mode: str = "none"  # "none" | "double"

    def padded_dims(self, dims):
        if self.mode == "none":
            return tuple(dims)
        if self.mode == "double":
            return tuple(2 * n for n in dims)
        raise ValueError(f"unknown pad mode {self.mode!r}")


@dataclass
class FreqCropSpec:
    """Centered cube in a shifted spectrum; keep the inside or the outside."""

    keep: str  # "inner" | "outer"
    cutoff: tuple  # (M1, M2, M3)


def pad_spatial(x: Tensor, spec: PadSpec) -> Tensor:
    """Append zeros after the signal along each spatial axis."""
    dims = x.shape[-3:]
    target = spec.padded_dims(dims)
    if any(t < n for t, n in zip(target, dims)):
        raise GeometryError(f"pad_spatial cannot shrink {dims} to {target}")
    if target == tuple(dims):
        return x
    pw = ((0, 0),) * (x.ndim - 3) + tuple((0, t - n) for t, n in zip(target, dims))
    return T.pad_zeros(x, pw)


def _require_shifted_full(s: Spectrum3D, op: str):
    if s.layout != "shifted":
        raise LayoutError(f"{op} requires a shifted-layout spectrum")
    if s.half:
        raise LayoutError(f"{op} requires a full spectrum")


def _onehot(k: int, idx: int, dtype) -> np.ndarray:
    v = np.zeros(k, dtype=dtype)
    v[idx] = 1.0
    return v


def _axis_mask(vec: np.ndarray, axis: int) -> np.ndarray:
    shape = [1, 1, 1]
    shape[axis] = len(vec)
    return vec.reshape(shape)


def crop_freq(s: Spectrum3D, spec: FreqCropSpec, fold_nyquist: bool = False) -> Spectrum3D:
    """keep=inner extracts the centered cube as a smaller spectrum; keep=outer
    zeroes the centered cube in place.

    fold_nyquist (inner only) adds the +M/2 face of even-cut axes onto the
    extracted -M/2 face, so real-signal Hermitian symmetry survives the crop.
    """
    _require_shifted_full(s, "crop_freq")
    k = s.k_dims
    m = tuple(spec.cutoff)
    if any(mj > kj for mj, kj in zip(m, k)):
        raise GeometryError(f"crop cutoffs {m} exceed spectrum extents {k}")
    data = s.data
    if spec.keep == "outer":
        mask = np.ones(k, dtype=data.dtype)
        sl = tuple(slice(kj // 2 - mj // 2, kj // 2 - mj // 2 + mj) for kj, mj in zip(k, m))
        mask[sl] = 0.0
        return Spectrum3D(data * mask, "shifted", s.source_dims)
    if spec.keep != "inner":
        raise ValueError(f"unknown keep mode {spec.keep!r}")
    if fold_nyquist:
        for ax, (kj, mj) in enumerate(zip(k, m)):
            if mj % 2 == 0 and mj < kj:
                hi = kj // 2 + mj // 2
                onehot = _axis_mask(_onehot(kj, hi, data.dtype), ax)
                shift = [0, 0, 0]
                shift[ax] = -mj
                data = data + T.roll(data * onehot, tuple(shift), axis=(-3, -2, -1))
    sl = (Ellipsis,) + tuple(
        slice(kj // 2 - mj // 2, kj // 2 - mj // 2 + mj) for kj, mj in zip(k, m)
    )
    return Spectrum3D(data[sl], "shifted", m)


def embed_freq(s: Spectrum3D, target, split_nyquist: bool = False) -> Spectrum3D:
    """Place the spectrum at the center of a larger zeroed grid, scaled by
    prod(K/M) so the spatial amplitude survives the 1/prod(N) inverse.

    split_nyquist halves the -M/2 face of even source axes and mirrors it to
    +M/2, the real-signal-exact band-limited upsampling rule.
    """
    _require_shifted_full(s, "embed_freq")
    m = s.k_dims
    k = tuple(target)
    if any(kj < mj for mj, kj in zip(m, k)):
        raise GeometryError(f"embed target {k} smaller than source {m}")
    scale = float(np.prod([kj / mj for mj, kj in zip(m, k)]))
    pw = ((0, 0),) * (s.data.ndim - 3) + tuple(
        (kj // 2 - mj // 2, kj - mj - (kj // 2 - mj // 2)) for mj, kj in zip(m, k)
    )
    data = T.pad_zeros(s.data * np.asarray(scale, dtype=s.data.dtype), pw)
    if split_nyquist:
        for ax, (mj, kj) in enumerate(zip(m, k)):
            lo = kj // 2 - mj // 2
            hi = kj // 2 + mj // 2
            if mj % 2 == 0 and hi < kj:
                half = np.ones(kj, dtype=data.dtype)
                half[lo] = 0.5
                data = data * _axis_mask(half, ax)
                onehot = _axis_mask(_onehot(kj, lo, data.dtype), ax)
                shift = [0, 0, 0]
                shift[ax] = mj
                data = data + T.roll(data * onehot, tuple(shift), axis=(-3, -2, -1))
    return Spectrum3D(data, "shifted", k)


# ---------------------------------------------------------------------------
# Aliasing demonstration (circular vs linear convolution)
# ---------------------------------------------------------------------------


def _kernel_support(k: np.ndarray):
    nz = np.argwhere(np.abs(k) > 0)
    if nz.size == 0:
        return (1,) * k.ndim
    return tuple(int(nz[:, i].max()) + 1 for i in range(k.ndim))


def _direct_linear(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    supp = _kernel_support(k)
    out_shape = tuple(n + s - 1 for n, s in zip(x.shape, supp))
    out = np.zeros(out_shape, dtype=np.result_type(x, k))
    for idx in np.ndindex(*supp):
        sl = tuple(slice(i, i + n) for i, n in zip(idx, x.shape))
        out[sl] += k[idx] * x
    return out


def _direct_circular(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    supp = _kernel_support(k)
    out = np.zeros_like(x, dtype=np.result_type(x, k))
    axes = tuple(range(x.ndim))
    for idx in np.ndindex(*supp):
        out += k[idx] * np.roll(x, idx, axis=axes)
    return out


def circular_vs_linear_demo(x, k) -> dict:
    """The wrap-around demonstration: direct linear convolution, the unpadded
    spectral product (== circular convolution), and the zero-padded spectral
    product trimmed back to the linear-convolution extent."""
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    supp = _kernel_support(k)
    if any(s > n for s, n in zip(supp, x.shape)):
        raise GeometryError(f"kernel support {supp} exceeds volume extent {x.shape}")
    axes = tuple(range(-x.ndim, 0))

    kx = np.zeros_like(x)
    kx[tuple(slice(0, s) for s in supp)] = k[tuple(slice(0, s) for s in supp)]
    circ = fft_raw(
        fft_raw(x, axes) * fft_raw(kx, axes), axes, inverse=True
    ).real

    padded = tuple(2 * n for n in x.shape)
    xp = np.zeros(padded)
    xp[tuple(slice(0, n) for n in x.shape)] = x
    kp = np.zeros(padded)
    kp[tuple(slice(0, s) for s in supp)] = k[tuple(slice(0, s) for s in supp)]
    lin_extent = tuple(n + s - 1 for n, s in zip(x.shape, supp))
    padded_spectral = fft_raw(
        fft_raw(xp, axes) * fft_raw(kp, axes), axes, inverse=True
    ).real[tuple(slice(0, e) for e in lin_extent)]

    return {
        "linear": _direct_linear(x, k),
        "circular": circ,
        "padded_spectral": padded_spectral,
    }


# ---------------------------------------------------------------------------
# The learnable global filter (one encoder block's spectral path + MLP)
# ---------------------------------------------------------------------------


@dataclass
class FourierBlockParams:
    """Learnable state of one Fourier encoder block.

    w_freq lives on the padded half-spectrum, bias_freq on the cropped
    (original-extent) half-spectrum; both are complex."""

    w_freq: Parameter
    bias_freq: Parameter
    ln1_gamma: Parameter
    ln1_beta: Parameter
    ln2_gamma: Parameter
    ln2_beta: Parameter
    mlp_w1: Parameter
    mlp_b1: Parameter
    mlp_w2: Parameter
    mlp_b2: Parameter

    @staticmethod
    def create(channels: int, dims, pad: PadSpec, mlp_ratio: int = 4, rng=None, dtype=np.float32):
        """Near-identity initialization: w_freq ~ 1 + small noise, bias zero."""
        rng = rng or np.random.default_rng(0)
        cdtype = np.complex64 if dtype == np.float32 else np.complex128
        p1, p2, p3 = pad.padded_dims(dims)
        n1, n2, n3 = dims
        w = (
            rng.normal(1.0, 0.02, (channels, p1, p2, p3 // 2 + 1))
            + 1j * rng.normal(0.0, 0.02, (channels, p1, p2, p3 // 2 + 1))
        ).astype(cdtype)
        bias = np.zeros((channels, n1, n2, n3 // 2 + 1), dtype=cdtype)
        hid = mlp_ratio * channels
        bound1 = 1.0 / np.sqrt(channels)
        bound2 = 1.0 / np.sqrt(hid)
        return FourierBlockParams(
            w_freq=Parameter(w, init_spec="near-identity-complex"),
            bias_freq=Parameter(bias, init_spec="zeros"),
            ln1_gamma=Parameter(np.ones(channels, dtype=dtype), init_spec="ones"),
            ln1_beta=Parameter(np.zeros(channels, dtype=dtype), init_spec="zeros"),
            ln2_gamma=Parameter(np.ones(channels, dtype=dtype), init_spec="ones"),
            ln2_beta=Parameter(np.zeros(channels, dtype=dtype), init_spec="zeros"),
            mlp_w1=Parameter(rng.uniform(-bound1, bound1, (channels, hid)).astype(dtype), init_spec="uniform-fanin"),
            mlp_b1=Parameter(np.zeros(hid, dtype=dtype), init_spec="zeros"),
            mlp_w2=Parameter(rng.uniform(-bound2, bound2, (hid, channels)).astype(dtype), init_spec="uniform-fanin"),
            mlp_b2=Parameter(np.zeros(channels, dtype=dtype), init_spec="zeros"),
        )

    def named(self):
        return {
            "w_freq": self.w_freq,
            "bias_freq": self.bias_freq,
            "ln1_gamma": self.ln1_gamma,
            "ln1_beta": self.ln1_beta,
            "ln2_gamma": self.ln2_gamma,
            "ln2_beta": self.ln2_beta,
            "mlp_w1": self.mlp_w1,
            "mlp_b1": self.mlp_b1,
            "mlp_w2": self.mlp_w2,
            "mlp_b2": self.mlp_b2,
        }


def channel_mlp(x: Tensor, w1, b1, w2, b2) -> Tensor:
    """Two-layer pointwise MLP over the leading channel axis of [C,D,H,W]."""
    c = x.shape[0]
    flat = T.transpose(x.reshape(c, -1), (1, 0))
    h = T.gelu(T.linear(flat, w1, b1))
    out = T.linear(h, w2, b2)
    return T.transpose(out, (1, 0)).reshape(x.shape)


def global_filter(
    x: Tensor,
    params: FourierBlockParams,
    pad: PadSpec,
    bypass_ln: bool = False,
    bypass_mlp: bool = False,
    residual: bool = True,
) -> Tensor:
    """One Fourier block: pad -> LN -> real DFT -> Hadamard with w_freq ->
    un-pad -> + bias_freq -> inverse DFT -> LN -> MLP -> residual add.

    The "crop" after the Hadamard product removes the padded region (inverse
    transform at padded size, spatial truncation, re-transform at the
    original size); the bias is then added on the original-extent
    half-spectrum. Real output is guaranteed by the half-spectrum path.
    """
    dims = x.shape[-3:]
    c = x.shape[0]
    pdims = pad.padded_dims(dims)
    wexp = (c, pdims[0], pdims[1], pdims[2] // 2 + 1)
    if tuple(params.w_freq.shape) != wexp:
        raise ShapeMismatchError(
            f"global_filter stage w_freq: expected {wexp}, got {tuple(params.w_freq.shape)}"
        )
    bexp = (c, dims[0], dims[1], dims[2] // 2 + 1)
    if tuple(params.bias_freq.shape) != bexp:
        raise ShapeMismatchError(
            f"global_filter stage bias_freq: expected {bexp}, got {tuple(params.bias_freq.shape)}"
        )

    xp = pad_spatial(x, pad)
    h = xp if bypass_ln else T.layer_norm(xp, params.ln1_gamma, params.ln1_beta, axis=0)
    spec = rfft3d(h)
    filtered = T.complex_mul(spec.data, T.to_complex(params.w_freq) if not params.w_freq.is_complex else params.w_freq)
    if pdims != tuple(dims):
        wide = Spectrum3D(filtered, "natural", pdims, half=True)
        spatial_wide = irfft3d(wide, check=False)
        trimmed = spatial_wide[..., : dims[0], : dims[1], : dims[2]]
        cropped = rfft3d(trimmed).data
    else:
        cropped = filtered
    biased = cropped + params.bias_freq
    y = irfft3d(Spectrum3D(biased, "natural", tuple(dims), half=True), check=False)
    h2 = y if bypass_ln else T.layer_norm(y, params.ln2_gamma, params.ln2_beta, axis=0)
    z = h2 if bypass_mlp else channel_mlp(h2, params.mlp_w1, params.mlp_b1, params.mlp_w2, params.mlp_b2)
    return z + x if residual else z


# ---------------------------------------------------------------------------
# Parameter-free spectral fusion of encoder and decoder features
# ---------------------------------------------------------------------------


def _sym_cutoff(m: int, k: int) -> int:
    """Widen an even cutoff to the closed, mirror-symmetric cube extent."""
    return m + 1 if (m % 2 == 0 and m < k) else m


def _to_real(y: Tensor, what: str) -> Tensor:
    resid = float(np.abs(y.data.imag).max())
    scale = max(float(np.abs(y.data.real).max()), 1.0)
    if resid > IMAG_RESIDUE_TOL * scale:
        log.warning("%s: discarding imaginary residue %.3e (max-abs)", what, resid)
    return T.real_part(y)


def fourier_fuse(
    enc: Tensor,
    dec: Tensor,
    cutoff: FreqCropSpec | None = None,
    orientation: str = "skip_highband",
) -> Tensor:
    """Combine a high-resolution encoder feature [C,2M,2M,2M] with a
    low-resolution decoder feature [C,M,M,M] by summing disjoint spectral
    bands; introduces zero learnable parameters.

    skip_highband (default): decoder fills the low band (spectral 2x
    upsampling), encoder skip contributes the outer high-frequency ring
    on the output grid.
    decoder_grid: merge on the decoder's grid instead — encoder low-passed
    into the center, the decoder's own upper band kept — then embed.
    """
    if enc.shape[0] != dec.shape[0]:
        raise ShapeMismatchError(f"channel mismatch: enc {enc.shape[0]} vs dec {dec.shape[0]}")
    big = enc.shape[-3:]
    small = dec.shape[-3:]
    if tuple(big) != tuple(2 * n for n in small):
        raise GeometryError(f"encoder extents {big} must be 2x decoder extents {small}")
    m = tuple(small) if cutoff is None else tuple(cutoff.cutoff)

    se = fftshift3(fft3d(enc))
    sd = fftshift3(fft3d(dec))

    if orientation == "skip_highband":
        low = embed_freq(sd, big, split_nyquist=True)
        ring_cut = tuple(min(_sym_cutoff(mj, kj), kj) for mj, kj in zip(m, big))
        high = crop_freq(se, FreqCropSpec("outer", ring_cut))
        total = low.data + high.data
    elif orientation == "decoder_grid":
        enc_low = crop_freq(se, FreqCropSpec("inner", m), fold_nyquist=True)
        half_cut = tuple(min(_sym_cutoff(mj // 2, sj), sj) for mj, sj in zip(m, small))
        dec_high = crop_freq(sd, FreqCropSpec("outer", half_cut))
        merged = Spectrum3D(enc_low.data + dec_high.data, "shifted", small)
        total = embed_freq(merged, big, split_nyquist=True).data
    else:
        raise ValueError(f"unknown fusion orientation {orientation!r}")

    y = ifft3d(ifftshift3(Spectrum3D(total, "shifted", big)))
    return _to_real(y, "fourier_fuse")


def spectral_upsample2x(x: Tensor) -> Tensor:
    """Band-limited 2x upsampling via zero-padding in the frequency domain."""
    dims = x.shape[-3:]
    s = fftshift3(fft3d(x))
    up = embed_freq(s, tuple(2 * n for n in dims), split_nyquist=True)
    return _to_real(ifft3d(ifftshift3(up)), "spectral_upsample2x")
