"""Exact discrete Fourier transforms: radix-2 for power-of-two lengths,
Bluestein's chirp-z for everything else, plus 3D / real-input (Hermitian
half-spectrum) wrappers that participate in the autodiff tape.

Conventions: the forward transform is un-normalized; the inverse carries the
full 1/(N1*N2*N3) factor. `Spectrum3D` tracks layout (natural vs shifted,
i.e. DC at index 0 vs at the center) and the spatial extents that produced it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .errors import LayoutError, DtypeMismatchError, ShapeMismatchError, SymmetryViolationError
from .tensor import Tensor

# ---------------------------------------------------------------------------
# Raw numpy engine (no taping). Twiddle/bit-reversal tables are immutable
# after first construction, so concurrent readers are safe.
# ---------------------------------------------------------------------------

_BITREV: dict[int, np.ndarray] = {}
_TWIDDLE: dict[tuple[int, str], np.ndarray] = {}
_CHIRP: dict[tuple[int, str], tuple[np.ndarray, np.ndarray]] = {}


def _bit_reverse(n: int) -> np.ndarray:
    tbl = _BITREV.get(n)
    if tbl is None:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        rev = np.zeros(n, dtype=np.intp)
        for i in range(bits):
            rev |= ((idx >> i) & 1) << (bits - 1 - i)
        tbl = _BITREV[n] = rev
    return tbl


def _twiddle(m: int, dtype: np.dtype) -> np.ndarray:
    key = (m, np.dtype(dtype).name)
    w = _TWIDDLE.get(key)
    if w is None:
        k = np.arange(m // 2)
        w = np.exp(-2j * np.pi * k / m).astype(dtype)
        _TWIDDLE[key] = w
    return w


def _fft_pow2_rows(rows: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time over the rows of a (M, N) array."""
    m_rows, n = rows.shape
    a = rows[:, _bit_reverse(n)]
    m = 2
    while m <= n:
        half = m // 2
        w = _twiddle(m, a.dtype)
        b = a.reshape(m_rows, n // m, m)
        u = b[..., :half]
        t = b[..., half:] * w
        a = np.concatenate((u + t, u - t), axis=2).reshape(m_rows, n)
        m *= 2
    return a


def _bluestein_tables(n: int, dtype: np.dtype):
    key = (n, np.dtype(dtype).name)
    tabs = _CHIRP.get(key)
    if tabs is None:
        length = 1 << (2 * n - 1).bit_length()
        k = np.arange(n)
        # exponent reduced mod 2n to keep the phase argument small
        chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n).astype(dtype)
        b = np.zeros(length, dtype=dtype)
        b[:n] = np.conj(chirp)
        if n > 1:
            b[length - n + 1 :] = np.conj(chirp[1:])[::-1]
        fb = _fft_pow2_rows(b[None])[0]
        tabs = _CHIRP[key] = (chirp, fb)
    return tabs


def _bluestein_rows(rows: np.ndarray) -> np.ndarray:
    m_rows, n = rows.shape
    chirp, fb = _bluestein_tables(n, rows.dtype)
    length = 1 << (2 * n - 1).bit_length()
    a = np.zeros((m_rows, length), dtype=rows.dtype)
    a[:, :n] = rows * chirp
    fa = _fft_pow2_rows(a)
    conv = np.conj(_fft_pow2_rows(np.conj(fa * fb))) / length
    return conv[:, :n] * chirp


def _fft_rows(rows: np.ndarray) -> np.ndarray:
    n = rows.shape[1]
    if n == 1:
        return rows.copy()
    if n & (n - 1) == 0:
        return _fft_pow2_rows(rows)
    return _bluestein_rows(rows)


def fft_raw(a: np.ndarray, axes=(-1,), inverse: bool = False) -> np.ndarray:
    """Un-normalized forward / 1-over-N inverse DFT along the given axes."""
    a = np.asarray(a)
    if not np.issubdtype(a.dtype, np.complexfloating):
        a = a.astype(np.complex128 if a.dtype == np.float64 else np.complex64)
    if inverse:
        ntot = int(np.prod([a.shape[ax] for ax in axes]))
        return np.conj(fft_raw(np.conj(a), axes, False)) / ntot
    for ax in axes:
        moved = np.moveaxis(a, ax, -1)
        shp = moved.shape
        rows = np.ascontiguousarray(moved).reshape(-1, shp[-1])
        a = np.moveaxis(_fft_rows(rows).reshape(shp), -1, ax)
    return a


def naive_dft3_raw(x: np.ndarray) -> np.ndarray:
    """Literal triple-sum 3D DFT; test oracle only (O(N^2) per axis)."""
    x = np.asarray(x, dtype=np.complex128)
    n1, n2, n3 = x.shape[-3:]
    e1 = np.exp(-2j * np.pi * np.outer(np.arange(n1), np.arange(n1)) / n1)
    e2 = np.exp(-2j * np.pi * np.outer(np.arange(n2), np.arange(n2)) / n2)
    e3 = np.exp(-2j * np.pi * np.outer(np.arange(n3), np.arange(n3)) / n3)
    out = np.zeros_like(x)
    for k1 in range(n1):
        for k2 in range(n2):
            for k3 in range(n3):
                phase = e1[k1][:, None, None] * e2[k2][None, :, None] * e3[k3][None, None, :]
                out[..., k1, k2, k3] = (x * phase).sum(axis=(-3, -2, -1))
    return out


# ---------------------------------------------------------------------------
# Autodiff wrappers
# ---------------------------------------------------------------------------


def _fft_op(t: Tensor, axes: tuple, inverse: bool) -> Tensor:
    """DFT as a linear tape op. Backward of the un-normalized forward is
    N * inverse on the cotangent; backward of the inverse is (1/N) * forward."""
    if not t.is_complex:
        t = T.to_complex(t)
    out_data = fft_raw(t.data, axes, inverse)
    out = Tensor(out_data)
    if T.grad_enabled() and t.requires_grad:
        out.requires_grad = True
        out._parents = (t,)
        out._op = "ifft" if inverse else "fft"
        ntot = int(np.prod([t.shape[ax] for ax in axes]))
        if inverse:
            out._grad_fn = lambda g: (fft_raw(g, axes, False) / ntot,)
        else:
            out._grad_fn = lambda g: (fft_raw(g, axes, True) * ntot,)
    return out


def fft1d(x, inverse: bool = False) -> Tensor:
    """1D DFT of a vector; all lengths supported (radix-2 or chirp-z)."""
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    return _fft_op(t if t.is_complex else T.to_complex(t), (-1,), inverse)


@dataclass
class Spectrum3D:
    """Complex 3D spectrum [C, K1, K2, K3] (or half-spectrum along the last axis)."""

    data: Tensor
    layout: str = "natural"  # "natural" | "shifted"
    source_dims: tuple = ()
    half: bool = False
    norm: str = "none-forward/1-over-N-inverse"

    @property
    def k_dims(self):
        return self.data.shape[-3:]


def fft3d(x, inverse: bool = False):
    """Separable 3D DFT over the trailing three axes, per channel.

    Forward maps a spatial tensor to a natural-layout Spectrum3D; inverse maps
    a Spectrum3D back to a (complex) spatial tensor with 1/(N1*N2*N3) applied.
    """
    if inverse:
        s: Spectrum3D = x
        if s.layout != "natural":
            raise LayoutError("ifft3d expects a natural-layout spectrum; ifftshift3 first")
        if s.half:
            raise LayoutError("ifft3d expects a full spectrum; use irfft3d for half-spectra")
        return _fft_op(s.data, (-3, -2, -1), True)
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    out = _fft_op(t if t.is_complex else T.to_complex(t), (-3, -2, -1), False)
    return Spectrum3D(out, "natural", tuple(t.shape[-3:]))


def ifft3d(s: Spectrum3D) -> Tensor:
    return fft3d(s, inverse=True)


def _mirror12(a: np.ndarray) -> np.ndarray:
    """Index map k -> (-k) mod N on the two axes preceding the last."""
    out = np.roll(np.flip(a, axis=-2), 1, axis=-2)
    out = np.roll(np.flip(out, axis=-3), 1, axis=-3)
    return out


def _self_conjugate_planes(n3: int) -> list:
    return [0, n3 // 2] if n3 % 2 == 0 else [0]


def _hermitian_expand_raw(h: np.ndarray, n3: int) -> np.ndarray:
    kh = n3 // 2 + 1
    if h.shape[-1] != kh:
        raise ShapeMismatchError(f"half-spectrum last axis {h.shape[-1]} != {kh} for N3={n3}")
    s = h.copy()
    # Self-conjugate planes are symmetrized so the implied full spectrum is
    # exactly Hermitian regardless of how the half-spectrum was produced.
    for k3 in _self_conjugate_planes(n3):
        p = s[..., k3]
        s[..., k3] = 0.5 * (p + np.conj(_mirror12(p[..., None])[..., 0]))
    full = np.zeros(h.shape[:-1] + (n3,), dtype=h.dtype)
    full[..., :kh] = s
    if n3 > kh:
        tail_src = s[..., 1 : n3 - kh + 1]
        full[..., kh:] = np.conj(_mirror12(tail_src))[..., ::-1]
    return full


def _hermitian_expand_adjoint(g: np.ndarray, n3: int) -> np.ndarray:
    kh = n3 // 2 + 1
    gs = g[..., :kh].copy()
    if n3 > kh:
        gs[..., 1 : n3 - kh + 1] += np.conj(_mirror12(g[..., kh:]))[..., ::-1]
    for k3 in _self_conjugate_planes(n3):
        p = gs[..., k3]
        gs[..., k3] = 0.5 * (p + np.conj(_mirror12(p[..., None])[..., 0]))
    return gs


def hermitian_expand(h: Tensor, n3: int) -> Tensor:
    """Fill the full last axis from a half-spectrum via conjugate symmetry."""
    out = Tensor(_hermitian_expand_raw(h.data, n3))
    if T.grad_enabled() and h.requires_grad:
        out.requires_grad = True
        out._parents = (h,)
        out._op = "hermitian_expand"
        out._grad_fn = lambda g: (_hermitian_expand_adjoint(g, n3),)
    return out


def rfft3d(x) -> Spectrum3D:
    """Forward 3D DFT of a real tensor, storing only the non-negative
    frequencies of the last axis (floor(N3/2)+1 bins)."""
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    if t.is_complex:
        raise DtypeMismatchError("rfft3d requires strictly real input")
    dims = tuple(t.shape[-3:])
    full = _fft_op(T.to_complex(t), (-3, -2, -1), False)
    kh = dims[2] // 2 + 1
    half = full[..., :kh]
    return Spectrum3D(half, "natural", dims, half=True)


def irfft3d(s: Spectrum3D, check: bool = True, tol: float = 1e-5) -> Tensor:
    """Inverse of rfft3d. The output is real by construction: the half-spectrum
    is expanded to an exactly Hermitian full spectrum before inversion.

    With check=True, self-conjugate bins carrying an imaginary part above
    `tol` (relative to the spectrum magnitude) raise SymmetryViolationError.
    """
    if not s.half:
        raise LayoutError("irfft3d expects a half-spectrum")
    if s.layout != "natural":
        raise LayoutError("irfft3d expects natural layout")
    n1, n2, n3 = s.source_dims
    if check:
        scale = max(float(np.abs(s.data.data).max()), 1.0)
        for k3 in _self_conjugate_planes(n3):
            for k1 in (0, n1 // 2) if n1 % 2 == 0 else (0,):
                for k2 in (0, n2 // 2) if n2 % 2 == 0 else (0,):
                    im = abs(float(s.data.data[..., k1, k2, k3].imag.max(initial=0.0)))
                    im = max(im, abs(float(s.data.data[..., k1, k2, k3].imag.min(initial=0.0))))
                    if im > tol * scale:
                        raise SymmetryViolationError(
                            f"self-conjugate bin ({k1},{k2},{k3}) has imaginary part {im:.3e}"
                        )
    full = hermitian_expand(s.data, n3)
    y = _fft_op(full, (-3, -2, -1), True)
    return T.real_part(y)


def expand_half(s: Spectrum3D) -> Spectrum3D:
    """Reconstruct the full spectrum a half-spectrum stands for."""
    if not s.half:
        return s
    return Spectrum3D(hermitian_expand(s.data, s.source_dims[2]), s.layout, s.source_dims)


def fftshift3(s: Spectrum3D) -> Spectrum3D:
    """Move DC to the center index floor(K/2) on each axis."""
    if s.layout != "natural":
        raise LayoutError("fftshift3: spectrum is already shifted")
    if s.half:
        raise LayoutError("fftshift3 is defined for full spectra only")
    k = s.k_dims
    data = T.roll(s.data, tuple(n // 2 for n in k), axis=(-3, -2, -1))
    return replace(s, data=data, layout="shifted")


def ifftshift3(s: Spectrum3D) -> Spectrum3D:
    if s.layout != "shifted":
        raise LayoutError("ifftshift3: spectrum is already natural")
    k = s.k_dims
    data = T.roll(s.data, tuple(-(n // 2) for n in k), axis=(-3, -2, -1))
    return replace(s, data=data, layout="natural")


def naive_dft3(x) -> Spectrum3D:
    """Eq.-literal triple-sum oracle, returned as a natural-layout spectrum."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    return Spectrum3D(Tensor(naive_dft3_raw(arr)), "natural", tuple(arr.shape[-3:]))
