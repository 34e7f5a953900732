import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fseg import fft as F
from fseg import tensor as T
from fseg.errors import LayoutError, SymmetryViolationError
from fseg.tensor import Parameter, Tensor

from helpers import check_grad


def randc(shape, seed):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(np.complex128)


def randr(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


class TestFft1d:
    def test_impulse_flat_spectrum(self):
        out = F.fft1d([1.0, 0.0, 0.0, 0.0]).data
        assert np.allclose(out, np.ones(4))

    def test_constant_dc_only(self):
        c = 2.5 - 1.5j
        out = F.fft1d(np.full(4, c)).data
        assert np.allclose(out, [4 * c, 0, 0, 0], atol=1e-12)

    @pytest.mark.parametrize("n", [2, 3, 5, 7, 8, 12, 16, 20, 27])
    def test_matches_naive_dft(self, n):
        x = randc(n, n)
        out = F.fft1d(x).data
        k = np.arange(n)
        ref = np.exp(-2j * np.pi * np.outer(k, k) / n) @ x
        assert np.abs(out - ref).max() / np.abs(ref).max() < 1e-10

    @pytest.mark.parametrize("n", [2, 3, 4, 5, 8, 12, 15])
    def test_inverse_roundtrip(self, n):
        x = randc(n, 100 + n)
        back = F.fft1d(F.fft1d(x), inverse=True).data
        assert np.allclose(back, x, atol=1e-12)

    def test_inverse_normalization(self):
        # inverse of a flat spectrum of height N recovers the unit impulse
        out = F.fft1d(np.full(8, 8.0 + 0j), inverse=True).data
        ref = np.zeros(8)
        ref[0] = 8.0
        assert np.allclose(out, ref, atol=1e-12)

    def test_length_one(self):
        assert np.allclose(F.fft1d([3.0 + 1j]).data, [3.0 + 1j])


class TestFft3d:
    def test_roundtrip_random(self):
        x = randr((4, 8, 8, 8), 0).astype(np.float32)
        s = F.fft3d(Tensor(x))
        back = F.ifft3d(s).data.real
        assert np.abs(back - x).max() / np.abs(x).max() < 1e-5

    def test_separable_product(self):
        rng = np.random.default_rng(1)
        f, g, h = rng.standard_normal(4), rng.standard_normal(6), rng.standard_normal(8)
        x = f[:, None, None] * g[None, :, None] * h[None, None, :]
        s = F.fft3d(Tensor(x[None])).data.data[0]
        ref = (
            F.fft1d(f).data[:, None, None]
            * F.fft1d(g).data[None, :, None]
            * F.fft1d(h).data[None, None, :]
        )
        assert np.allclose(s, ref, atol=1e-10)

    def test_constant_volume_dc(self):
        v = 1.75
        s = F.fft3d(Tensor(np.full((1, 4, 4, 4), v))).data.data[0]
        assert np.isclose(s[0, 0, 0].real, v * 64)
        s[0, 0, 0] = 0
        assert np.abs(s).max() < 1e-10

    @pytest.mark.parametrize("n", [2, 3, 4, 5, 8])
    def test_matches_naive_oracle(self, n):
        x = randc((2, n, n, n), n + 10)
        ours = F.fft3d(Tensor(x)).data.data
        ref = F.naive_dft3(x).data.data
        assert np.abs(ours - ref).max() / np.abs(ref).max() < 1e-9

    def test_parseval_real64(self):
        x = randc((1, 6, 5, 4), 3)
        s = F.fft3d(Tensor(x)).data.data
        lhs = np.abs(x) ** 2
        rhs = np.abs(s) ** 2 / (6 * 5 * 4)
        assert abs(lhs.sum() - rhs.sum()) / lhs.sum() < 1e-10

    def test_shift_invariance_of_magnitude(self):
        x = randr((1, 8, 8, 8), 4)
        s0 = np.abs(F.fft3d(Tensor(x)).data.data)
        s1 = np.abs(F.fft3d(Tensor(np.roll(x, (3, 1, 5), axis=(1, 2, 3)))).data.data)
        assert np.abs(s0 - s1).max() < 1e-5 * s0.max()

    def test_gradient_through_fft_ifft(self):
        x = Parameter(randr((1, 4, 4, 4), 5))

        def loss():
            s = F.fft3d(x)
            y = F.ifft3d(s)
            return (T.real_part(y) ** 2).sum()

        check_grad(loss, [x], rtol=1e-5)


class TestNaiveOracle:
    def test_impulse_all_ones(self):
        x = np.zeros((1, 3, 3, 3))
        x[0, 0, 0, 0] = 1.0
        s = F.naive_dft3(x).data.data
        assert np.allclose(s, 1.0, atol=1e-12)

    def test_linearity(self):
        x, y = randc((1, 3, 4, 2), 6), randc((1, 3, 4, 2), 7)
        a, b = 1.3, -0.7 + 0.2j
        lhs = F.naive_dft3(a * x + b * y).data.data
        rhs = a * F.naive_dft3(x).data.data + b * F.naive_dft3(y).data.data
        assert np.abs(lhs - rhs).max() < 1e-10


class TestRfft3d:
    def test_cosine_single_stored_bin(self):
        n = 8
        x = np.cos(2 * np.pi * 2 * np.arange(n) / n)
        vol = np.broadcast_to(x, (1, 1, 1, n)).copy() * np.ones((1, 4, 4, 1))
        s = F.rfft3d(Tensor(vol))
        mags = np.abs(s.data.data[0])
        hot = np.argwhere(mags > 1e-6 * mags.max())
        assert hot.tolist() == [[0, 0, 2]]

    def test_expand_matches_full_fft(self):
        x = randr((2, 4, 6, 8), 8)
        full = F.fft3d(Tensor(x)).data.data
        half = F.expand_half(F.rfft3d(Tensor(x))).data.data
        assert np.abs(full - half).max() < 1e-6 * np.abs(full).max()

    @pytest.mark.parametrize("dims", [(4, 4, 4), (3, 5, 7), (2, 3, 4), (5, 4, 6)])
    def test_roundtrip_all_parities(self, dims):
        x = randr((2,) + dims, sum(dims))
        back = F.irfft3d(F.rfft3d(Tensor(x))).data
        assert np.abs(back - x).max() < 1e-10

    def test_output_is_real_dtype(self):
        out = F.irfft3d(F.rfft3d(Tensor(randr((1, 4, 4, 4), 9))))
        assert not out.is_complex

    def test_parseval_half(self):
        x = randr((1, 6, 6, 6), 10)
        full = F.expand_half(F.rfft3d(Tensor(x))).data.data
        lhs = (x**2).sum()
        rhs = (np.abs(full) ** 2).sum() / 6**3
        assert abs(lhs - rhs) / lhs < 1e-4

    def test_symmetry_violation_raises(self):
        s = F.rfft3d(Tensor(randr((1, 4, 4, 4), 11)))
        bad = s.data.data.copy()
        bad[0, 0, 0, 0] += 1j * np.abs(bad).max()
        broken = F.Spectrum3D(Tensor(bad), "natural", s.source_dims, half=True)
        with pytest.raises(SymmetryViolationError):
            F.irfft3d(broken)

    def test_hermitian_symmetry_of_real_transform(self):
        x = randr((1, 4, 4, 4), 12).astype(np.float32)
        s = F.fft3d(Tensor(x)).data.data[0]
        mirror = np.conj(s[(-np.arange(4)) % 4][:, (-np.arange(4)) % 4][:, :, (-np.arange(4)) % 4])
        assert np.abs(s - mirror).max() < 1e-5 * np.abs(s).max()

    def test_gradient_through_half_spectrum_path(self):
        x = Parameter(randr((1, 4, 4, 4), 13))
        w = Parameter(randc((1, 4, 4, 3), 14) * 0.5)

        def loss():
            s = F.rfft3d(x)
            prod = F.Spectrum3D(T.complex_mul(s.data, w), "natural", s.source_dims, half=True)
            return (F.irfft3d(prod, check=False) ** 2).sum()

        check_grad(loss, [x, w], rtol=1e-4, atol=1e-7)


class TestShift:
    def test_even_rotation(self):
        x = np.arange(4.0)
        vol = np.zeros((1, 4, 4, 4), dtype=np.complex128)
        vol[0, :, 0, 0] = x
        s = F.Spectrum3D(Tensor(vol), "natural", (4, 4, 4))
        shifted = F.fftshift3(s)
        assert np.allclose(shifted.data.data[0, :, 2, 2], [2, 3, 0, 1])

    def test_odd_rotation_and_inverse(self):
        vol = np.zeros((1, 5, 5, 5), dtype=np.complex128)
        vol[0, :, 0, 0] = np.arange(5.0)
        s = F.Spectrum3D(Tensor(vol), "natural", (5, 5, 5))
        shifted = F.fftshift3(s)
        assert np.allclose(shifted.data.data[0, :, 2, 2], [3, 4, 0, 1, 2])
        back = F.ifftshift3(shifted)
        assert np.allclose(back.data.data, vol)

    @pytest.mark.parametrize("n", [2, 3, 4, 5, 6, 7])
    def test_dc_lands_at_center(self, n):
        x = np.ones((1, n, n, n))
        s = F.fftshift3(F.fft3d(Tensor(x)))
        c = n // 2
        assert np.abs(s.data.data[0, c, c, c]) > 0.99 * n**3

    def test_double_shift_error(self):
        s = F.fft3d(Tensor(np.ones((1, 4, 4, 4))))
        shifted = F.fftshift3(s)
        with pytest.raises(LayoutError):
            F.fftshift3(shifted)
        with pytest.raises(LayoutError):
            F.ifftshift3(s)


class TestConvolutionTheorem:
    def test_circular_convolution_identity(self):
        rng = np.random.default_rng(20)
        x = rng.standard_normal((1, 8, 8, 8))
        k = np.zeros((1, 8, 8, 8))
        k[0, :3, :3, :3] = rng.standard_normal((3, 3, 3))
        spec = F.fft3d(Tensor(x)).data.data * F.fft3d(Tensor(k)).data.data
        via_fft = F.ifft3d(F.Spectrum3D(Tensor(spec), "natural", (8, 8, 8))).data.real

        circ = np.zeros((8, 8, 8))
        for a in range(3):
            for b in range(3):
                for c in range(3):
                    circ += k[0, a, b, c] * np.roll(x[0], (a, b, c), axis=(0, 1, 2))
        assert np.abs(via_fft[0] - circ).max() < 1e-4
