"""Spectral ops: padding/aliasing, crop/embed, the global filter, fusion."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fseg import tensor as T
from fseg.errors import GeometryError, ShapeMismatchError
from fseg.fft import Spectrum3D, fft3d, fftshift3, rfft3d
from fseg.spectral import (
    FourierBlockParams,
    FreqCropSpec,
    PadSpec,
    channel_mlp,
    circular_vs_linear_demo,
    crop_freq,
    embed_freq,
    fourier_fuse,
    global_filter,
    pad_spatial,
    spectral_upsample2x,
)
from fseg.tensor import Tensor

from helpers import check_grad


def rand(*shape, seed=0, dtype=np.float64):
    return np.random.default_rng(seed).standard_normal(shape).astype(dtype)


# ---------------------------------------------------------------------------
# pad_spatial
# ---------------------------------------------------------------------------


class TestPadSpatial:
    def test_double_mode_geometry(self):
        x = Tensor(rand(2, 3, 4, 5))
        y = pad_spatial(x, PadSpec("double"))
        assert y.shape == (2, 6, 8, 10)
        assert np.array_equal(y.data[:, :3, :4, :5], x.data)
        buf = y.data.copy()
        buf[:, :3, :4, :5] = 0
        assert np.all(buf == 0)

    def test_none_mode_is_identity(self):
        x = Tensor(rand(1, 4, 4, 4))
        assert pad_spatial(x, PadSpec("none")) is x

    def test_shrink_rejected(self):
        class Shrink(PadSpec):
            def padded_dims(self, dims):
                return tuple(n - 1 for n in dims)

        with pytest.raises(GeometryError):
            pad_spatial(Tensor(rand(1, 4, 4, 4)), Shrink())

    def test_gradient_flows_through_pad(self):
        x = Tensor(rand(1, 2, 2, 2), requires_grad=True)
        check_grad(lambda: (pad_spatial(x, PadSpec("double")) ** 2).sum(), [x])


# ---------------------------------------------------------------------------
# circular vs linear convolution demo
# ---------------------------------------------------------------------------


class TestAliasingDemo:
    def test_1d_reference_values(self):
        out = circular_vs_linear_demo([1.0, 2.0, 3.0], [1.0, 1.0, 0.0])
        assert np.allclose(out["circular"], [4.0, 3.0, 5.0], atol=1e-10)
        assert np.allclose(out["linear"], [1.0, 3.0, 5.0, 3.0], atol=1e-12)
        assert np.allclose(out["padded_spectral"], [1.0, 3.0, 5.0, 3.0], atol=1e-6)

    def test_3d_padded_product_equals_linear(self):
        x = rand(6, 6, 6, seed=1)
        k = rand(3, 3, 3, seed=2)
        out = circular_vs_linear_demo(x, k)
        assert out["linear"].shape == (8, 8, 8)
        assert np.allclose(out["padded_spectral"], out["linear"], atol=1e-10)

    def test_3d_circular_wraps_but_matches_direct_sum(self):
        x = rand(5, 5, 5, seed=3)
        k = rand(2, 2, 2, seed=4)
        out = circular_vs_linear_demo(x, k)
        direct = np.zeros_like(x)
        for idx in np.ndindex(2, 2, 2):
            direct += k[idx] * np.roll(x, idx, axis=(0, 1, 2))
        assert np.allclose(out["circular"], direct, atol=1e-10)
        # the wrap-around region genuinely differs from linear convolution
        assert not np.allclose(out["circular"], out["linear"][:5, :5, :5], atol=1e-3)

    def test_interior_agrees_without_padding(self):
        x = rand(7, 7, 7, seed=5)
        k = rand(3, 3, 3, seed=6)
        out = circular_vs_linear_demo(x, k)
        # away from the wrap region the circular result is already linear
        assert np.allclose(out["circular"][2:, 2:, 2:], out["linear"][2:7, 2:7, 2:7], atol=1e-10)

    def test_oversized_kernel_rejected(self):
        with pytest.raises(GeometryError):
            circular_vs_linear_demo(rand(2, 2, 2), rand(3, 3, 3, seed=1))


# ---------------------------------------------------------------------------
# crop_freq / embed_freq
# ---------------------------------------------------------------------------


def shifted_spectrum(vol):
    return fftshift3(fft3d(Tensor(vol)))


class TestCropEmbed:
    def test_constant_volume_keeps_only_dc(self):
        s = shifted_spectrum(np.full((4, 4, 4), 2.5))
        inner = crop_freq(s, FreqCropSpec("inner", (2, 2, 2)))
        assert abs(inner.data.data[1, 1, 1] - 2.5 * 64) < 1e-9
        outer = crop_freq(s, FreqCropSpec("outer", (2, 2, 2)))
        assert np.abs(outer.data.data).max() < 1e-9

    def test_inner_extracts_centered_block(self):
        s = shifted_spectrum(rand(6, 6, 6, seed=7))
        inner = crop_freq(s, FreqCropSpec("inner", (4, 3, 2)))
        assert inner.data.shape == (4, 3, 2)
        assert inner.source_dims == (4, 3, 2)
        ref = s.data.data[1:5, 2:5, 2:4]
        assert np.array_equal(inner.data.data, ref)

    def test_partition_disjoint_and_exhaustive(self):
        s = shifted_spectrum(rand(8, 8, 8, seed=8))
        cut = (4, 4, 4)
        inner = crop_freq(s, FreqCropSpec("inner", cut))
        outer = crop_freq(s, FreqCropSpec("outer", cut))
        rebuilt = outer.data.data.copy()
        sl = tuple(slice(8 // 2 - c // 2, 8 // 2 - c // 2 + c) for c in cut)
        assert np.all(rebuilt[sl] == 0)
        rebuilt[sl] = inner.data.data
        assert np.array_equal(rebuilt, s.data.data)

    @settings(deadline=None, max_examples=25)
    @given(
        k=st.tuples(*[st.integers(2, 7)] * 3),
        frac=st.tuples(*[st.integers(1, 7)] * 3),
    )
    def test_partition_property(self, k, frac):
        cut = tuple(min(f, kj) for f, kj in zip(frac, k))
        vol = np.random.default_rng(hash((k, cut)) % 2**32).standard_normal(k)
        s = shifted_spectrum(vol)
        inner = crop_freq(s, FreqCropSpec("inner", cut))
        outer = crop_freq(s, FreqCropSpec("outer", cut))
        rebuilt = outer.data.data.copy()
        sl = tuple(slice(kj // 2 - c // 2, kj // 2 - c // 2 + c) for kj, c in zip(k, cut))
        assert np.all(rebuilt[sl] == 0)
        rebuilt[sl] = inner.data.data
        assert np.array_equal(rebuilt, s.data.data)

    def test_cutoff_exceeding_extent_rejected(self):
        s = shifted_spectrum(rand(4, 4, 4, seed=9))
        with pytest.raises(GeometryError):
            crop_freq(s, FreqCropSpec("inner", (5, 4, 4)))

    def test_embed_then_crop_round_trip(self):
        s = shifted_spectrum(rand(4, 5, 6, seed=10))
        target = (8, 9, 11)
        up = embed_freq(s, target)
        assert up.source_dims == target
        back = crop_freq(up, FreqCropSpec("inner", (4, 5, 6)))
        scale = np.prod([t / m for m, t in zip((4, 5, 6), target)])
        assert np.allclose(back.data.data / scale, s.data.data, rtol=1e-6, atol=1e-12)

    def test_embed_smaller_target_rejected(self):
        s = shifted_spectrum(rand(4, 4, 4, seed=11))
        with pytest.raises(GeometryError):
            embed_freq(s, (3, 4, 4))

    def test_upsample_constant_stays_constant(self):
        x = Tensor(np.full((1, 4, 4, 4), 3.25))
        y = spectral_upsample2x(x)
        assert y.shape == (1, 8, 8, 8)
        assert np.abs(y.data - 3.25).max() < 1e-5

    def test_upsample_single_tone_cosine(self):
        n = np.arange(4)
        x = np.cos(2 * np.pi * n / 4)[:, None, None] * np.ones((4, 4, 4))
        y = spectral_upsample2x(Tensor(x[None])).data[0]
        m = np.arange(8)
        expected = np.cos(2 * np.pi * m / 8)[:, None, None] * np.ones((8, 8, 8))
        assert np.abs(y - expected).max() < 1e-5

    def test_upsample_of_real_input_is_real_and_interpolates(self):
        x = rand(1, 4, 4, 4, seed=12)
        y = spectral_upsample2x(Tensor(x))
        assert not y.is_complex
        # band-limited interpolation passes through the original samples only
        # when the signal has no Nyquist content; check energy is conserved
        # up to the halved straddling faces instead.
        assert y.data.shape == (1, 8, 8, 8)

    def test_upsample_nyquist_free_signal_interpolates_samples(self):
        # build a signal whose spectrum has no +/-N/2 faces: low-pass first
        x = rand(1, 6, 6, 6, seed=13)
        s = fftshift3(fft3d(Tensor(x)))
        lp = crop_freq(s, FreqCropSpec("inner", (5, 5, 5)))
        small = embed_freq(lp, (6, 6, 6))
        from fseg.fft import ifft3d, ifftshift3

        xb = T.real_part(ifft3d(ifftshift3(small))) * (1.0 / np.prod([6 / 5] * 3))
        y = spectral_upsample2x(xb)
        assert np.abs(y.data[0, ::2, ::2, ::2] - xb.data[0]).max() < 1e-8


# ---------------------------------------------------------------------------
# global_filter
# ---------------------------------------------------------------------------


def identity_params(c, dims, pad, dtype=np.float64):
    p = FourierBlockParams.create(c, dims, pad, rng=np.random.default_rng(0), dtype=dtype)
    p.w_freq.data = np.ones_like(p.w_freq.data)
    return p


class TestGlobalFilter:
    def test_unit_filter_is_identity(self):
        x = Tensor(rand(2, 4, 4, 4, seed=14))
        p = identity_params(2, (4, 4, 4), PadSpec("none"))
        y = global_filter(x, p, PadSpec("none"), bypass_ln=True, bypass_mlp=True, residual=False)
        assert np.abs(y.data - x.data).max() < 1e-6

    def test_unit_filter_with_residual_doubles(self):
        x = Tensor(rand(1, 4, 4, 4, seed=15))
        p = identity_params(1, (4, 4, 4), PadSpec("none"))
        y = global_filter(x, p, PadSpec("none"), bypass_ln=True, bypass_mlp=True, residual=True)
        assert np.abs(y.data - 2 * x.data).max() < 1e-6

    def test_unit_filter_identity_with_padding(self):
        x = Tensor(rand(2, 4, 4, 4, seed=16))
        p = identity_params(2, (4, 4, 4), PadSpec("double"))
        y = global_filter(x, p, PadSpec("double"), bypass_ln=True, bypass_mlp=True, residual=False)
        assert np.abs(y.data - x.data).max() < 1e-6

    def test_padded_filter_matches_linear_convolution(self):
        """With the padded-domain spectrum of a small kernel as the filter,
        the block performs linear (non-wrapping) convolution of the input."""
        x = rand(1, 8, 8, 8, seed=17)
        k = rand(3, 3, 3, seed=18)
        k_padded = np.zeros((1, 16, 16, 16))
        k_padded[0, :3, :3, :3] = k
        p = identity_params(1, (8, 8, 8), PadSpec("double"))
        p.w_freq.data = rfft3d(Tensor(k_padded)).data.data
        y = global_filter(
            Tensor(x), p, PadSpec("double"), bypass_ln=True, bypass_mlp=True, residual=False
        ).data[0]
        ref = np.zeros((8, 8, 8))
        for idx in np.ndindex(3, 3, 3):
            shifted = np.zeros((8, 8, 8))
            src = x[0, : 8 - idx[0], : 8 - idx[1], : 8 - idx[2]]
            shifted[idx[0]:, idx[1]:, idx[2]:] = src
            ref += k[idx] * shifted
        # stated tolerance 1e-3; float64 lands near machine precision
        assert np.abs(y - ref).max() < 1e-3

    def test_unpadded_filter_wraps(self):
        """The same kernel without padding produces circular convolution:
        the border differs from linear convolution, the interior matches."""
        x = rand(1, 8, 8, 8, seed=19)
        k = rand(3, 3, 3, seed=20)
        k_grid = np.zeros((1, 8, 8, 8))
        k_grid[0, :3, :3, :3] = k
        p = identity_params(1, (8, 8, 8), PadSpec("none"))
        p.w_freq.data = rfft3d(Tensor(k_grid)).data.data
        y = global_filter(
            Tensor(x), p, PadSpec("none"), bypass_ln=True, bypass_mlp=True, residual=False
        ).data[0]
        circ = np.zeros((8, 8, 8))
        for idx in np.ndindex(3, 3, 3):
            circ += k[idx] * np.roll(x[0], idx, axis=(0, 1, 2))
        assert np.abs(y - circ).max() < 1e-9

    def test_output_is_real(self):
        x = Tensor(rand(2, 4, 4, 4, seed=21).astype(np.float64))
        p = FourierBlockParams.create(2, (4, 4, 4), PadSpec("double"), rng=np.random.default_rng(1), dtype=np.float64)
        y = global_filter(x, p, PadSpec("double"))
        assert not y.is_complex

    def test_wrong_filter_shape_names_stage(self):
        x = Tensor(rand(2, 4, 4, 4, seed=22))
        p = identity_params(2, (4, 4, 4), PadSpec("none"))
        with pytest.raises(ShapeMismatchError, match="w_freq"):
            global_filter(x, p, PadSpec("double"))

    def test_wrong_bias_shape_names_stage(self):
        x = Tensor(rand(2, 4, 4, 4, seed=23))
        p = identity_params(2, (4, 4, 4), PadSpec("none"))
        p.bias_freq.data = np.zeros((2, 4, 4, 4), dtype=np.complex128)
        with pytest.raises(ShapeMismatchError, match="bias_freq"):
            global_filter(x, p, PadSpec("none"))

    def test_gradients_unpadded(self):
        x = Tensor(rand(2, 3, 3, 3, seed=24) * 0.5, requires_grad=True)
        p = FourierBlockParams.create(2, (3, 3, 3), PadSpec("none"), rng=np.random.default_rng(2), dtype=np.float64)
        params = [x, p.w_freq, p.bias_freq, p.ln1_gamma, p.ln2_beta, p.mlp_w1, p.mlp_w2]
        check_grad(
            lambda: (global_filter(x, p, PadSpec("none")) ** 2).sum(),
            params,
            h=1e-6,
            rtol=2e-4,
            atol=1e-7,
        )

    def test_gradients_padded(self):
        x = Tensor(rand(1, 3, 3, 3, seed=25) * 0.5, requires_grad=True)
        p = FourierBlockParams.create(1, (3, 3, 3), PadSpec("double"), rng=np.random.default_rng(3), dtype=np.float64)
        check_grad(
            lambda: (global_filter(x, p, PadSpec("double")) ** 2).sum(),
            [x, p.w_freq, p.bias_freq],
            h=1e-6,
            rtol=2e-4,
            atol=1e-7,
        )

    def test_channel_mlp_gradient(self):
        x = Tensor(rand(3, 2, 2, 2, seed=26), requires_grad=True)
        w1 = Tensor(rand(3, 6, seed=27) * 0.4, requires_grad=True)
        b1 = Tensor(np.zeros(6), requires_grad=True)
        w2 = Tensor(rand(6, 3, seed=28) * 0.4, requires_grad=True)
        b2 = Tensor(np.zeros(3), requires_grad=True)
        check_grad(
            lambda: (channel_mlp(x, w1, b1, w2, b2) ** 2).sum(),
            [x, w1, b1, w2, b2],
            h=1e-6,
            rtol=1e-4,
            atol=1e-8,
        )


# ---------------------------------------------------------------------------
# fourier_fuse
# ---------------------------------------------------------------------------


class TestFourierFuse:
    def test_zero_encoder_gives_bandlimited_upsampling(self):
        dec = Tensor(rand(2, 4, 4, 4, seed=29))
        enc = Tensor(np.zeros((2, 8, 8, 8)))
        out = fourier_fuse(enc, dec)
        ref = spectral_upsample2x(dec)
        assert np.abs(out.data - ref.data).max() < 1e-5

    def test_zero_decoder_gives_highpass_of_encoder(self):
        enc = Tensor(rand(1, 8, 8, 8, seed=30))
        dec = Tensor(np.zeros((1, 4, 4, 4)))
        out = fourier_fuse(enc, dec)
        spec = fftshift3(fft3d(out)).data.data
        # the central 4^3 cube (and the widened symmetric faces) is empty
        assert np.abs(spec[:, 2:6, 2:6, 2:6]).max() < 1e-9
        assert np.abs(spec).max() > 1e-3

    def test_full_cutoff_returns_upsampled_decoder_alone(self):
        enc = Tensor(rand(1, 8, 8, 8, seed=31))
        dec = Tensor(rand(1, 4, 4, 4, seed=32))
        out = fourier_fuse(enc, dec, cutoff=FreqCropSpec("outer", (8, 8, 8)))
        ref = spectral_upsample2x(dec)
        assert np.abs(out.data - ref.data).max() < 1e-5

    def test_output_is_real_for_real_inputs(self):
        enc = Tensor(rand(3, 8, 8, 8, seed=33))
        dec = Tensor(rand(3, 4, 4, 4, seed=34))
        out = fourier_fuse(enc, dec)
        assert not out.is_complex

    def test_energy_additivity_disjoint_supports(self):
        enc = Tensor(rand(1, 8, 8, 8, seed=35))
        dec = Tensor(rand(1, 4, 4, 4, seed=36))
        out = fourier_fuse(enc, dec)
        total = np.abs(fft3d(out).data.data) ** 2

        ring = crop_freq(fftshift3(fft3d(enc)), FreqCropSpec("outer", (5, 5, 5)))
        low = embed_freq(fftshift3(fft3d(dec)), (8, 8, 8), split_nyquist=True)
        # supports are bin-disjoint, so energies add with no cross terms
        assert np.abs(ring.data.data * low.data.data).max() == 0.0
        e_sum = (np.abs(ring.data.data) ** 2).sum() + (np.abs(low.data.data) ** 2).sum()
        assert abs(total.sum() - e_sum) / e_sum < 1e-4

    def test_introduces_no_parameters(self):
        import inspect

        sig = inspect.signature(fourier_fuse)
        assert "cutoff" in sig.parameters
        enc = Tensor(rand(1, 4, 4, 4, seed=37), requires_grad=True)
        dec = Tensor(rand(1, 2, 2, 2, seed=38), requires_grad=True)
        out = fourier_fuse(enc, dec)
        (out ** 2).sum().backward()
        assert enc.grad is not None and dec.grad is not None

    def test_gradients(self):
        enc = Tensor(rand(1, 4, 4, 4, seed=39), requires_grad=True)
        dec = Tensor(rand(1, 2, 2, 2, seed=40), requires_grad=True)
        check_grad(
            lambda: (fourier_fuse(enc, dec) ** 2).sum(),
            [enc, dec],
            h=1e-6,
            rtol=1e-4,
            atol=1e-8,
        )

    def test_shape_and_channel_validation(self):
        with pytest.raises(GeometryError):
            fourier_fuse(Tensor(rand(1, 6, 6, 6)), Tensor(rand(1, 4, 4, 4, seed=1)))
        with pytest.raises(ShapeMismatchError):
            fourier_fuse(Tensor(rand(2, 8, 8, 8)), Tensor(rand(1, 4, 4, 4, seed=1)))

    def test_eq4_orientation_is_lowpassed(self):
        """The literal-equation variant discards everything above the
        decoder band; its output spectrum is confined to the central cube."""
        enc = Tensor(rand(1, 8, 8, 8, seed=41))
        dec = Tensor(rand(1, 4, 4, 4, seed=42))
        out = fourier_fuse(enc, dec, orientation="decoder_grid")
        assert not out.is_complex
        spec = fftshift3(fft3d(out)).data.data
        mask = np.zeros((8, 8, 8), dtype=bool)
        mask[2:7, 2:7, 2:7] = True  # closed symmetric 4-band incl. split faces
        assert np.abs(spec[0][~mask]).max() < 1e-9

    def test_eq4_zero_decoder_keeps_encoder_low_band(self):
        enc = Tensor(rand(1, 8, 8, 8, seed=43))
        dec = Tensor(np.zeros((1, 4, 4, 4)))
        out = fourier_fuse(enc, dec, orientation="decoder_grid")
        # low band survives: output correlates strongly with a low-passed enc
        assert float(np.abs(out.data).max()) > 1e-3

    def test_unknown_orientation_rejected(self):
        with pytest.raises(ValueError):
            fourier_fuse(
                Tensor(rand(1, 4, 4, 4)), Tensor(rand(1, 2, 2, 2, seed=1)), orientation="x"
            )
