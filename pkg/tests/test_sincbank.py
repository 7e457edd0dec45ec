import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amsincnet import ndarr
from amsincnet.gradcheck import check_sincbank, numeric_grad, rel_error
from amsincnet.signal import ConfigError, mel
from amsincnet.sincbank import (
    SincParams,
    bank_cutoffs_hz,
    build_filters,
    effective_cutoffs,
    hamming,
    magnitude_response_db,
    mel_init,
    sinc_backward,
    sinc_forward,
    sinc_taps,
    sinc_taps_full,
)

FS = 16000


def band_contrast_db(f1, f2, length=251, nfft=4096, guard=0.01, stop_gap=0.02):
    taps = sinc_taps(np.array([f1]), np.array([f2]), length).taps[0, 0]
    mag = np.abs(np.fft.rfft(taps, nfft))
    freqs = np.arange(mag.size) / nfft
    passband = (freqs >= f1 + guard) & (freqs <= f2 - guard)
    stopband = (freqs < f1 - stop_gap) | (freqs > f2 + stop_gap)
    return 20 * np.log10(mag[passband].mean() / mag[stopband].mean())


class TestMelInit:
    def test_single_filter_covers_band(self):
        lo, hi = bank_cutoffs_hz(mel_init(1, FS))
        np.testing.assert_allclose([lo[0], hi[0]], [80.0, 8000.0], rtol=1e-12)

    def test_full_sized_bank_is_ordered(self):
        p = mel_init(80, FS, 251)
        f1, f2 = effective_cutoffs(p)
        assert np.all(np.diff(f1) > 0) and np.all(np.diff(f2) > 0)
        assert np.all(f1 < f2) and np.all(f2 <= 0.5)
        assert p.num_parameters() == 160

    def test_raw_grid_is_mel_uniform(self):
        p = mel_init(40, FS)
        points = np.append(p.f1_raw, p.f1_raw[-1] + p.band_raw[-1]) * FS
        steps = np.diff(mel(points))
        np.testing.assert_allclose(steps, steps[0], rtol=0, atol=1e-9)
        assert mel(points[0]) == pytest.approx(mel(30.0))
        assert points[-1] == pytest.approx(FS / 2 - 100.0)

    @pytest.mark.parametrize("fs", [8000, 16000])
    def test_raws_clear_of_abs_kink(self, fs):
        p = mel_init(80, fs)
        assert np.abs(p.f1_raw).min() > 1e-3 and np.abs(p.band_raw).min() > 1e-4

    def test_errors(self):
        with pytest.raises(ConfigError):
            mel_init(0, FS)
        with pytest.raises(ConfigError):
            mel_init(4, 200)
        with pytest.raises(ConfigError):
            SincParams(np.zeros(2), np.zeros(2), filter_len=10)


class TestEffectiveCutoffs:
    def test_minima(self):
        f1, f2 = effective_cutoffs(SincParams([0.0], [0.0], FS))
        assert f1[0] == 50 / FS and f2[0] == pytest.approx(100 / FS, rel=1e-15)

    def test_nyquist_clamp(self):
        _, f2 = effective_cutoffs(SincParams([0.01], [10.0], FS))
        assert f2[0] == 0.5

    def test_abs_symmetry(self):
        rng = np.random.default_rng(0)
        a, b = rng.uniform(0, 0.3, 10), rng.uniform(0, 0.3, 10)
        pos = effective_cutoffs(SincParams(a, b, FS))
        neg = effective_cutoffs(SincParams(-a, -b, FS))
        np.testing.assert_array_equal(pos[0], neg[0])
        np.testing.assert_array_equal(pos[1], neg[1])

    @settings(max_examples=200)
    @given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=1, max_size=16),
           st.sampled_from([8000, 16000, 44100]))
    def test_always_valid(self, raws, fs):
        f1_raw, band_raw = np.array(raws).T
        f1, f2 = effective_cutoffs(SincParams(f1_raw, band_raw, fs))
        assert np.all(f1 >= 50 / fs) and np.all(f1 < f2) and np.all(f2 <= 0.5)


class TestTaps:
    def test_hamming_endpoints(self):
        w = hamming(5)
        assert w[2] == 1.0
        np.testing.assert_allclose(w, w[::-1], rtol=0, atol=0)

    def test_empty_band_is_zero(self):
        taps = sinc_taps(np.array([0.1]), np.array([0.1]), 31).taps
        assert not taps.any()

    def test_mirror_symmetry_bit_exact(self):
        rng = np.random.default_rng(1)
        p = SincParams(rng.uniform(-0.2, 0.2, 12), rng.uniform(-0.2, 0.2, 12), FS, 101)
        taps = build_filters(p).taps
        np.testing.assert_array_equal(taps, taps[:, :, ::-1])

    def test_half_matches_full_loop(self):
        rng = np.random.default_rng(2)
        f1 = rng.uniform(0.003, 0.3, 6)
        f2 = np.minimum(f1 + rng.uniform(0.003, 0.2, 6), 0.5)
        np.testing.assert_array_equal(sinc_taps(f1, f2, 251).taps, sinc_taps_full(f1, f2, 251))

    def test_center_tap(self):
        bank = sinc_taps(np.array([0.1]), np.array([0.25]), 11)
        assert bank.band_pass[0, 0] == 2 * (0.25 - 0.1)
        # normalization makes the center tap exactly the window peak
        assert bank.taps[0, 0, 5] == 1.0

    def test_center_derivative_is_two(self):
        g0 = lambda f2: sinc_taps(np.array([0.1]), np.array([f2]), 11).band_pass[0, 0]
        h = 1e-6
        assert (g0(0.2 + h) - g0(0.2 - h)) / (2 * h) == pytest.approx(2.0, abs=1e-9)

    def test_band_contrast(self):
        assert band_contrast_db(0.1, 0.2) > 20.0

    def test_response_rows(self):
        taps = build_filters(mel_init(4, FS, 51)).taps
        db = magnitude_response_db(taps, 4096)
        assert db.shape == (4, 2049)
        np.testing.assert_allclose(db, 20 * np.log10(np.abs(np.fft.rfft(taps[:, 0], 4096))), atol=1e-9)


class TestForward:
    def test_zero_input(self):
        y, _ = sinc_forward(np.zeros((2, 1, 64)), mel_init(3, FS, 17))
        assert y.shape == (2, 3, 48) and not y.any()

    def test_matches_generic_conv(self):
        rng = np.random.default_rng(3)
        p = mel_init(5, FS, 41)
        x = rng.standard_normal((2, 1, 300))
        y, _ = sinc_forward(x, p)
        np.testing.assert_allclose(y, ndarr.conv1d_forward(x, build_filters(p).taps, method="direct"), atol=1e-12)

    def test_in_band_tone_dominates(self):
        f1, f2 = 0.1, 0.2
        p = SincParams([f1 - 50 / FS], [f2 - f1 - 50 / FS], FS, 251)
        n = np.arange(4000)
        rms = lambda f: np.sqrt(np.mean(sinc_forward(np.sin(2 * np.pi * f * n)[None, None], p)[0] ** 2))
        assert rms((f1 + f2) / 2) >= 10 * rms(2 * f2)

    def test_needs_single_channel(self):
        with pytest.raises(ndarr.ShapeError):
            sinc_forward(np.zeros((1, 2, 64)), mel_init(2, FS, 17))


class TestBackward:
    def test_zero_grad(self):
        rng = np.random.default_rng(4)
        p = SincParams(rng.uniform(0.01, 0.2, 3), rng.uniform(0.01, 0.1, 3), FS, 17)
        y, cache = sinc_forward(rng.standard_normal((2, 1, 64)), p)
        for g in sinc_backward(np.zeros_like(y), cache, p):
            assert not g.any()

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        assert check_sincbank(np.random.default_rng(seed), "tiny") < 1e-5

    def test_clamped_band_has_no_gradient(self):
        rng = np.random.default_rng(5)
        p = SincParams([0.05], [5.0], FS, 17)
        y, cache = sinc_forward(rng.standard_normal((1, 1, 40)), p)
        _, g1, gb = sinc_backward(rng.standard_normal(y.shape), cache, p)
        assert gb[0] == 0.0
        f = lambda: float((sinc_forward(cache.x, p)[0] * 1).sum())
        assert rel_error(numeric_grad(f, p.band_raw, 1e-7), np.zeros(1)) == 0.0

    def test_subgradient_zero_at_kink(self):
        rng = np.random.default_rng(6)
        p = SincParams([0.0], [0.0], FS, 17)
        y, cache = sinc_forward(rng.standard_normal((1, 1, 40)), p)
        _, g1, gb = sinc_backward(rng.standard_normal(y.shape), cache, p)
        assert g1[0] == 0.0 and gb[0] == 0.0

    def test_stale_cache(self):
        p3 = mel_init(3, FS, 17)
        y, cache = sinc_forward(np.ones((1, 1, 40)), p3)
        with pytest.raises(ndarr.ShapeError):
            sinc_backward(y, cache, mel_init(2, FS, 17))
