import numpy as np
import pytest

from rfdm.dsp import (
    RfdmSequence,
    condition_rfdm,
    cube_to_rfdm,
    dft_oracle,
    doppler_process,
    fft,
    ifft,
    mti_filter,
    next_pow2,
    range_compress,
)
from rfdm.errors import ShapeError
from rfdm.radar import RadarConfig, linear_scatterer, static_scatterer, synthesize_cube

CFG = RadarConfig()


def max_rel(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-30)
    return np.max(np.abs(a - b)) / scale


class TestOracle:
    def test_impulse(self):
        x = np.zeros(8, dtype=complex)
        x[0] = 1.0
        assert np.allclose(dft_oracle(x), np.ones(8), atol=1e-12)

    def test_single_tone_orthogonality(self):
        n = 16
        for m in [0, 1, 5, 15]:
            x = np.exp(2j * np.pi * m * np.arange(n) / n)
            spec = dft_oracle(x)
            expect = np.zeros(n, dtype=complex)
            expect[m] = n
            assert np.max(np.abs(spec - expect)) < 1e-12 * n

    def test_dc_vector(self):
        assert np.allclose(dft_oracle(np.ones(4)), [4, 0, 0, 0], atol=1e-12)


class TestFft:
    @pytest.mark.parametrize("n", list(range(1, 17)) + [112, 128, 256])
    def test_matches_oracle(self, n):
        rng = np.random.default_rng(n)
        for _ in range(6):
            x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            assert max_rel(fft(x), dft_oracle(x)) < 1e-9

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        for n in [5, 64, 112, 200]:
            x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            assert max_rel(ifft(fft(x)), x) < 1e-9

    def test_linearity(self):
        rng = np.random.default_rng(1)
        n = 112
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        y = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        a, b = 2.5 - 1j, -0.3 + 4j
        assert max_rel(fft(a * x + b * y), a * fft(x) + b * fft(y)) < 1e-9

    def test_batched_last_axis(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 4, 16)) + 1j * rng.standard_normal((3, 4, 16))
        out = fft(x)
        for i in range(3):
            for j in range(4):
                assert max_rel(out[i, j], dft_oracle(x[i, j])) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            fft(np.zeros(0))

    def test_next_pow2(self):
        assert [next_pow2(n) for n in [1, 2, 3, 112, 124, 128]] == [1, 2, 4, 128, 128, 128]


class TestRangeCompress:
    def test_peak_bin_with_zero_padding(self):
        # a target at 5 range-resolution cells lands at bin round(5 * 128/112)
        r = 5.0 * CFG.range_resolution
        cube = synthesize_cube(CFG, [static_scatterer(r)], n_frames=1)
        rc = range_compress(cube, window="none")
        assert rc.shape == (1, 128, 128, 1)
        profile = np.abs(rc[0, 0, :, 0])
        assert int(np.argmax(profile)) == round(5 * 128 / 112)

    def test_zero_cube_stays_zero(self):
        cube = synthesize_cube(CFG, [], n_frames=1)
        assert np.all(range_compress(cube) == 0)

    def test_two_separated_targets_two_peaks(self):
        r1, r2 = 8 * CFG.range_resolution, 40 * CFG.range_resolution
        cube = synthesize_cube(
            CFG, [static_scatterer(r1), static_scatterer(r2)], n_frames=1
        )
        profile = np.abs(range_compress(cube, window="none")[0, 0, :, 0])
        b1, b2 = round(8 * 128 / 112), round(40 * 128 / 112)
        # each predicted bin is a local max over a +/-3 bin neighborhood
        for b in (b1, b2):
            lo, hi = b - 3, b + 4
            assert int(np.argmax(profile[lo:hi])) + lo == b


class TestMti:
    def test_constant_input_annihilated(self):
        x = np.full((1, 16, 4, 1), 3.7 + 1j)
        assert np.all(mti_filter(x) == 0)

    def test_impulse_response_coefficients(self):
        x = np.zeros((1, 16, 1, 1))
        x[0, 4, 0, 0] = 1.0
        y = mti_filter(x)[0, :, 0, 0]
        assert np.array_equal(y[:5], [1.0, -4.0, 6.0, -4.0, 1.0])
        assert np.all(y[5:] == 0)

    @pytest.mark.parametrize("degree", [0, 1, 2, 3])
    def test_annihilates_polynomials_up_to_cubic(self, degree):
        l = np.arange(32, dtype=float)
        x = (0.3 * l) ** degree
        y = mti_filter(x[np.newaxis, :, np.newaxis, np.newaxis])
        assert np.max(np.abs(y)) <= 1e-9 * max(np.max(np.abs(x)), 1.0)

    def test_quartic_gives_constant_24(self):
        l = np.arange(32, dtype=float)
        y = mti_filter((l ** 4)[np.newaxis, :, np.newaxis, np.newaxis])
        assert np.allclose(y, 24.0, rtol=1e-12)

    def test_short_slow_time_rejected(self):
        with pytest.raises(ShapeError, match=">= 5"):
            mti_filter(np.zeros((1, 4, 2, 1)))


class TestDoppler:
    def test_static_target_at_center_bin(self):
        cube = synthesize_cube(CFG, [static_scatterer(5.0)], n_frames=1)
        seq = doppler_process(range_compress(cube, "none"), window="none")
        t, n_r, n_d = seq.frames.shape
        assert (t, n_d) == (1, 128)
        r_bin, d_bin = np.unravel_index(np.argmax(seq.frames[0]), seq.frames[0].shape)
        assert d_bin == n_d // 2

    def test_moving_target_three_bins_positive(self):
        v = 3.0 * CFG.doppler_resolution
        cube = synthesize_cube(CFG, [linear_scatterer(5.0, v)], n_frames=1)
        seq = doppler_process(range_compress(cube, "none"), window="none")
        m = seq.frames[0]
        _, d_bin = np.unravel_index(np.argmax(m), m.shape)
        assert d_bin == m.shape[1] // 2 + 3

    def test_mti_suppresses_static_clutter(self):
        clutter = [static_scatterer(r, a) for r, a in [(2.0, 1.0), (6.5, 0.5), (11.0, 0.8)]]
        cube = synthesize_cube(CFG, clutter, n_frames=1)
        rc = range_compress(cube)
        without = doppler_process(rc).frames
        with_mti = doppler_process(mti_filter(rc)).frames
        assert with_mti.max() <= 1e-9 * without.max()


class TestCondition:
    def _seq(self, arr):
        return RfdmSequence(frames=np.asarray(arr, dtype=float))

    def test_all_zero_passes_through(self):
        out = condition_rfdm(self._seq(np.zeros((2, 64, 64))), 32, 32)
        assert out.frames.shape == (2, 32, 32)
        assert np.all(out.frames == 0)

    def test_maxnorm_peak_is_one(self):
        rng = np.random.default_rng(3)
        out = condition_rfdm(self._seq(rng.random((3, 64, 64))), 32, 32)
        assert out.frames.max() == 1.0

    def test_crop_shape_contract(self):
        out = condition_rfdm(self._seq(np.ones((4, 128, 128))), 32, 32)
        assert out.frames.shape == (4, 32, 32)

    def test_oversized_crop_rejected(self):
        with pytest.raises(ShapeError, match="crop"):
            condition_rfdm(self._seq(np.ones((1, 16, 16))), 32, 32)

    def test_log_db_range(self):
        rng = np.random.default_rng(4)
        out = condition_rfdm(self._seq(rng.random((2, 40, 40))), 16, 16, scale_mode="log-db")
        assert out.frames.min() == 0.0 and out.frames.max() == 1.0


class TestEndToEnd:
    def test_range_velocity_recovery_grid(self):
        # argmax of the (no-MTI, unwindowed) RFDM within 1 bin of prediction
        n_pad = 128
        range_bin_m = CFG.f_s * 299792458.0 / (2 * CFG.slope) / n_pad
        for r in [3.0, 41.0, 95.0]:
            for v in [-8.0, 0.0, 11.0]:
                cube = synthesize_cube(CFG, [linear_scatterer(r, v)], n_frames=1)
                rc = range_compress(cube, window="none")
                seq = doppler_process(rc, window="none")
                m = seq.frames[0]
                rb, db = np.unravel_index(np.argmax(m), m.shape)
                assert abs(rb - round(r / range_bin_m)) <= 1
                assert abs(db - (64 + round(v / CFG.doppler_resolution))) <= 1

    def test_pipeline_determinism(self):
        cube = synthesize_cube(CFG, [linear_scatterer(4.0, 2.0)], n_frames=2,
                               noise_sigma=0.3, rng_seed=9)
        a = cube_to_rfdm(cube)
        b = cube_to_rfdm(cube)
        assert a.frames.tobytes() == b.frames.tobytes()
        assert a.frames.shape == (2, 32, 32)
