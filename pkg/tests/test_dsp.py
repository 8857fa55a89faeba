import numpy as np
import pytest

from spoofkit import dsp
from spoofkit.dsp import AudioBuffer, AugmentationPolicy

RATE = 16000


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def tone(freq, seconds=1.0, rate=RATE, amp=1.0):
    t = np.arange(int(seconds * rate)) / rate
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t), rate)


def rms(buf):
    return float(np.sqrt(np.mean(buf.samples ** 2)))


class TestStandardize:
    def test_constant_input_degenerate(self, caplog):
        with caplog.at_level("WARNING"):
            out = dsp.standardize(AudioBuffer(np.ones(4), RATE))
        assert np.array_equal(out.samples, np.zeros(4))
        assert "degenerate" in caplog.text

    def test_already_standard(self):
        x = AudioBuffer(np.array([-1.0, 1.0, -1.0, 1.0]), RATE)
        out = dsp.standardize(x)
        assert np.allclose(out.samples, x.samples, atol=1e-15)

    def test_moments_of_random_buffer(self):
        x = AudioBuffer(rng(1).uniform(-3, 5, 16000), RATE)
        out = dsp.standardize(x)
        assert abs(out.samples.mean()) < 1e-9
        assert abs(np.mean(out.samples ** 2) - 1.0) < 1e-9

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            dsp.standardize(AudioBuffer(np.array([]), RATE))


class TestBandpass:
    def test_rejects_50hz(self):
        x = tone(50.0)
        assert rms(dsp.bandpass(x)) < 0.05 * rms(x)

    def test_passes_1khz(self):
        x = tone(1000.0)
        assert rms(dsp.bandpass(x)) > 0.90 * rms(x)

    def test_rejects_6khz(self):
        x = tone(6000.0)
        assert rms(dsp.bandpass(x)) < 0.05 * rms(x)

    def test_zero_in_zero_out(self):
        out = dsp.bandpass(AudioBuffer(np.zeros(4000), RATE))
        assert np.array_equal(out.samples, np.zeros(4000))

    def test_length_preserved(self):
        x = AudioBuffer(rng(2).standard_normal(12345), RATE)
        assert len(dsp.bandpass(x)) == 12345

    def test_linearity(self):
        g = rng(3)
        x = AudioBuffer(g.standard_normal(8000), RATE)
        y = AudioBuffer(g.standard_normal(8000), RATE)
        a, b = 2.5, -1.25
        lhs = dsp.bandpass(AudioBuffer(a * x.samples + b * y.samples, RATE)).samples
        rhs = a * dsp.bandpass(x).samples + b * dsp.bandpass(y).samples
        assert np.max(np.abs(lhs - rhs)) < 1e-6 * max(1.0, np.max(np.abs(rhs)))

    def test_invalid_cutoffs(self):
        x = tone(1000.0, 0.1)
        with pytest.raises(ValueError):
            dsp.bandpass(x, low_hz=3400, high_hz=300)
        with pytest.raises(ValueError):
            dsp.bandpass(x, low_hz=300, high_hz=9000)


class TestSetPower:
    def test_unit_target(self):
        x = AudioBuffer(rng(4).uniform(-2, 2, 1000), RATE)
        out = dsp.set_power(x, 1.0)
        assert abs(np.mean(out.samples ** 2) - 1.0) < 1e-9

    def test_same_target_is_identity(self):
        x = AudioBuffer(np.array([0.5, -0.25, 0.75]), RATE)
        p = float(np.mean(x.samples ** 2))
        out = dsp.set_power(x, p)
        assert np.max(np.abs(out.samples - x.samples)) < 1e-12

    def test_hand_computed_scale(self):
        out = dsp.set_power(AudioBuffer(np.array([3.0, 4.0]), RATE), 0.5)
        assert np.allclose(out.samples, [0.6, 0.8], atol=1e-12)

    def test_zero_energy_rejected(self):
        with pytest.raises(ValueError):
            dsp.set_power(AudioBuffer(np.zeros(10), RATE), 1.0)

    def test_idempotent(self):
        x = AudioBuffer(rng(5).standard_normal(500), RATE)
        once = dsp.set_power(x, 0.3)
        twice = dsp.set_power(once, 0.3)
        assert np.allclose(once.samples, twice.samples, rtol=1e-12)


class TestRandomPowerScale:
    def test_degenerate_range_exact(self):
        x = AudioBuffer(rng(6).standard_normal(100), RATE)
        out = dsp.random_power_scale(x, (1.0, 1.0), rng(0))
        assert abs(np.mean(out.samples ** 2) - 1.0) < 1e-9

    def test_draws_respect_bounds(self):
        x = AudioBuffer(rng(7).standard_normal(64), RATE)
        g = rng(8)
        powers = [np.mean(dsp.random_power_scale(x, (1e-5, 1.2), g).samples ** 2)
                  for _ in range(1000)]
        assert min(powers) >= 1e-5 - 1e-12
        assert max(powers) <= 1.2 + 1e-9

    def test_seed_determinism(self):
        x = AudioBuffer(rng(9).standard_normal(64), RATE)
        a = dsp.random_power_scale(x, (0.1, 0.9), rng(42))
        b = dsp.random_power_scale(x, (0.1, 0.9), rng(42))
        assert np.array_equal(a.samples, b.samples)


class TestAddAwgn:
    def test_realized_noise_power_at_0db(self):
        x = dsp.set_power(AudioBuffer(rng(10).standard_normal(16000), RATE), 1.0)
        out = dsp.add_awgn(x, 0.0, rng(1))
        noise_power = np.mean((out.samples - x.samples) ** 2)
        assert abs(noise_power - 1.0) < 0.02

    def test_realized_snr_within_tenth_db(self):
        x = AudioBuffer(rng(11).standard_normal(4000), RATE)
        for target in (-3.0, 5.0, 17.5, 30.0):
            out = dsp.add_awgn(x, target, rng(2))
            noise = out.samples - x.samples
            realized = 10 * np.log10(np.mean(x.samples ** 2) / np.mean(noise ** 2))
            assert abs(realized - target) < 0.1

    def test_high_snr_barely_changes_signal(self):
        x = tone(500.0)
        out = dsp.add_awgn(x, 60.0, rng(3))
        assert rms(AudioBuffer(out.samples - x.samples, RATE)) < 0.001 * rms(x) * 1.001

    def test_seed_reproducible(self):
        x = tone(440.0, 0.25)
        a = dsp.add_awgn(x, 10.0, rng(5))
        b = dsp.add_awgn(x, 10.0, rng(5))
        assert np.array_equal(a.samples, b.samples)

    def test_zero_power_rejected(self):
        with pytest.raises(ValueError):
            dsp.add_awgn(AudioBuffer(np.zeros(100), RATE), 10.0, rng(0))


class TestConvolveRir:
    def test_unit_impulse_is_identity(self):
        x = AudioBuffer(rng(12).standard_normal(2000), RATE)
        out = dsp.convolve_rir(x, AudioBuffer(np.array([1.0]), RATE))
        assert np.max(np.abs(out.samples - x.samples)) < 1e-9

    def test_delayed_impulse_shifts_and_keeps_power(self):
        g = rng(13)
        base = g.standard_normal(1990)
        x = AudioBuffer(np.concatenate([base, np.zeros(10)]), RATE)
        rir = AudioBuffer(np.concatenate([np.zeros(10), [1.0]]), RATE)
        out = dsp.convolve_rir(x, rir)
        assert np.allclose(out.samples[10:], base, atol=1e-9)
        assert abs(np.mean(out.samples ** 2) - np.mean(x.samples ** 2)) < 1e-12

    def test_zero_input_zero_output(self):
        out = dsp.convolve_rir(AudioBuffer(np.zeros(100), RATE),
                               AudioBuffer(np.array([0.3, 0.2]), RATE))
        assert np.array_equal(out.samples, np.zeros(100))

    def test_rate_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            dsp.convolve_rir(tone(100.0, 0.1), AudioBuffer(np.ones(3), 8000))

    def test_homogeneity(self):
        # re-normalization preserves scaling (though not additivity)
        x = AudioBuffer(rng(14).standard_normal(500), RATE)
        r = AudioBuffer(rng(15).standard_normal(32) * 0.2, RATE)
        lhs = dsp.convolve_rir(AudioBuffer(3.0 * x.samples, RATE), r).samples
        rhs = 3.0 * dsp.convolve_rir(x, r).samples
        assert np.allclose(lhs, rhs, rtol=1e-9)


class TestResampleRoundtrip:
    def test_passes_1khz(self):
        x = tone(1000.0)
        out = dsp.resample_roundtrip(x)
        assert abs(rms(out) - rms(x)) < 0.05 * rms(x)

    def test_rejects_6khz(self):
        x = tone(6000.0)
        assert rms(dsp.resample_roundtrip(x)) < 0.01 * rms(x)

    def test_zero_and_length(self):
        out = dsp.resample_roundtrip(AudioBuffer(np.zeros(12345), RATE))
        assert len(out) == 12345
        assert np.array_equal(out.samples, np.zeros(12345))

    def test_non_16k_rejected(self):
        with pytest.raises(ValueError, match="16000"):
            dsp.resample_roundtrip(AudioBuffer(np.ones(100), 8000))

    def test_linearity(self):
        g = rng(16)
        x = AudioBuffer(g.standard_normal(4000), RATE)
        y = AudioBuffer(g.standard_normal(4000), RATE)
        lhs = dsp.resample_roundtrip(
            AudioBuffer(1.5 * x.samples - 0.5 * y.samples, RATE)).samples
        rhs = 1.5 * dsp.resample_roundtrip(x).samples \
            - 0.5 * dsp.resample_roundtrip(y).samples
        assert np.max(np.abs(lhs - rhs)) < 1e-6 * max(1.0, np.max(np.abs(rhs)))


class TestWindowSegments:
    def test_four_second_audio_two_segments(self):
        x = AudioBuffer(rng(17).standard_normal(64000), RATE)
        segs = dsp.window_segments(x, 3.5, 0.5)
        assert len(segs) == 2
        assert np.array_equal(segs[0].samples, x.samples[:56000])
        assert np.array_equal(segs[1].samples, x.samples[8000:64000])

    def test_exact_window_single_segment(self):
        x = AudioBuffer(rng(18).standard_normal(56000), RATE)
        segs = dsp.window_segments(x)
        assert len(segs) == 1
        assert np.array_equal(segs[0].samples, x.samples)

    def test_short_input_cyclic_padding(self):
        x = AudioBuffer(rng(19).standard_normal(16000), RATE)
        segs = dsp.window_segments(x)
        assert len(segs) == 1 and len(segs[0]) == 56000
        assert np.array_equal(segs[0].samples[:16000], x.samples)
        assert np.array_equal(segs[0].samples[16000:32000], x.samples)

    def test_all_segments_same_length(self):
        x = AudioBuffer(rng(20).standard_normal(100000), RATE)
        segs = dsp.window_segments(x, 3.5, 0.5)
        assert {len(s) for s in segs} == {56000}


class TestRandomCrop:
    def test_exact_size_identity(self):
        x = AudioBuffer(rng(21).standard_normal(56000), RATE)
        out = dsp.random_crop(x, 3.5, rng(0))
        assert np.array_equal(out.samples, x.samples)

    def test_deterministic_offset(self):
        x = AudioBuffer(rng(22).standard_normal(160000), RATE)
        a = dsp.random_crop(x, 3.5, rng(5))
        b = dsp.random_crop(x, 3.5, rng(5))
        assert np.array_equal(a.samples, b.samples)

    def test_offsets_roughly_uniform(self):
        # ramp signal: the first sample of a crop reveals its offset
        n = 112000  # 7 s
        x = AudioBuffer(np.arange(n, dtype=np.float64), RATE)
        g = rng(23)
        offsets = np.array([dsp.random_crop(x, 3.5, g).samples[0]
                            for _ in range(1000)])
        assert offsets.min() < 2000 and offsets.max() > 54000
        hist, _ = np.histogram(offsets, bins=8, range=(0, 56000))
        assert hist.min() > 60  # each octile occupied (uniform mean is 125)


class TestApplyPolicy:
    def test_all_off_is_power_normalization(self):
        x = AudioBuffer(rng(24).standard_normal(8000), RATE)
        policy = AugmentationPolicy(power_scale_range=(1.0, 1.0))
        out = dsp.apply_policy(x, policy, rng(0))
        assert np.allclose(out.samples, dsp.set_power(x, 1.0).samples, atol=1e-12)

    def test_awgn_realized_snr(self):
        x = dsp.set_power(AudioBuffer(rng(25).standard_normal(56000), RATE), 1.0)
        policy = AugmentationPolicy(awgn_probability=1.0,
                                    awgn_snr_range_db=(10.0, 10.0),
                                    power_scale_range=(1.0, 1.0))
        out = dsp.apply_policy(x, policy, rng(1))
        # project onto the known signal to split signal and noise parts
        c = float(out.samples @ x.samples / (x.samples @ x.samples))
        noise = out.samples - c * x.samples
        snr = 10 * np.log10(np.mean((c * x.samples) ** 2) / np.mean(noise ** 2))
        assert abs(snr - 10.0) < 0.1

    def test_fixed_seed_byte_identical(self):
        x = AudioBuffer(rng(26).standard_normal(8000), RATE)
        rirs = [AudioBuffer(np.array([1.0, 0.3, 0.1]), RATE)]
        policy = AugmentationPolicy(awgn_probability=0.7, rir_probability=0.5,
                                    rir_bank=rirs, resample_roundtrip=True)
        a = dsp.apply_policy(x, policy, rng(9))
        b = dsp.apply_policy(x, policy, rng(9))
        assert np.array_equal(a.samples, b.samples)

    def test_invalid_policy_rejected(self):
        with pytest.raises(ValueError):
            AugmentationPolicy(awgn_probability=1.5)
        with pytest.raises(ValueError):
            AugmentationPolicy(awgn_snr_range_db=(20.0, 5.0))
        with pytest.raises(ValueError):
            AugmentationPolicy(power_scale_range=(0.0, 1.0))
        with pytest.raises(ValueError):
            AugmentationPolicy(rir_probability=0.5, rir_bank=[])


class TestSpectralFeatures:
    def test_zero_signal_hits_log_floor(self):
        out = dsp.spectral_features(AudioBuffer(np.zeros(800), RATE), 20)
        assert np.allclose(out, np.log(1e-10))

    def test_1khz_band_dominates_every_frame(self):
        x = tone(1000.0, 1.0)
        out = dsp.spectral_features(x, 80)
        edges = np.linspace(0, 8000, 82)
        band = np.unique(out.argmax(axis=1))
        assert len(band) == 1
        lo, hi = edges[band[0]], edges[band[0] + 2]
        assert lo < 1000.0 < hi

    def test_frame_count_for_3p5s(self):
        x = AudioBuffer(rng(27).standard_normal(56000), RATE)
        out = dsp.spectral_features(x, 80, 0.025, 0.010)
        assert out.shape == (348, 80)

    def test_too_short_rejected(self):
        with pytest.raises(ValueError, match="short"):
            dsp.spectral_features(AudioBuffer(np.zeros(399), RATE), 10)

    def test_min_bands(self):
        with pytest.raises(ValueError):
            dsp.spectral_features(AudioBuffer(np.zeros(800), RATE), 1)


class TestWavIo:
    def test_roundtrip(self, tmp_path):
        x = AudioBuffer(rng(28).uniform(-0.9, 0.9, 3000), RATE)
        p = tmp_path / "x.wav"
        dsp.save_wav(p, x)
        back = dsp.load_wav(p)
        assert back.sample_rate_hz == RATE
        assert np.max(np.abs(back.samples - x.samples)) <= 1.0 / 32768

    def test_wrong_rate_rejected(self, tmp_path):
        import wave
        p = tmp_path / "bad.wav"
        with wave.open(str(p), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(8000)
            wf.writeframes(b"\x00\x00" * 100)
        with pytest.raises(dsp.AudioFormatError, match="8000"):
            dsp.load_wav(p)

    def test_stereo_rejected(self, tmp_path):
        import wave
        p = tmp_path / "stereo.wav"
        with wave.open(str(p), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(16000)
            wf.writeframes(b"\x00\x00\x00\x00" * 100)
        with pytest.raises(dsp.AudioFormatError, match="mono"):
            dsp.load_wav(p)

    def test_rir_bank_requires_wavs(self, tmp_path):
        with pytest.raises(dsp.AudioFormatError):
            dsp.load_rir_bank(tmp_path)


def test_nonfinite_samples_rejected():
    with pytest.raises(dsp.AudioFormatError, match="finite"):
        AudioBuffer(np.array([1.0, np.nan]), RATE)
