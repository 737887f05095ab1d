import numpy as np
import pytest

from edgedenoise.audio_io import AudioClip
from edgedenoise.dsp import (
    Spectrogram,
    StftConfig,
    energy,
    hann_window,
    istft,
    measure_snr,
    resample,
    stft,
)
from edgedenoise.errors import (
    InvalidConfigError,
    InvalidRateError,
    LengthMismatchError,
    NonColaConfigError,
    TooShortError,
    ZeroNoiseError,
)


def test_frames_match_direct_dft_of_padded_signal():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(2048)
    cfg = StftConfig(frame_len=512, hop=128, window="hann")
    spec = stft(x, cfg)
    pad = cfg.frame_len // 2
    padded = np.pad(x, pad, mode="reflect")
    w = hann_window(cfg.frame_len)
    for t in (0, 3, 7, spec.frames.shape[0] - 1):
        seg = padded[t * cfg.hop : t * cfg.hop + cfg.frame_len]
        if len(seg) < cfg.frame_len:  # zero-extended tail frame
            seg = np.pad(seg, (0, cfg.frame_len - len(seg)))
        np.testing.assert_allclose(spec.frames[t], np.fft.rfft(w * seg), atol=1e-12)


def test_parseval_one_sided_doubling_rect_window():
    # freeze the scaling: |X_0|^2 + 2 sum_mid |X_k|^2 + |X_N/2|^2 = N * sum x^2
    rng = np.random.default_rng(4)
    n = 16
    x = rng.standard_normal(4 * n)
    cfg = StftConfig(frame_len=n, hop=n, window="rect")
    spec = stft(x, cfg)
    padded = np.pad(x, n // 2, mode="reflect")
    for t in range(2):
        frame = spec.frames[t]
        lhs = abs(frame[0]) ** 2 + 2 * np.sum(np.abs(frame[1:-1]) ** 2) + abs(frame[-1]) ** 2
        seg = padded[t * n : (t + 1) * n]
        np.testing.assert_allclose(lhs, n * np.sum(seg**2), rtol=1e-12)


def test_sine_at_bin_concentrates_energy():
    rate, n = 16000, 512
    k = 37  # bin index; frequency k * rate / n
    t = np.arange(6 * n) / rate
    x = np.sin(2 * np.pi * (k * rate / n) * t)
    spec = stft(x, StftConfig(frame_len=n, hop=n, window="rect"))
    interior = spec.frames[3]  # away from the reflect-padded edges
    power = np.abs(interior) ** 2
    assert np.argmax(power) == k
    assert power[k] / np.sum(power) > 0.999


def test_istft_identity_random_signals():
    rng = np.random.default_rng(5)
    for trial in range(10):
        n = int(rng.integers(600, 4000))
        x = rng.standard_normal(n)
        cfg = StftConfig(frame_len=512, hop=128, window="hann")
        np.testing.assert_allclose(istft(stft(x, cfg)), x, atol=1e-9)


def test_istft_identity_rect_and_odd_hops():
    rng = np.random.default_rng(6)
    x = rng.standard_normal(1500)
    for cfg in (
        StftConfig(frame_len=256, hop=64, window="rect"),
        StftConfig(frame_len=256, hop=100, window="hann"),
        StftConfig(frame_len=64, hop=16, window="hann"),
    ):
        np.testing.assert_allclose(istft(stft(x, cfg)), x, atol=1e-9)


def test_istft_hand_overlap_add_single_frame_of_ones():
    # hand oracle: 8 ones, Hann, hop 4; overlap-add / window-square coverage
    x = np.ones(8)
    cfg = StftConfig(frame_len=8, hop=4, window="hann")
    spec = stft(x, cfg)
    w = hann_window(8)
    pad = 4
    padded = np.pad(x, pad, mode="reflect")  # all ones
    acc = np.zeros(len(padded) + 8)
    cov = np.zeros(len(padded) + 8)
    for t in range(spec.frames.shape[0]):
        seg = np.fft.irfft(spec.frames[t], n=8)
        acc[t * 4 : t * 4 + 8] += seg * w
        cov[t * 4 : t * 4 + 8] += w * w
    hand = np.where(cov > 1e-12, acc / np.where(cov > 1e-12, cov, 1.0), 0.0)[pad : pad + 8]
    out = istft(spec)
    np.testing.assert_allclose(out, hand, atol=1e-12)
    assert np.max(np.abs(out[2:-2] - 1.0)) < 1e-6


def test_zero_spectrogram_gives_zero_signal():
    spec = stft(np.ones(1000), StftConfig(frame_len=256, hop=64))
    zeroed = Spectrogram(np.zeros_like(spec.frames), spec.config, spec.n_samples)
    np.testing.assert_array_equal(istft(zeroed), np.zeros(1000))


def test_stft_linearity():
    rng = np.random.default_rng(8)
    x, y = rng.standard_normal(900), rng.standard_normal(900)
    cfg = StftConfig(frame_len=128, hop=32)
    lhs = stft(2.5 * x - 1.25 * y, cfg).frames
    rhs = 2.5 * stft(x, cfg).frames - 1.25 * stft(y, cfg).frames
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_stft_too_short():
    with pytest.raises(TooShortError):
        stft(np.ones(100), StftConfig(frame_len=512, hop=128))


def test_non_overlapping_hann_violates_cola():
    # hann endpoints are zero, so hop == frame_len leaves uncovered samples
    spec = stft(np.ones(64), StftConfig(frame_len=16, hop=16, window="hann"))
    with pytest.raises(NonColaConfigError):
        istft(spec)


def test_stft_config_validation():
    with pytest.raises(InvalidConfigError):
        StftConfig(frame_len=512, hop=0)
    with pytest.raises(InvalidConfigError):
        StftConfig(frame_len=512, hop=513)
    with pytest.raises(InvalidConfigError):
        StftConfig(frame_len=512, hop=128, window="kaiser")


def test_resample_same_rate_is_copy():
    clip = AudioClip(np.linspace(-1, 1, 100), 16000)
    out = resample(clip, 16000)
    np.testing.assert_array_equal(out.samples, clip.samples)
    assert out.samples is not clip.samples


def test_resample_length_rounds_half_up():
    # 7 samples at 16 kHz -> 8 kHz: 7/2 = 3.5 rounds up to 4
    out = resample(AudioClip(np.ones(7), 16000), 8000)
    assert len(out) == 4
    out = resample(AudioClip(np.ones(100), 16000), 10000)
    assert len(out) == 63  # 62.5 rounds up


def test_resample_preserves_constant_level():
    # anti-aliasing filter passband ripple bounds the error, not exactness
    out = resample(AudioClip(np.full(16000, 0.3), 16000), 10000)
    mid = out.samples[len(out) // 4 : -len(out) // 4]
    np.testing.assert_allclose(mid, 0.3, atol=2e-4)


def test_resample_keeps_spectral_peak():
    rate, target, f = 16000, 10000, 1000.0
    t = np.arange(rate) / rate
    out = resample(AudioClip(np.sin(2 * np.pi * f * t), rate), target)
    spec = np.abs(np.fft.rfft(out.samples))
    freqs = np.fft.rfftfreq(len(out), 1.0 / target)
    assert abs(freqs[np.argmax(spec)] - f) < 5.0


def test_resample_rejects_bad_rate():
    with pytest.raises(InvalidRateError):
        resample(AudioClip(np.ones(10), 16000), 0)


def test_energy_hand_value():
    assert energy(np.array([3.0, 4.0])) == 25.0


def test_measure_snr_hand_value():
    assert measure_snr(np.array([10.0, 0.0]), np.array([1.0, 0.0])) == pytest.approx(20.0)


def test_measure_snr_zero_noise_raises():
    with pytest.raises(ZeroNoiseError):
        measure_snr(np.ones(4), np.zeros(4))


def test_measure_snr_length_mismatch():
    with pytest.raises(LengthMismatchError):
        measure_snr(np.ones(4), np.ones(5))


def test_measure_snr_silent_clean_is_neg_inf():
    assert measure_snr(np.zeros(4), np.ones(4)) == -np.inf
