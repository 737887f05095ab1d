"""Core signal processing: STFT/iSTFT, resampling, energy, SNR measurement.

The STFT here is analysis tooling (spectra, metrics, debugging); the
enhancement model itself consumes raw waveforms. Frames are taken from a
reflect-padded copy of the signal (frame_len//2 on each side) so frame
centers align with sample positions, and inversion uses overlap-add
normalized by the summed squared window. With an unmodified spectrogram
the reconstruction is exact wherever the window coverage is nonzero,
which for every shipped config means the entire signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import resample_poly

from .audio_io import AudioClip
from .errors import (
    InvalidConfigError,
    InvalidRateError,
    LengthMismatchError,
    NonColaConfigError,
    TooShortError,
    ZeroNoiseError,
)

_COVERAGE_EPS = 1e-12


def hann_window(n: int, periodic: bool = True) -> np.ndarray:
    """Hann window of length n; periodic form is the DFT-friendly default."""
    if n < 1:
        raise InvalidConfigError(f"window length must be >= 1, got {n}")
    if n == 1:
        return np.ones(1)
    denom = n if periodic else n - 1
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / denom))


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis parameters: frame length, hop, window kind."""

    frame_len: int = 512
    hop: int = 128
    window: str = "hann"

    def __post_init__(self) -> None:
        if self.frame_len < 2:
            raise InvalidConfigError(f"frame_len must be >= 2, got {self.frame_len}")
        if not 1 <= self.hop <= self.frame_len:
            raise InvalidConfigError(
                f"hop must be in [1, frame_len], got hop={self.hop} frame_len={self.frame_len}"
            )
        if self.window not in ("hann", "rect"):
            raise InvalidConfigError(f"unknown window kind: {self.window!r}")

    def window_samples(self) -> np.ndarray:
        if self.window == "rect":
            return np.ones(self.frame_len)
        return hann_window(self.frame_len, periodic=True)


@dataclass
class Spectrogram:
    """One-sided STFT frames plus everything needed to invert them.

    frames[t, f] is bin f of the frame starting at padded-signal offset
    t*hop. n_samples records the pre-padding signal length so istft can
    trim its output exactly.
    """

    frames: np.ndarray
    config: StftConfig
    n_samples: int

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.complex128)
        if self.frames.ndim != 2:
            raise InvalidConfigError(f"frames must be 2-D, got shape {self.frames.shape}")
        bins = self.config.frame_len // 2 + 1
        if self.frames.shape[1] != bins:
            raise InvalidConfigError(
                f"expected {bins} bins for frame_len {self.config.frame_len}, "
                f"got {self.frames.shape[1]}"
            )

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def _window_coverage(cfg: StftConfig, n_positions: int, n_frames: int) -> np.ndarray:
    """Sum of squared synthesis windows at every output position."""
    w2 = cfg.window_samples() ** 2
    cover = np.zeros(n_positions)
    for t in range(n_frames):
        cover[t * cfg.hop : t * cfg.hop + cfg.frame_len] += w2
    return cover


def stft(samples: np.ndarray, cfg: StftConfig | None = None) -> Spectrogram:
    """Short-time Fourier transform with reflect-padded edges.

    The signal is reflect-padded by frame_len//2 on both sides; frame t
    covers padded samples [t*hop, t*hop + frame_len), windowed, with a
    one-sided DFT per frame. One-sided energy convention: bins other
    than DC and Nyquist carry both halves of the spectrum, so Parseval
    reads sum_f g_f*|X_f|^2 = frame_len * windowed-frame energy with
    g_f = 2 except g_0 = g_nyquist = 1.

    Args:
        samples: 1-D float sequence, length >= frame_len.
        cfg: Analysis parameters (default 512/128 periodic Hann).

    Returns:
        Spectrogram of shape [n_frames x (frame_len//2 + 1)].

    Raises:
        TooShortError: fewer samples than one frame.
    """
    if cfg is None:
        cfg = StftConfig()
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidConfigError(f"expected 1-D samples, got shape {x.shape}")
    n = len(x)
    if n < cfg.frame_len:
        raise TooShortError(f"need at least frame_len={cfg.frame_len} samples, got {n}")

    pad = cfg.frame_len // 2
    padded = np.pad(x, pad, mode="reflect")
    n_frames = 1 + n // cfg.hop
    need = (n_frames - 1) * cfg.hop + cfg.frame_len
    if need > len(padded):
        padded = np.pad(padded, (0, need - len(padded)))
    frames = sliding_window_view(padded, cfg.frame_len)[:: cfg.hop][:n_frames]
    spec = np.fft.rfft(frames * cfg.window_samples(), n=cfg.frame_len, axis=1)
    return Spectrogram(spec, cfg, n)


def istft(spec: Spectrogram) -> np.ndarray:
    """Invert a spectrogram by window-weighted overlap-add.

    Each frame's inverse DFT is multiplied by the synthesis window
    (same as analysis), accumulated, and divided by the summed squared
    window; the reflect padding added by stft is then trimmed off.

    Raises:
        NonColaConfigError: window/hop leave zero-coverage positions
            inside the signal span, so inversion is undefined there.
    """
    cfg = spec.config
    n_frames = spec.n_frames
    total = (n_frames - 1) * cfg.hop + cfg.frame_len
    cover = _window_coverage(cfg, total, n_frames)
    pad = cfg.frame_len // 2
    span = cover[pad : pad + spec.n_samples]
    if np.min(span, initial=np.inf) <= _COVERAGE_EPS:
        raise NonColaConfigError(
            f"window {cfg.window!r} at hop {cfg.hop} leaves zero-coverage samples"
        )

    w = cfg.window_samples()
    frames = np.fft.irfft(spec.frames, n=cfg.frame_len, axis=1) * w
    out = np.zeros(total)
    for t in range(n_frames):
        out[t * cfg.hop : t * cfg.hop + cfg.frame_len] += frames[t]
    nz = cover > _COVERAGE_EPS
    out[nz] /= cover[nz]
    out[~nz] = 0.0
    return out[pad : pad + spec.n_samples]


def resample(clip: AudioClip, target_hz: int) -> AudioClip:
    """Resample a clip with a polyphase anti-aliased filter.

    Output length is round(n * target / source) with ties rounding up;
    the polyphase output (which is at least that long) is trimmed to it.

    Args:
        clip: Input audio.
        target_hz: Desired rate in Hz (>= 1).

    Returns:
        New AudioClip at target_hz. Same rate returns a copy.

    Raises:
        InvalidRateError: target_hz < 1.
    """
    target_hz = int(target_hz)
    if target_hz < 1:
        raise InvalidRateError(f"target rate must be >= 1, got {target_hz}")
    if target_hz == clip.rate:
        return AudioClip(clip.samples.copy(), clip.rate)
    n = len(clip.samples)
    if n == 0:
        return AudioClip(np.zeros(0), target_hz)
    expected = (2 * n * target_hz + clip.rate) // (2 * clip.rate)
    g = gcd(target_hz, clip.rate)
    out = resample_poly(clip.samples, target_hz // g, clip.rate // g)
    if len(out) < expected:  # polyphase yields ceil(n*up/down) >= round
        raise AssertionError("polyphase output shorter than expected")
    return AudioClip(out[:expected], target_hz)


def energy(samples: np.ndarray) -> float:
    """Sum of squared samples."""
    x = np.asarray(samples, dtype=np.float64)
    return float(np.sum(x * x))


def measure_snr(clean: np.ndarray, residual_noise: np.ndarray) -> float:
    """Signal-to-noise ratio 10*log10(energy(clean)/energy(noise)) in dB.

    Args:
        clean: Reference signal.
        residual_noise: Noise component of the same length.

    Returns:
        SNR in dB. Zero clean energy yields -inf.

    Raises:
        LengthMismatchError: inputs differ in length.
        ZeroNoiseError: noise energy is zero; the ratio is unbounded and
            callers that need a number should record +inf for it.
    """
    c = np.asarray(clean, dtype=np.float64)
    n = np.asarray(residual_noise, dtype=np.float64)
    if c.shape != n.shape:
        raise LengthMismatchError(f"length mismatch: {c.shape} vs {n.shape}")
    e_noise = energy(n)
    if e_noise == 0.0:
        raise ZeroNoiseError("noise energy is zero; SNR is +inf")
    e_clean = energy(c)
    if e_clean == 0.0:
        return float("-inf")
    return 10.0 * np.log10(e_clean / e_noise)
