"""Intelligibility and signal-fidelity metrics plus their aggregation.

The intelligibility score follows the short-time objective measure in
its standard published form: both signals resampled to 10 kHz, silent
frames removed (40 dB below the loudest frame of the clean reference),
a 512-point FFT over 256-sample frames with 128-sample hop, 15
one-third-octave bands from 150 Hz, and correlation of 384 ms band
envelope segments after normalization and clipping at -15 dB SDR. The
result is the mean over bands and segments, roughly in [0, 1] (slightly
negative values are possible for adversarial inputs, exactly 1 for
identical signals).
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioClip
from .dsp import resample
from .errors import (
    LengthMismatchError,
    ManifestFormatError,
    RateMismatchError,
    SilentTargetError,
    TooShortError,
)

EPS = np.finfo(np.float64).eps

STOI_RATE = 10_000
STOI_FRAME = 256
STOI_FFT = 512
STOI_HOP = 128
STOI_BANDS = 15
STOI_LOWEST_CF = 150.0
STOI_SEG_FRAMES = 30  # 384 ms at 10 kHz with 128-sample hop
STOI_DYN_RANGE_DB = 40.0
STOI_CLIP_DB = -15.0

SI_SNR_CAP_DB = 60.0


def _stoi_window() -> np.ndarray:
    # periodic-flavoured Hann with zero endpoints trimmed off
    return np.hanning(STOI_FRAME + 2)[1:-1]


def _frame_starts(n: int) -> range:
    return range(0, n - STOI_FRAME, STOI_HOP)


def remove_silent_frames(
    clean: np.ndarray, degraded: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames whose clean-signal energy is 40 dB under the peak frame.

    Frames are 256 samples, hop 128, Hann-weighted. Kept frames are
    overlap-added back into shorter signals; the mask is computed from
    the clean reference only and applied to both signals.

    Raises:
        TooShortError: input shorter than one frame.
    """
    if len(clean) != len(degraded):
        raise LengthMismatchError(
            f"length mismatch: {len(clean)} vs {len(degraded)}"
        )
    starts = list(_frame_starts(len(clean)))
    if not starts:
        raise TooShortError(
            f"need more than {STOI_FRAME} samples at {STOI_RATE} Hz, got {len(clean)}"
        )
    w = _stoi_window()
    x_frames = np.stack([w * clean[s : s + STOI_FRAME] for s in starts])
    y_frames = np.stack([w * degraded[s : s + STOI_FRAME] for s in starts])
    energies = 20.0 * np.log10(np.linalg.norm(x_frames, axis=1) + EPS)
    mask = energies > np.max(energies) - STOI_DYN_RANGE_DB
    x_frames = x_frames[mask]
    y_frames = y_frames[mask]
    if len(x_frames) == 0:
        raise TooShortError("no frames above the silence threshold")
    out_len = (len(x_frames) - 1) * STOI_HOP + STOI_FRAME
    x_out = np.zeros(out_len)
    y_out = np.zeros(out_len)
    for i in range(len(x_frames)):
        sl = slice(i * STOI_HOP, i * STOI_HOP + STOI_FRAME)
        x_out[sl] += x_frames[i]
        y_out[sl] += y_frames[i]
    return x_out, y_out


def _third_octave_matrix() -> np.ndarray:
    """Boolean [15 x 257] matrix mapping FFT bins into 1/3-octave bands.

    Band k has center 150 * 2^(k/3) Hz; edges at 2^(+-1/6) around the
    center, snapped to the nearest FFT bin frequency.
    """
    f = np.linspace(0.0, STOI_RATE, STOI_FFT + 1)[: STOI_FFT // 2 + 1]
    obm = np.zeros((STOI_BANDS, len(f)))
    k = np.arange(STOI_BANDS, dtype=np.float64)
    lo = STOI_LOWEST_CF * 2.0 ** ((2.0 * k - 1.0) / 6.0)
    hi = STOI_LOWEST_CF * 2.0 ** ((2.0 * k + 1.0) / 6.0)
    for i in range(STOI_BANDS):
        fl = int(np.argmin((f - lo[i]) ** 2))
        fh = int(np.argmin((f - hi[i]) ** 2))
        obm[i, fl:fh] = 1.0
    return obm


def _band_envelopes(signal: np.ndarray, obm: np.ndarray) -> np.ndarray:
    """[15 x n_frames] one-third-octave magnitude envelopes."""
    w = _stoi_window()
    starts = list(_frame_starts(len(signal)))
    if not starts:
        raise TooShortError("signal too short to frame after silence removal")
    frames = np.stack([w * signal[s : s + STOI_FRAME] for s in starts])
    spec = np.fft.rfft(frames, n=STOI_FFT, axis=1)
    power = np.abs(spec) ** 2
    return np.sqrt(power @ obm.T).T


def stoi(clean: AudioClip, degraded: AudioClip) -> float:
    """Short-time objective intelligibility of degraded speech.

    Args:
        clean: reference signal.
        degraded: processed/noisy signal at the same rate and length.

    Returns:
        Score roughly in [0, 1]; 1.0 means the band envelopes match in
        every 384 ms segment.

    Raises:
        RateMismatchError: the clips disagree on sample rate.
        LengthMismatchError: the clips disagree on length.
        TooShortError: too little non-silent signal to form one
            30-frame segment at 10 kHz.
    """
    if clean.rate != degraded.rate:
        raise RateMismatchError(f"rate mismatch: {clean.rate} vs {degraded.rate}")
    if len(clean) != len(degraded):
        raise LengthMismatchError(
            f"length mismatch: {len(clean)} vs {len(degraded)}"
        )
    x = resample(clean, STOI_RATE).samples
    y = resample(degraded, STOI_RATE).samples
    x, y = remove_silent_frames(x, y)
    obm = _third_octave_matrix()
    x_env = _band_envelopes(x, obm)
    y_env = _band_envelopes(y, obm)
    n_frames = x_env.shape[1]
    if n_frames < STOI_SEG_FRAMES:
        raise TooShortError(
            f"{n_frames} non-silent frames < {STOI_SEG_FRAMES} needed per segment"
        )
    # segments: all length-30 windows of consecutive frames
    x_seg = np.moveaxis(
        np.lib.stride_tricks.sliding_window_view(x_env, STOI_SEG_FRAMES, axis=1), 1, 0
    )  # [n_seg x 15 x 30]
    y_seg = np.moveaxis(
        np.lib.stride_tricks.sliding_window_view(y_env, STOI_SEG_FRAMES, axis=1), 1, 0
    )
    norm = np.linalg.norm(x_seg, axis=2, keepdims=True) / (
        np.linalg.norm(y_seg, axis=2, keepdims=True) + EPS
    )
    y_norm = y_seg * norm
    clip_gain = 1.0 + 10.0 ** (-STOI_CLIP_DB / 20.0)
    y_prime = np.minimum(y_norm, x_seg * clip_gain)

    x_c = x_seg - np.mean(x_seg, axis=2, keepdims=True)
    y_c = y_prime - np.mean(y_prime, axis=2, keepdims=True)
    x_c = x_c / (np.linalg.norm(x_c, axis=2, keepdims=True) + EPS)
    y_c = y_c / (np.linalg.norm(y_c, axis=2, keepdims=True) + EPS)
    corr = np.sum(x_c * y_c)
    n_seg = x_seg.shape[0]
    return float(corr / (n_seg * STOI_BANDS))


def si_snr(estimate: AudioClip, target: AudioClip) -> float:
    """Scale-invariant signal-to-noise ratio in dB.

    The estimate is decomposed into its projection onto the target and
    an orthogonal residual; the ratio of their energies is reported in
    dB, capped to +/-60 dB as a numerical guard (a zero residual means
    the estimate is an exact rescaling of the target, reported as +60).
    Signals are used as-is, without mean removal.

    Raises:
        RateMismatchError / LengthMismatchError: clips disagree.
        SilentTargetError: the target is all zeros, so no projection
            direction exists.
    """
    if estimate.rate != target.rate:
        raise RateMismatchError(f"rate mismatch: {estimate.rate} vs {target.rate}")
    if len(estimate) != len(target):
        raise LengthMismatchError(
            f"length mismatch: {len(estimate)} vs {len(target)}"
        )
    s = target.samples
    e = estimate.samples
    s_energy = float(np.dot(s, s))
    if s_energy == 0.0:
        raise SilentTargetError("target signal is all zeros")
    proj = (float(np.dot(e, s)) / s_energy) * s
    noise = e - proj
    p_sig = float(np.dot(proj, proj))
    p_noise = float(np.dot(noise, noise))
    if p_noise == 0.0:
        return SI_SNR_CAP_DB
    if p_sig == 0.0:
        return -SI_SNR_CAP_DB
    ratio = 10.0 * np.log10(p_sig / p_noise)
    return float(np.clip(ratio, -SI_SNR_CAP_DB, SI_SNR_CAP_DB))


@dataclass
class EvalRecord:
    """Per-clip metric row tagged with its mixing condition."""

    entry_id: str
    snr_condition_db: float
    stoi: float
    si_snr_db: float


@dataclass
class EvalReport:
    """Median summaries of a batch of per-clip records."""

    label: str
    records: list[EvalRecord]
    overall: dict[str, float] = field(default_factory=dict)
    by_condition: dict[float, dict[str, float]] = field(default_factory=dict)


def aggregate_median(records: list[EvalRecord], label: str = "") -> EvalReport:
    """Median STOI and SI-SNR, overall and per SNR condition.

    Medians use the usual convention: middle element for odd counts,
    mean of the two middle elements for even counts. An empty record
    list yields empty summaries rather than an error.
    """
    report = EvalReport(label=label, records=list(records))
    if not records:
        return report

    def med(rows: list[EvalRecord]) -> dict[str, float]:
        return {
            "stoi": float(statistics.median(r.stoi for r in rows)),
            "si_snr_db": float(statistics.median(r.si_snr_db for r in rows)),
        }

    report.overall = med(records)
    for cond in sorted({r.snr_condition_db for r in records}, reverse=True):
        rows = [r for r in records if r.snr_condition_db == cond]
        report.by_condition[cond] = med(rows)
    return report


CSV_HEADER = ["entry", "snr_db", "stoi", "si_snr"]


def write_records_csv(records: list[EvalRecord], path: str | Path) -> None:
    """Write per-clip rows; floats use repr so reads round-trip exactly."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow(
                [r.entry_id, repr(r.snr_condition_db), repr(r.stoi), repr(r.si_snr_db)]
            )


def read_records_csv(path: str | Path) -> list[EvalRecord]:
    """Read rows written by write_records_csv.

    Raises:
        ManifestFormatError: header or row layout is wrong.
    """
    path = Path(path)
    records = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ManifestFormatError(f"unexpected metrics CSV header in {path}: {header}")
        for row in reader:
            if len(row) != 4:
                raise ManifestFormatError(f"bad metrics row in {path}: {row}")
            try:
                records.append(
                    EvalRecord(row[0], float(row[1]), float(row[2]), float(row[3]))
                )
            except ValueError as exc:
                raise ManifestFormatError(f"bad metrics row in {path}: {row}") from exc
    return records


def write_medians_csv(report: EvalReport, path: str | Path) -> None:
    """Write the aggregate table: one overall row, then one per condition
    in descending SNR order."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["condition", "median_stoi", "median_si_snr"])
        if report.overall:
            writer.writerow(
                ["overall", repr(report.overall["stoi"]), repr(report.overall["si_snr_db"])]
            )
        for cond in sorted(report.by_condition, reverse=True):
            row = report.by_condition[cond]
            writer.writerow([repr(cond), repr(row["stoi"]), repr(row["si_snr_db"])])
