"""Reading and writing 16-bit mono PCM WAV clips.

All audio inside the toolkit is a 1-D float64 array in [-1, 1] plus a
sample rate. The WAV layer is deliberately strict: only uncompressed
16-bit mono PCM is accepted, and decode/encode round-trips are exact on
the int16 grid (decode divides by 32768, encode multiplies by 32768 and
rounds half away from zero, so every representable sample maps back to
the identical int16 word).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CorruptHeaderError,
    InvalidRateError,
    NonFiniteError,
    ShapeMismatchError,
    UnsupportedFormatError,
)

PCM_SCALE = 32768.0


def round_half_away(x: np.ndarray | float) -> np.ndarray:
    """Round to nearest integer with ties away from zero.

    numpy's round() ties to even, which would split the PCM grid
    inconsistently between positive and negative samples.
    """
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass
class AudioClip:
    """Mono audio: float64 samples and an integer sample rate in Hz."""

    samples: np.ndarray
    rate: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeMismatchError(
                f"expected 1-D mono samples, got shape {self.samples.shape}"
            )
        if int(self.rate) < 1:
            raise InvalidRateError(f"sample rate must be >= 1, got {self.rate}")
        self.rate = int(self.rate)

    @property
    def duration(self) -> float:
        """Clip length in seconds."""
        return len(self.samples) / self.rate

    def __len__(self) -> int:
        return len(self.samples)


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CorruptHeaderError(f"file truncated: wanted {n} bytes, got {len(data)}")
    return data


def read_wav(path: str | Path) -> AudioClip:
    """Read a 16-bit mono PCM WAV file.

    Args:
        path: Path to the file.

    Returns:
        AudioClip with samples in [-1, 1) (int16 value / 32768).

    Raises:
        FileNotFoundError: path does not exist.
        CorruptHeaderError: not a parseable RIFF/WAVE container.
        UnsupportedFormatError: container is valid but the stream is not
            uncompressed 16-bit mono PCM.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, "rb") as f:
        riff, _size, wave = struct.unpack("<4sI4s", _read_exact(f, 12))
        if riff != b"RIFF" or wave != b"WAVE":
            raise CorruptHeaderError(f"not a RIFF/WAVE file: {path}")

        fmt = None
        data = None
        while fmt is None or data is None:
            header = f.read(8)
            if len(header) == 0:
                raise CorruptHeaderError(
                    f"missing {'fmt ' if fmt is None else 'data'} chunk: {path}"
                )
            if len(header) != 8:
                raise CorruptHeaderError(f"truncated chunk header: {path}")
            chunk_id, chunk_size = struct.unpack("<4sI", header)
            if chunk_id == b"fmt ":
                if chunk_size < 16:
                    raise CorruptHeaderError(f"fmt chunk too small: {path}")
                fmt = struct.unpack("<HHIIHH", _read_exact(f, 16))
                _read_exact(f, chunk_size - 16)
            elif chunk_id == b"data":
                data = _read_exact(f, chunk_size)
            else:
                # skip unknown chunk; RIFF pads odd sizes to even
                _read_exact(f, chunk_size + (chunk_size & 1))

        audio_format, channels, rate, _byte_rate, _block_align, bits = fmt
        if audio_format != 1:
            raise UnsupportedFormatError(
                f"only PCM (format 1) supported, got format {audio_format}: {path}"
            )
        if channels != 1:
            raise UnsupportedFormatError(f"only mono supported, got {channels} channels: {path}")
        if bits != 16:
            raise UnsupportedFormatError(f"only 16-bit supported, got {bits}-bit: {path}")
        if rate < 1:
            raise CorruptHeaderError(f"invalid sample rate {rate}: {path}")
        if len(data) % 2 != 0:
            raise CorruptHeaderError(f"data chunk has odd byte length: {path}")

    ints = np.frombuffer(data, dtype="<i2")
    return AudioClip(ints.astype(np.float64) / PCM_SCALE, rate)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write a clip as 16-bit mono PCM WAV.

    Samples are clamped to [-1, 1], scaled by 32768, rounded half away
    from zero, and clamped to the int16 range. Values already on the
    decode grid (k / 32768) therefore re-encode to exactly k.

    Args:
        path: Destination path (parent directory must exist).
        clip: Audio to write.

    Raises:
        NonFiniteError: samples contain NaN or infinity.
    """
    x = clip.samples
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("cannot encode non-finite samples")
    scaled = round_half_away(np.clip(x, -1.0, 1.0) * PCM_SCALE)
    ints = np.clip(scaled, -32768, 32767).astype("<i2")
    payload = ints.tobytes()

    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        1,  # PCM
        1,  # mono
        clip.rate,
        clip.rate * 2,
        2,
        16,
        b"data",
        len(payload),
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)
