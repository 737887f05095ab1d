import struct

import numpy as np
import pytest

from edgedenoise.audio_io import AudioClip, read_wav, round_half_away, write_wav
from edgedenoise.errors import (
    CorruptHeaderError,
    InvalidRateError,
    NonFiniteError,
    ShapeMismatchError,
    UnsupportedFormatError,
)


def make_wav_bytes(pcm: list[int], rate: int = 16000, channels: int = 1,
                   bits: int = 16, audio_format: int = 1) -> bytes:
    payload = struct.pack(f"<{len(pcm)}h", *pcm)
    block = channels * bits // 8
    return struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, audio_format, channels, rate, rate * block, block, bits,
        b"data", len(payload),
    ) + payload


def test_decode_scale_hand_values(tmp_path):
    # 0 -> 0.0, 16384 -> 0.5, -32768 -> -1.0 under the /32768 convention
    p = tmp_path / "hand.wav"
    p.write_bytes(make_wav_bytes([0, 16384, -32768]))
    clip = read_wav(p)
    assert clip.rate == 16000
    np.testing.assert_array_equal(clip.samples, [0.0, 0.5, -1.0])


def test_encode_hand_value(tmp_path):
    p = tmp_path / "enc.wav"
    write_wav(p, AudioClip(np.array([-0.5]), 16000))
    pcm = struct.unpack("<h", p.read_bytes()[44:46])[0]
    assert pcm == -16384


def test_positive_full_scale_clamps(tmp_path):
    # +1.0 would hit 32768 which int16 cannot represent; clamps to 32767
    p = tmp_path / "clamp.wav"
    write_wav(p, AudioClip(np.array([1.0, 2.0, -2.0]), 16000))
    pcm = struct.unpack("<3h", p.read_bytes()[44:50])
    assert pcm == (32767, 32767, -32768)


def test_round_trip_identity_on_grid(tmp_path):
    # values already on the int16/32768 grid survive a write/read exactly
    rng = np.random.default_rng(7)
    for trial in range(5):
        pcm = rng.integers(-32768, 32768, size=200)
        samples = pcm / 32768.0
        p = tmp_path / f"grid{trial}.wav"
        write_wav(p, AudioClip(samples, 8000))
        back = read_wav(p)
        np.testing.assert_array_equal(back.samples, samples)
        assert back.rate == 8000


def test_round_trip_payload_bytes(tmp_path):
    rng = np.random.default_rng(11)
    samples = rng.uniform(-1, 1, 333)
    p1, p2 = tmp_path / "a.wav", tmp_path / "b.wav"
    write_wav(p1, AudioClip(samples, 16000))
    write_wav(p2, read_wav(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_rounding_is_half_away_from_zero():
    np.testing.assert_array_equal(
        round_half_away(np.array([0.5, 1.5, -0.5, -1.5, 2.4, -2.4])),
        [1.0, 2.0, -1.0, -2.0, 2.0, -2.0],
    )


def test_stereo_rejected(tmp_path):
    p = tmp_path / "stereo.wav"
    p.write_bytes(make_wav_bytes([0, 0, 0, 0], channels=2))
    with pytest.raises(UnsupportedFormatError):
        read_wav(p)


def test_wrong_bit_depth_rejected(tmp_path):
    p = tmp_path / "pcm8.wav"
    p.write_bytes(make_wav_bytes([0, 0], bits=8))
    with pytest.raises(UnsupportedFormatError):
        read_wav(p)


def test_float_format_rejected(tmp_path):
    p = tmp_path / "f32.wav"
    p.write_bytes(make_wav_bytes([0, 0], audio_format=3))
    with pytest.raises(UnsupportedFormatError):
        read_wav(p)


def test_garbage_header_rejected(tmp_path):
    p = tmp_path / "junk.wav"
    p.write_bytes(b"not a riff file at all, definitely")
    with pytest.raises(CorruptHeaderError):
        read_wav(p)


def test_truncated_data_rejected(tmp_path):
    p = tmp_path / "trunc.wav"
    p.write_bytes(make_wav_bytes([1, 2, 3, 4])[:-3])
    with pytest.raises(CorruptHeaderError):
        read_wav(p)


def test_missing_file_raises_file_not_found(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_wav(tmp_path / "absent.wav")


def test_unknown_chunks_are_skipped(tmp_path):
    # a LIST chunk between fmt and data must not confuse the reader
    payload = struct.pack("<2h", 100, -100)
    extra = b"LIST" + struct.pack("<I", 5) + b"INFOx" + b"\x00"  # odd size padded
    body = (
        struct.pack("<4sI", b"fmt ", 16)
        + struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
        + extra
        + struct.pack("<4sI", b"data", len(payload))
        + payload
    )
    p = tmp_path / "chunks.wav"
    p.write_bytes(struct.pack("<4sI4s", b"RIFF", 4 + len(body), b"WAVE") + body)
    clip = read_wav(p)
    np.testing.assert_allclose(clip.samples, [100 / 32768, -100 / 32768])


def test_write_rejects_non_finite(tmp_path):
    with pytest.raises(NonFiniteError):
        write_wav(tmp_path / "nan.wav", AudioClip(np.array([0.0, np.nan]), 16000))


def test_clip_shape_and_rate_validation():
    with pytest.raises(ShapeMismatchError):
        AudioClip(np.zeros((2, 3)), 16000)
    with pytest.raises(InvalidRateError):
        AudioClip(np.zeros(3), 0)


def test_clip_duration():
    assert AudioClip(np.zeros(8000), 16000).duration == 0.5
