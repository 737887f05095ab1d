"""Deterministic noisy-corpus synthesis.

Clean speech segments are paired with noise files and target SNR levels
by a seeded PRNG, the mixing gain is solved exactly for each target, and
the recipe is persisted as a line-delimited JSON manifest so the corpus
can be regenerated byte-for-byte from (inputs, ladder, seed).

Mixing model: noisy = clean + alpha * noise with
alpha = sqrt(sum(clean^2) / (sum(noise^2) * 10^(snr_db/10))), which makes
the clean-to-scaled-noise ratio equal the requested SNR exactly. SNR is
computed over the full segment, not speech-active regions only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, read_wav, write_wav
from .dsp import energy
from .errors import (
    EmptyCorpusError,
    InvalidConfigError,
    InvalidLadderError,
    LengthMismatchError,
    ManifestFormatError,
    RateMismatchError,
    SilentSourceError,
)

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class SnrLadder:
    """Evenly spaced target SNR levels between snr_min_db and snr_max_db."""

    snr_min_db: float
    snr_max_db: float
    levels: int

    def __post_init__(self) -> None:
        if self.levels < 1:
            raise InvalidLadderError(f"levels must be >= 1, got {self.levels}")
        if not (np.isfinite(self.snr_min_db) and np.isfinite(self.snr_max_db)):
            raise InvalidLadderError("ladder bounds must be finite")
        if self.snr_min_db > self.snr_max_db:
            raise InvalidLadderError(
                f"snr_min_db {self.snr_min_db} > snr_max_db {self.snr_max_db}"
            )


@dataclass
class MixSpec:
    """Recipe for one noisy clip: sources, target SNR, seed, alignment."""

    clean_id: str
    noise_id: str
    snr_db: float
    seed: int
    noise_offset: int = 0
    rescale_factor: float = 1.0


@dataclass
class Manifest:
    """Ordered mixing recipes plus the context needed to regenerate them."""

    ladder: SnrLadder
    clean_dir: str
    noise_dir: str
    entries: list[MixSpec] = field(default_factory=list)
    version: int = MANIFEST_VERSION


def snr_ladder(ladder: SnrLadder) -> list[float]:
    """Expand a ladder into its SNR levels in dB.

    SNR_k = snr_min + (k-1)/(L-1) * (snr_max - snr_min) for k = 1..L;
    a single-level ladder returns [snr_min] by convention.
    """
    if ladder.levels == 1:
        return [float(ladder.snr_min_db)]
    span = ladder.snr_max_db - ladder.snr_min_db
    return [
        float(ladder.snr_min_db + (k / (ladder.levels - 1)) * span)
        for k in range(ladder.levels)
    ]


def mix_gain(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    """Gain alpha that makes clean vs alpha*noise hit the target SNR.

    alpha = sqrt(E_clean / (E_noise * 10^(snr_db/10))).

    Raises:
        SilentSourceError: either signal has zero energy.
        LengthMismatchError: signals differ in length.
    """
    c = np.asarray(clean, dtype=np.float64)
    n = np.asarray(noise, dtype=np.float64)
    if c.shape != n.shape:
        raise LengthMismatchError(f"length mismatch: {c.shape} vs {n.shape}")
    e_clean = energy(c)
    e_noise = energy(n)
    if e_clean == 0.0 or e_noise == 0.0:
        raise SilentSourceError("cannot solve mixing gain for a zero-energy source")
    return float(np.sqrt(e_clean / (e_noise * 10.0 ** (snr_db / 10.0))))


def _align_noise(noise: np.ndarray, length: int, offset: int) -> np.ndarray:
    """Cut or tile noise to the target length starting at offset.

    Noise at least as long as the target is sliced; shorter noise wraps
    around as many times as needed.
    """
    m = len(noise)
    if m == 0:
        raise SilentSourceError("noise source is empty")
    if m >= length and offset + length <= m:
        return noise[offset : offset + length]
    idx = (offset + np.arange(length)) % m
    return noise[idx]


def synthesize_noisy(
    clean: AudioClip,
    noise: AudioClip,
    snr_db: float,
    noise_offset: int = 0,
) -> tuple[AudioClip, AudioClip]:
    """Mix noise into clean speech at an exact target SNR.

    The noise is aligned to the clean length first (slice from
    noise_offset when long enough, wraparound tiling otherwise), then the
    gain is solved on the aligned pair, so
    measure_snr(clean, scaled_noise) == snr_db to within float rounding
    and noisy - clean == scaled_noise exactly.

    Args:
        clean: Clean reference clip.
        noise: Noise source clip (any length).
        snr_db: Target SNR in dB.
        noise_offset: Start sample into the noise source.

    Returns:
        (noisy, scaled_noise) at the clean clip's rate and length. Noisy
        samples may exceed [-1, 1]; corpus writers rescale (see
        realize_manifest).

    Raises:
        RateMismatchError: sample rates differ.
        SilentSourceError: zero-energy clean or noise.
    """
    if clean.rate != noise.rate:
        raise RateMismatchError(f"rate mismatch: clean {clean.rate} vs noise {noise.rate}")
    seg = _align_noise(noise.samples, len(clean.samples), noise_offset)
    alpha = mix_gain(clean.samples, seg, snr_db)
    scaled = alpha * seg
    return AudioClip(clean.samples + scaled, clean.rate), AudioClip(scaled, clean.rate)


def merge_segments(clips: list[AudioClip], target_seconds: float = 15.0) -> list[AudioClip]:
    """Concatenate clips and re-cut into equal fixed-duration segments.

    The trailing remainder shorter than target_seconds is dropped, so the
    total output length is floor(total / segment) * segment samples.

    Raises:
        RateMismatchError: clips have differing sample rates.
        InvalidConfigError: target_seconds yields a segment under 1 sample.
    """
    if not clips:
        return []
    rate = clips[0].rate
    for c in clips[1:]:
        if c.rate != rate:
            raise RateMismatchError(f"rate mismatch: {c.rate} vs {rate}")
    seg_len = int(round(target_seconds * rate))
    if seg_len < 1:
        raise InvalidConfigError(f"segment of {target_seconds} s is shorter than one sample")
    total = np.concatenate([c.samples for c in clips])
    n_segments = len(total) // seg_len
    return [
        AudioClip(total[i * seg_len : (i + 1) * seg_len].copy(), rate)
        for i in range(n_segments)
    ]


def _list_wavs(directory: str | Path) -> list[Path]:
    files = sorted(Path(directory).glob("*.wav"))
    if not files:
        raise EmptyCorpusError(f"no .wav files in {directory}")
    return files


def build_manifest(
    clean_dir: str | Path,
    noise_dir: str | Path,
    ladder: SnrLadder,
    seed: int,
) -> Manifest:
    """Pair every clean segment with a noise file and a ladder level.

    Noise files are chosen by a PRNG seeded with `seed`; SNR levels cycle
    through the ladder by entry index; each entry gets its own 63-bit
    seed and, when the noise is longer than the clean segment, a random
    start offset. Identical inputs and seed give a byte-identical
    manifest.

    Raises:
        EmptyCorpusError: either directory holds no .wav files.
    """
    clean_files = _list_wavs(clean_dir)
    noise_files = _list_wavs(noise_dir)
    levels = snr_ladder(ladder)
    rng = np.random.default_rng(seed)

    noise_lens = {f: len(read_wav(f)) for f in noise_files}
    entries = []
    for i, clean_file in enumerate(clean_files):
        noise_file = noise_files[int(rng.integers(len(noise_files)))]
        entry_seed = int(rng.integers(0, 2**63))
        clean_len = len(read_wav(clean_file))
        headroom = noise_lens[noise_file] - clean_len
        offset = int(rng.integers(0, headroom + 1)) if headroom > 0 else 0
        entries.append(
            MixSpec(
                clean_id=clean_file.stem,
                noise_id=noise_file.stem,
                snr_db=levels[i % len(levels)],
                seed=entry_seed,
                noise_offset=offset,
            )
        )
    return Manifest(
        ladder=ladder,
        clean_dir=str(clean_dir),
        noise_dir=str(noise_dir),
        entries=entries,
    )


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    """Write a manifest as line-delimited JSON (header line + one per entry)."""
    lines = [
        _dump(
            {
                "version": manifest.version,
                "kind": "manifest",
                "ladder": {
                    "snr_min_db": manifest.ladder.snr_min_db,
                    "snr_max_db": manifest.ladder.snr_max_db,
                    "levels": manifest.ladder.levels,
                },
                "clean_dir": manifest.clean_dir,
                "noise_dir": manifest.noise_dir,
            }
        )
    ]
    for e in manifest.entries:
        lines.append(
            _dump(
                {
                    "version": manifest.version,
                    "clean_id": e.clean_id,
                    "noise_id": e.noise_id,
                    "snr_db": e.snr_db,
                    "seed": e.seed,
                    "noise_offset": e.noise_offset,
                    "rescale_factor": e.rescale_factor,
                }
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> Manifest:
    """Read a manifest written by save_manifest.

    Raises:
        FileNotFoundError: path does not exist.
        ManifestFormatError: malformed JSONL or unsupported version.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ManifestFormatError(f"empty manifest: {path}")
    try:
        header = json.loads(lines[0])
        if header.get("kind") != "manifest":
            raise ManifestFormatError(f"not a manifest header: {path}")
        if header.get("version") != MANIFEST_VERSION:
            raise ManifestFormatError(f"unsupported manifest version {header.get('version')}")
        ladder = SnrLadder(
            snr_min_db=float(header["ladder"]["snr_min_db"]),
            snr_max_db=float(header["ladder"]["snr_max_db"]),
            levels=int(header["ladder"]["levels"]),
        )
        entries = []
        for line in lines[1:]:
            rec = json.loads(line)
            entries.append(
                MixSpec(
                    clean_id=rec["clean_id"],
                    noise_id=rec["noise_id"],
                    snr_db=float(rec["snr_db"]),
                    seed=int(rec["seed"]),
                    noise_offset=int(rec["noise_offset"]),
                    rescale_factor=float(rec["rescale_factor"]),
                )
            )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ManifestFormatError(f"malformed manifest {path}: {exc}") from exc
    return Manifest(
        ladder=ladder,
        clean_dir=header["clean_dir"],
        noise_dir=header["noise_dir"],
        entries=entries,
    )


def realize_manifest(manifest: Manifest, out_dir: str | Path) -> Manifest:
    """Synthesize every manifest entry and write the corpus tree.

    Writes noisy/<id>.wav, clean/<id>.wav, noise/<id>.wav under out_dir.
    If a mixture exceeds [-1, 1], the whole (noisy, clean, scaled noise)
    triple is rescaled by 1/max|noisy| before writing (SNR is
    scale-invariant so the target still holds) and the factor is
    recorded in the returned manifest.

    Entries are processed in manifest order; each is independent of the
    others, so the result is the same regardless of grouping.
    """
    out_dir = Path(out_dir)
    for sub in ("noisy", "clean", "noise"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    noise_cache: dict[str, AudioClip] = {}
    realized = []
    for e in manifest.entries:
        clean = read_wav(Path(manifest.clean_dir) / f"{e.clean_id}.wav")
        if e.noise_id not in noise_cache:
            noise_cache[e.noise_id] = read_wav(Path(manifest.noise_dir) / f"{e.noise_id}.wav")
        noise = noise_cache[e.noise_id]

        noisy, scaled_noise = synthesize_noisy(clean, noise, e.snr_db, e.noise_offset)
        peak = float(np.max(np.abs(noisy.samples)))
        factor = 1.0 / peak if peak > 1.0 else 1.0
        if factor != 1.0:
            noisy = AudioClip(noisy.samples * factor, noisy.rate)
            clean = AudioClip(clean.samples * factor, clean.rate)
            scaled_noise = AudioClip(scaled_noise.samples * factor, scaled_noise.rate)

        write_wav(out_dir / "noisy" / f"{e.clean_id}.wav", noisy)
        write_wav(out_dir / "clean" / f"{e.clean_id}.wav", clean)
        write_wav(out_dir / "noise" / f"{e.clean_id}.wav", scaled_noise)
        realized.append(replace(e, rescale_factor=factor))

    return replace(manifest, entries=realized)


def synth_corpus(
    clean_dir: str | Path,
    noise_dir: str | Path,
    ladder: SnrLadder,
    seed: int,
    out_dir: str | Path,
    segment_seconds: float = 15.0,
) -> Manifest:
    """Full synthesis pipeline: merge, pair, mix, persist.

    Clean WAVs are merged into fixed-duration segments (segment_seconds
    <= 0 keeps clips as-is), the segments are written under
    out_dir/clean/, a manifest is built against them, the corpus tree is
    realized, and the manifest lands at out_dir/manifest.jsonl.

    Returns:
        The realized manifest (rescale factors filled in).
    """
    out_dir = Path(out_dir)
    seg_dir = out_dir / "clean"
    seg_dir.mkdir(parents=True, exist_ok=True)

    clean_files = _list_wavs(clean_dir)
    clips = [read_wav(f) for f in clean_files]
    if segment_seconds > 0:
        segments = merge_segments(clips, segment_seconds)
        if not segments:
            raise EmptyCorpusError(
                f"clean corpus shorter than one {segment_seconds}-second segment"
            )
        width = max(5, len(str(len(segments) - 1)))
        names = [f"seg{i:0{width}d}" for i in range(len(segments))]
    else:
        segments = clips
        names = [f.stem for f in clean_files]
    for name, seg in zip(names, segments):
        write_wav(seg_dir / f"{name}.wav", seg)

    manifest = build_manifest(seg_dir, noise_dir, ladder, seed)
    manifest = realize_manifest(manifest, out_dir)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
