"""Audio and protocol I/O, length normalisation, and the synthetic corpus."""

from __future__ import annotations

import os
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .frontend import SAMPLE_RATE, SEGMENT_LENGTH

LABELS = ("bonafide", "spoof")

# Synthetic spoofing artefact: band-limited noise in a fixed sub-band, present
# only in a fixed window of the segment (fractions of its length).
ARTEFACT_BAND_HZ = (5200.0, 6000.0)
ARTEFACT_SPAN = (0.35, 0.65)
ARTEFACT_RMS = 0.02


@dataclass
class Utterance:
    utt_id: str
    samples: np.ndarray
    label: Optional[str] = None
    attack: Optional[str] = None


@dataclass(frozen=True)
class ProtocolEntry:
    speaker: str
    utt_id: str
    system_id: str
    key: str
    label: str

    @property
    def attack(self) -> str:
        """Attack identifier, taken from whichever of the two id fields is filled."""
        for value in (self.system_id, self.key):
            if value != "-":
                return value
        return "-"

    def format(self) -> str:
        return " ".join([self.speaker, self.utt_id, self.system_id, self.key, self.label])


class AudioFormatError(ValueError):
    pass


def load_wav(path) -> Utterance:
    """Read a 16-bit PCM mono 16 kHz WAV file, scaled to [-1, 1)."""
    path = Path(path)
    with wave.open(str(path), "rb") as f:
        if f.getcomptype() != "NONE":
            raise AudioFormatError(f"{path}: compressed WAV ({f.getcomptype()}) is not supported")
        if f.getsampwidth() != 2:
            raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit")
        if f.getnchannels() != 1:
            raise AudioFormatError(f"{path}: expected mono, got {f.getnchannels()} channels")
        if f.getframerate() != SAMPLE_RATE:
            raise AudioFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {f.getframerate()} Hz (no resampling)")
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Utterance(utt_id=path.stem, samples=samples)


def write_wav(path, samples: np.ndarray) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with wave.open(str(tmp), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(SAMPLE_RATE)
        f.writeframes(pcm.tobytes())
    os.replace(tmp, path)


def fix_length(samples: np.ndarray, length: int = SEGMENT_LENGTH) -> np.ndarray:
    """Truncate (keeping the head) or tile end-to-end to exactly ``length`` samples."""
    samples = np.asarray(samples)
    if samples.size == 0:
        raise ValueError("cannot normalise an empty utterance")
    if samples.size >= length:
        return samples[:length].copy()
    reps = -(-length // samples.size)
    return np.tile(samples, reps)[:length]


def parse_protocol_line(line: str) -> ProtocolEntry:
    fields = line.split()
    if len(fields) != 5:
        raise ValueError(f"protocol line needs 5 fields, got {len(fields)}: {line!r}")
    if fields[4] not in LABELS:
        raise ValueError(f"protocol label must be one of {LABELS}, got {fields[4]!r}")
    return ProtocolEntry(*fields)


def read_protocol(path) -> List[ProtocolEntry]:
    with open(path) as f:
        return [parse_protocol_line(line) for line in f if line.strip() and not line.startswith("#")]


def write_protocol(path, entries: Iterable[ProtocolEntry]) -> None:
    _atomic_write_text(path, "".join(e.format() + "\n" for e in entries))


def read_manifest(path) -> List[Tuple[str, Optional[str]]]:
    """Lines of ``path [label]``; relative paths resolve against the manifest's folder."""
    base = Path(path).parent
    items = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            fields = line.split()
            if not fields or fields[0].startswith("#"):
                continue
            if len(fields) > 2:
                raise ValueError(f"{path}:{lineno}: expected 'path [label]'")
            label = fields[1] if len(fields) == 2 else None
            if label is not None and label not in LABELS:
                raise ValueError(f"{path}:{lineno}: unknown label {label!r}")
            p = Path(fields[0])
            items.append((str(p if p.is_absolute() else base / p), label))
    return items


def load_manifest(path, length: int = SEGMENT_LENGTH) -> List[Utterance]:
    utts = []
    for wav_path, label in read_manifest(path):
        u = load_wav(wav_path)
        u.samples = fix_length(u.samples, length)
        u.label = label
        utts.append(u)
    return utts


def _atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------


def _pinkish_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    noise = np.fft.irfft(spec / np.sqrt(f), n)
    return noise / (np.std(noise) + 1e-12)


def _band_noise(rng: np.random.Generator, n: int, band: Tuple[float, float]) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    spec[(freqs < band[0]) | (freqs > band[1])] = 0.0
    noise = np.fft.irfft(spec, n)
    return noise / (np.std(noise) + 1e-12)


def _bona_fide(rng: np.random.Generator, n: int) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    f0 = rng.uniform(100.0, 250.0)
    vibrato = 1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * t)
    phase = 2 * np.pi * f0 * np.cumsum(vibrato) / SAMPLE_RATE
    x = np.zeros(n)
    for h in range(1, 13):
        if h * f0 > 4000.0:
            break
        x += rng.uniform(0.3, 1.0) / h * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(1.0, 4.0) * t + rng.uniform(0, 2 * np.pi)) ** 2
    x *= envelope
    x = 0.2 * x / (np.max(np.abs(x)) + 1e-12)
    return x + 0.01 * rng.uniform(0.5, 1.5) * _pinkish_noise(rng, n)


def synthetic_artefact(rng: np.random.Generator, n: int) -> np.ndarray:
    """The spoof-only component: band-limited noise gated to a fixed time window."""
    art = _band_noise(rng, n, ARTEFACT_BAND_HZ)
    start, stop = int(ARTEFACT_SPAN[0] * n), int(ARTEFACT_SPAN[1] * n)
    gate = np.zeros(n)
    ramp = min(160, (stop - start) // 4)
    gate[start:stop] = 1.0
    gate[start : start + ramp] = np.linspace(0.0, 1.0, ramp)
    gate[stop - ramp : stop] = np.linspace(1.0, 0.0, ramp)
    return ARTEFACT_RMS * art * gate


def make_synthetic_dataset(n_per_class: int, seed: int, length: int = SEGMENT_LENGTH) -> List[Utterance]:
    """``n_per_class`` bona fide and spoof utterances, deterministic for a seed.

    Bona fide: harmonic tone complex below 4 kHz with vibrato and amplitude
    envelope, plus pink-ish noise. Spoof: the same construction plus
    :func:`synthetic_artefact`. Items alternate bona/spoof.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    utts = []
    for i in range(n_per_class):
        utts.append(Utterance(f"syn_{seed}_{2 * i:05d}", _bona_fide(rng, length), "bonafide", "-"))
        x = _bona_fide(rng, length) + synthetic_artefact(rng, length)
        utts.append(Utterance(f"syn_{seed}_{2 * i + 1:05d}", x, "spoof", "SYN"))
    return utts


def write_corpus(utts: List[Utterance], directory, name: str) -> Tuple[Path, Path]:
    """Write WAVs plus a ``<name>.lst`` manifest and ``<name>.protocol`` file."""
    directory = Path(directory)
    (directory / name).mkdir(parents=True, exist_ok=True)
    manifest_lines, entries = [], []
    for u in utts:
        rel = Path(name) / f"{u.utt_id}.wav"
        write_wav(directory / rel, u.samples)
        manifest_lines.append(f"{rel} {u.label}\n" if u.label else f"{rel}\n")
        entries.append(ProtocolEntry("SPK", u.utt_id, u.attack or "-", "-", u.label or "bonafide"))
    manifest = directory / f"{name}.lst"
    protocol = directory / f"{name}.protocol"
    _atomic_write_text(manifest, "".join(manifest_lines))
    write_protocol(protocol, entries)
    return manifest, protocol
