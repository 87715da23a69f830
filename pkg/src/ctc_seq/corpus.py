"""Corpus ingestion: TSV manifests, 16-bit PCM WAV I/O and speaker-stratified splits."""

from __future__ import annotations

import logging
import math
import os
import random
import struct
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .errors import CorruptFileError, ManifestError, UnsupportedFormatError

logger = logging.getLogger(__name__)

MANIFEST_FIELDS = ("clip_id", "audio_path", "speaker_id", "transcript")
PCM_SCALE = 32768.0
DEFAULT_RATIOS = (0.7, 0.1, 0.2)


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class Utterance:
    clip_id: str
    audio_path: str
    transcript: str
    speaker_id: str


@dataclass
class CorpusSplit:
    train: List[Utterance]
    dev: List[Utterance]
    test: List[Utterance]
    seed: int
    warnings: List[str] = field(default_factory=list)

    def parts(self):
        return {"train": self.train, "dev": self.dev, "test": self.test}


# -- manifests ---------------------------------------------------------------

def parse_manifest(text: str, base_dir: str = "") -> List[Utterance]:
    """Parse manifest text. ``audio_path`` is resolved against ``base_dir``
    unless it is already absolute."""
    utts = []
    seen = set()
    for line_no, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != len(MANIFEST_FIELDS):
            raise ManifestError(
                f"expected {len(MANIFEST_FIELDS)} tab-separated fields, got {len(fields)}",
                line_no,
            )
        clip_id, audio_path, speaker_id, transcript = fields
        transcript = transcript.strip()
        if not clip_id:
            raise ManifestError("empty clip_id", line_no)
        if not transcript:
            raise ManifestError(f"empty transcript for clip {clip_id!r}", line_no)
        if clip_id in seen:
            raise ManifestError(f"duplicate clip_id {clip_id!r}", line_no)
        seen.add(clip_id)
        if base_dir and not os.path.isabs(audio_path):
            audio_path = os.path.join(base_dir, audio_path)
        utts.append(Utterance(clip_id, audio_path, transcript, speaker_id))
    return utts


def load_manifest(path) -> List[Utterance]:
    """Read a UTF-8 TSV manifest (clip_id, audio_path, speaker_id, transcript).

    Audio paths are returned resolved relative to the manifest's directory.
    """
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_manifest(text, os.path.dirname(path))


def format_manifest(utts: Sequence[Utterance], out_dir: str = "") -> str:
    lines = []
    for u in utts:
        audio_path = u.audio_path
        if out_dir:
            audio_path = os.path.relpath(os.path.abspath(audio_path), os.path.abspath(out_dir))
        lines.append("\t".join((u.clip_id, audio_path, u.speaker_id, u.transcript)))
    return "".join(line + "\n" for line in lines)


def write_manifest(path, utts: Sequence[Utterance]) -> None:
    """Write utterances as a manifest; audio paths become relative to the file's directory."""
    path = os.fspath(path)
    text = format_manifest(utts, os.path.dirname(os.path.abspath(path)))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# -- WAV ---------------------------------------------------------------------

def parse_wav(data: bytes) -> AudioClip:
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise CorruptFileError("not a RIFF/WAVE container")
    fmt = None
    pcm = None
    pos = 12
    while pos < len(data):
        if pos + 8 > len(data):
            raise CorruptFileError(f"truncated chunk header at byte {pos}")
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise CorruptFileError(
                f"chunk {chunk_id!r} declares {size} bytes, only {len(body)} present"
            )
        if chunk_id == b"fmt ":
            if size < 16:
                raise CorruptFileError("fmt chunk shorter than 16 bytes")
            fmt = struct.unpack_from("<HHIIHH", body)
        elif chunk_id == b"data":
            pcm = body
        # chunks are word aligned
        pos += 8 + size + (size & 1)
        if fmt is not None and pcm is not None:
            break
    if fmt is None:
        raise CorruptFileError("missing fmt chunk")
    if pcm is None:
        raise CorruptFileError("missing data chunk")
    format_code, channels, sample_rate, _, _, bits = fmt
    if format_code != 1:
        raise UnsupportedFormatError(f"format code {format_code} is not PCM (1)")
    if channels != 1:
        raise UnsupportedFormatError(f"{channels} channels; only mono is supported")
    if bits != 16:
        raise UnsupportedFormatError(f"{bits}-bit samples; only 16-bit is supported")
    if sample_rate <= 0:
        raise CorruptFileError("sample rate must be positive")
    if len(pcm) % 2:
        raise CorruptFileError("data chunk holds a partial sample")
    samples = np.frombuffer(pcm, dtype="<i2").astype(np.float64) / PCM_SCALE
    return AudioClip(samples, int(sample_rate))


def read_wav(path) -> AudioClip:
    """Read a 16-bit mono PCM WAV file; samples are scaled by 1/32768."""
    with open(path, "rb") as fh:
        return parse_wav(fh.read())


def encode_wav(clip: AudioClip) -> bytes:
    ints = np.clip(np.round(np.asarray(clip.samples) * PCM_SCALE), -32768, 32767)
    pcm = ints.astype("<i2").tobytes()
    rate = int(clip.sample_rate_hz)
    fmt = struct.pack("<HHIIHH", 1, 1, rate, rate * 2, 2, 16)
    return b"".join([
        b"RIFF", struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(pcm)), b"WAVE",
        b"fmt ", struct.pack("<I", len(fmt)), fmt,
        b"data", struct.pack("<I", len(pcm)), pcm,
    ])


def write_wav(path, clip: AudioClip) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_wav(clip))


# -- splitting ---------------------------------------------------------------

def _split_sizes(n: int, ratios: Sequence[float]) -> List[int]:
    # largest-remainder apportionment, then make sure no split is empty
    exact = [r * n for r in ratios]
    sizes = [int(math.floor(x + 1e-9)) for x in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    for i in range(len(sizes)):
        if sizes[i] == 0:
            donor = max(range(len(sizes)), key=lambda j: (sizes[j], -j))
            sizes[donor] -= 1
            sizes[i] += 1
    return sizes


def split_corpus(
    utts: Sequence[Utterance],
    ratios: Tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> CorpusSplit:
    """Speaker-stratified random train/dev/test split.

    Each speaker's utterances are shuffled independently (seeded by ``seed``
    and the speaker id) and cut proportionally, so every speaker with at
    least three utterances lands in all three splits. Speakers with fewer
    go entirely to train and a warning is recorded. Each split is returned
    sorted by clip_id.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive numbers, got {ratios!r}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)!r}")

    by_speaker = {}
    for u in utts:
        by_speaker.setdefault(u.speaker_id, []).append(u)

    parts = ([], [], [])
    warnings = []
    for speaker in sorted(by_speaker):
        group = sorted(by_speaker[speaker], key=lambda u: u.clip_id)
        if len(group) < 3:
            msg = f"speaker {speaker!r} has {len(group)} utterance(s); assigned to train only"
            logger.warning(msg)
            warnings.append(msg)
            parts[0].extend(group)
            continue
        random.Random(f"{seed}:{speaker}").shuffle(group)
        start = 0
        for part, size in zip(parts, _split_sizes(len(group), ratios)):
            part.extend(group[start:start + size])
            start += size

    train, dev, test = (sorted(p, key=lambda u: u.clip_id) for p in parts)
    return CorpusSplit(train, dev, test, seed, warnings)
