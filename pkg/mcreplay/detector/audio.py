import json
import logging
from pathlib import Path
from typing import Iterable, List, Literal, NamedTuple, Optional, Sequence, TypedDict

import numpy as np

from ..const import (
    FRAME_DURATION,
    LABELS,
    POSITION_BEGINNING,
    POSITION_MIDDLE,
    REFERENCE_SAMPLE_RATES,
    SPLIT_DEV,
    SPLIT_TRAIN,
    SPLITS,
)
from .errors import InputError, ParseError
from .utils import derive_rng
from .wav import PathLike, read_wav_file, write_wav_file

_LOGGER = logging.getLogger(__name__)

Label = Literal["genuine", "replayed"]
Split = Literal["train", "dev", "eval"]
Position = Literal["beginning", "middle"]

MANIFEST_FIELDS = ("path", "label", "device", "speaker", "environment", "split")


class ManifestRecord(TypedDict):
    path: str
    label: Label
    device: str
    speaker: str
    environment: str
    split: Split


class AudioClip(NamedTuple):
    samples: np.ndarray  # (C, T)
    sample_rate: int
    bit_depth: int
    label: Optional[Label] = None
    device_id: str = ""
    speaker_id: str = ""
    source_path: str = ""

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate


class FrameBatch(NamedTuple):
    frames: np.ndarray  # (F, C, M)
    frame_length: int
    frame_duration: float
    clip: AudioClip

    @property
    def count(self) -> int:
        return self.frames.shape[0]


def frame_length_for(sample_rate: int) -> int:
    return int(round(FRAME_DURATION * sample_rate))


def make_clip(samples: np.ndarray, sample_rate: int, bit_depth: int = 16, **meta) -> AudioClip:
    """Build a clip, enforcing the AudioClip invariants."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.ndim != 2:
        raise InputError(f"samples must be (channels, length), got {samples.shape}")
    if not 1 <= samples.shape[0] <= 8:
        raise InputError(f"{samples.shape[0]} channels, expected 1 to 8")
    if np.any(np.abs(samples) >= 1.0 + 1e-9):
        raise InputError("sample magnitude must stay below 1.0")
    if sample_rate not in REFERENCE_SAMPLE_RATES:
        _LOGGER.warning("Sample rate %d Hz is outside the presets %s", sample_rate, REFERENCE_SAMPLE_RATES)
    return AudioClip(samples, int(sample_rate), int(bit_depth), **meta)


def load_wav(path: PathLike, **meta) -> AudioClip:
    fmt, samples = read_wav_file(path)
    meta.setdefault("source_path", str(path))
    return make_clip(samples, fmt.sample_rate, fmt.bit_depth, **meta)


def write_wav(path: PathLike, clip: AudioClip):
    write_wav_file(path, clip.samples, clip.sample_rate, clip.bit_depth)


def select_segment(clip: AudioClip, length_s: float, position: Position = POSITION_BEGINNING) -> AudioClip:
    """
    Cut ``length_s`` seconds from the beginning of the clip or centered on its
    midpoint; clips shorter than the request are zero padded at the end.
    """
    if length_s <= 0:
        raise InputError(f"segment length must be positive, got {length_s}")
    if clip.length == 0:
        raise InputError("empty clip")
    n = int(round(length_s * clip.sample_rate))
    if position == POSITION_BEGINNING:
        start = 0
    elif position == POSITION_MIDDLE:
        start = max(0, clip.length // 2 - n // 2)
    else:
        raise InputError(f"unknown segment position {position!r}")
    segment = clip.samples[:, start : start + n]
    if segment.shape[1] < n:
        segment = np.pad(segment, ((0, 0), (0, n - segment.shape[1])))
    return clip._replace(samples=np.ascontiguousarray(segment))


def frame(clip: AudioClip) -> FrameBatch:
    """Non-overlapping 20 ms frames; the tail shorter than one frame is dropped."""
    M = frame_length_for(clip.sample_rate)
    F = clip.length // M
    if F < 1:
        raise InputError(f"segment of {clip.length} samples is shorter than one frame ({M})")
    frames = clip.samples[:, : F * M].reshape(clip.channels, F, M).transpose(1, 0, 2)
    return FrameBatch(np.ascontiguousarray(frames), M, FRAME_DURATION, clip)


def replicate_channels(clip: AudioClip, count: int) -> AudioClip:
    """``count`` identical copies of channel 1."""
    if count < 1:
        raise InputError(f"channel count must be >= 1, got {count}")
    if clip.channels < 1:
        raise InputError("clip has no channels")
    return clip._replace(samples=np.repeat(clip.samples[:1], count, axis=0))


def select_channels(clip: AudioClip, indices: Sequence[int]) -> AudioClip:
    """Reorder or subset channels by 1-based index."""
    if not indices:
        raise InputError("channel selection is empty")
    bad = [i for i in indices if not 1 <= i <= clip.channels]
    if bad:
        raise InputError(f"channel indices {bad} outside 1..{clip.channels}")
    return clip._replace(samples=clip.samples[[i - 1 for i in indices]])


# -- manifest ----------------------------------------------------------------


def _validate_record(raw: dict, where: str) -> ManifestRecord:
    missing = [field for field in MANIFEST_FIELDS if field not in raw]
    if missing:
        raise ParseError(f"{where}: missing fields {missing}")
    if raw["label"] not in LABELS:
        raise ParseError(f"{where}: label {raw['label']!r} not in {LABELS}")
    if raw["split"] not in SPLITS:
        raise ParseError(f"{where}: split {raw['split']!r} not in {SPLITS}")
    return ManifestRecord(**{field: str(raw[field]) for field in MANIFEST_FIELDS})


def load_manifest(path: PathLike) -> List[ManifestRecord]:
    """Read a JSON-lines manifest; relative clip paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    records: List[ManifestRecord] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        record = _validate_record(raw, f"{path}:{lineno}")
        clip_path = Path(record["path"])
        if not clip_path.is_absolute():
            record["path"] = str(base / clip_path)
        records.append(record)
    return records


def write_manifest(path: PathLike, records: Iterable[ManifestRecord]):
    lines = [
        json.dumps({field: record[field] for field in MANIFEST_FIELDS}, separators=(",", ":"))
        for record in records
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def records_for(records: Sequence[ManifestRecord], split: Split) -> List[ManifestRecord]:
    return [record for record in records if record["split"] == split]


def split_core(
    records: Sequence[ManifestRecord], dev_fraction: float = 0.1, seed: int = 0
) -> List[ManifestRecord]:
    """
    Seeded random train/dev partition of the core clips when the manifest has
    no dev split; manifests that already carry one are returned unchanged.
    """
    if records_for(records, SPLIT_DEV):
        return list(records)
    core = [i for i, record in enumerate(records) if record["split"] == SPLIT_TRAIN]
    if len(core) < 2:
        raise InputError("need at least two core clips to hold out a dev split")
    n_dev = min(len(core) - 1, max(1, int(round(dev_fraction * len(core)))))
    chosen = set(derive_rng(seed, 0xDE5).choice(core, size=n_dev, replace=False).tolist())
    out: List[ManifestRecord] = []
    for i, record in enumerate(records):
        record = ManifestRecord(**record)
        if i in chosen:
            record["split"] = SPLIT_DEV
        out.append(record)
    return out


def load_record(record: ManifestRecord) -> AudioClip:
    return load_wav(
        record["path"],
        label=record["label"],
        device_id=record["device"],
        speaker_id=record["speaker"],
    )
