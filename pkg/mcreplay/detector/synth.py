"""
Synthetic genuine/replayed microphone-array corpus.

A replayed clip is the same kind of talker signal passed through a
loudspeaker coloration FIR and emitted from a loudspeaker position; both
classes then share the propagation model (per-mic fractional delay,
1/distance attenuation, independent sensor noise). There is no room model.
"""
import logging
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.signal

from ..const import (
    CORE_GENUINE,
    CORE_REPLAYED,
    LABEL_GENUINE,
    LABEL_REPLAYED,
    MANIFEST_NAME,
    SPEED_OF_SOUND,
    SPLIT_DEV,
    SPLIT_EVAL,
    SPLIT_TRAIN,
)
from .audio import AudioClip, Label, ManifestRecord, make_clip, write_manifest, write_wav
from .errors import GeometryError, InputError
from .utils import SeedLike, as_seed_sequence, derive_rng, gather_ordered, run_ordered

_LOGGER = logging.getLogger(__name__)

LEAD_IN_S = 0.2
SINC_TAPS = 32
COLORATION_TAPS = 64
RECORDING_GAIN = 0.25


class ArrayGeometry(NamedTuple):
    name: str
    positions: np.ndarray  # (K, 3) meters
    sample_rate: int = 44100
    bit_depth: int = 16

    @property
    def channels(self) -> int:
        return self.positions.shape[0]


def make_geometry(name: str, positions: Sequence[Sequence[float]], sample_rate: int = 44100, bit_depth: int = 16) -> ArrayGeometry:
    points = np.asarray(positions, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] not in (2, 3):
        raise GeometryError(f"positions must be (K, 2|3), got {points.shape}")
    if points.shape[1] == 2:
        points = np.hstack([points, np.zeros((points.shape[0], 1))])
    if not np.all(np.isfinite(points)):
        raise GeometryError("non-finite microphone position")
    gaps = np.linalg.norm(points[:, None] - points[None], axis=-1)
    if np.any(gaps[~np.eye(len(points), dtype=bool)] <= 0):
        raise GeometryError("two microphones share a position")
    return ArrayGeometry(name, points, int(sample_rate), int(bit_depth))


def _linear(count: int, spacing: float) -> List[Tuple[float, float]]:
    offset = (count - 1) * spacing / 2
    return [(i * spacing - offset, 0.0) for i in range(count)]


def _circle(count: int, radius: float) -> List[Tuple[float, float]]:
    angles = 2 * np.pi * np.arange(count) / count
    return [(radius * np.cos(a), radius * np.sin(a)) for a in angles]


# name -> (positions, sample rate, bit depth); numbering follows the device figure
PRESETS: Dict[str, Tuple[List[Tuple[float, float]], int, int]] = {
    "d1": (_linear(2, 0.0635), 44100, 16),
    "d2": (_linear(4, 0.04), 44100, 16),
    "d3": (_circle(6, 0.0463), 44100, 32),
    "d4": (_circle(6, 0.05) + [(0.0, 0.0)], 16000, 16),
}


def preset(name: str) -> ArrayGeometry:
    key = name.lower()
    if key not in PRESETS:
        raise InputError(f"unknown geometry preset {name!r}, expected one of {sorted(PRESETS)}")
    positions, sample_rate, bit_depth = PRESETS[key]
    return make_geometry(key, positions, sample_rate, bit_depth)


def furthest_first_order(geometry: ArrayGeometry, tol: float = 1e-9) -> List[int]:
    """Start at mic 1, then repeatedly add the mic furthest from the last one added."""
    order = [1]
    remaining = list(range(2, geometry.channels + 1))
    while remaining:
        last = geometry.positions[order[-1] - 1]
        dists = [float(np.linalg.norm(geometry.positions[i - 1] - last)) for i in remaining]
        best = max(dists)
        pick = next(i for i, d in zip(remaining, dists) if d >= best - tol)
        order.append(pick)
        remaining.remove(pick)
    return order


def loudspeaker_coloration(sample_rate: int = 44100, taps: int = COLORATION_TAPS) -> np.ndarray:
    """
    Fixed 64-tap band-pass standing in for a small loudspeaker: pass band
    150 Hz to 7 kHz with a +/-3 dB ripple across it.
    """
    nyquist = sample_rate / 2
    ripple = [1.0, 10 ** (3 / 20), 10 ** (-3 / 20), 10 ** (3 / 20), 10 ** (-3 / 20), 1.0, 1.0]
    band = [150.0, 300.0, 600.0, 1200.0, 2400.0, 4800.0, 7000.0]
    freq = [0.0, 100.0] + band + [f for f in (8500.0,) if f < nyquist] + [nyquist]
    gain = [0.0, 0.0] + ripple + [0.0] * (len(freq) - 2 - len(band))
    return scipy.signal.firwin2(taps, freq, gain, fs=sample_rate)


class SceneSpec(NamedTuple):
    source_position: np.ndarray
    loudspeaker_position: np.ndarray
    label: Label
    snr_db: float = 30.0
    coloration: np.ndarray = np.ones(1)
    seed: SeedLike = 0
    speed_of_sound: float = SPEED_OF_SOUND
    correlated_noise: bool = False


def synth_source(
    duration_s: float,
    seed: SeedLike,
    sample_rate: int = 44100,
    base_f0: Optional[float] = None,
) -> np.ndarray:
    """
    Speech-like mono signal: a harmonic pulse train on a wandering pitch
    contour (80 to 300 Hz) plus band-shaped noise under a syllabic envelope,
    after a 0.2 s low-energy lead-in.
    """
    if duration_s <= 0:
        raise InputError(f"duration must be positive, got {duration_s}")
    rng = np.random.default_rng(as_seed_sequence(seed))
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    base = base_f0 if base_f0 is not None else rng.uniform(100.0, 220.0)
    vibrato = 0.15 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi))
    drift = 0.05 * np.sin(2 * np.pi * rng.uniform(3.0, 7.0) * t + rng.uniform(0, 2 * np.pi))
    f0 = np.clip(base * (1 + vibrato + drift), 80.0, 300.0)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    harmonics = np.arange(1, 41)[:, None]
    audible = harmonics * f0[None, :] < 0.45 * sample_rate
    voiced = (np.sin(harmonics * phase[None, :]) / harmonics * audible).sum(axis=0)
    voiced /= np.sqrt(np.mean(voiced**2)) + 1e-12

    high = min(12000.0, 0.45 * sample_rate)
    sos = scipy.signal.butter(4, [2000.0, high], btype="bandpass", fs=sample_rate, output="sos")
    noise = scipy.signal.sosfilt(sos, rng.standard_normal(n))
    noise /= np.sqrt(np.mean(noise**2)) + 1e-12

    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
    signal = (voiced + rng.uniform(0.2, 0.45) * noise) * envelope
    lead = min(n, int(round(LEAD_IN_S * sample_rate)))
    signal[:lead] = 0.02 * noise[:lead]
    peak = np.max(np.abs(signal))
    return 0.5 * signal / peak if peak > 0 else signal


def fractional_delay(signal: np.ndarray, delay: float, taps: int = SINC_TAPS) -> np.ndarray:
    """Delay by ``delay`` samples with a Hann-windowed sinc; output keeps the input length."""
    whole = int(np.floor(delay))
    frac = delay - whole
    center = taps // 2 - 1
    n = np.arange(taps) - center
    offset = n - frac
    window = 0.5 * (1 + np.cos(2 * np.pi * offset / taps))
    kernel = np.sinc(offset) * window
    kernel /= kernel.sum()
    full = np.convolve(signal, kernel)
    index = np.arange(len(signal)) - whole + center
    valid = (index >= 0) & (index < len(full))
    out = np.zeros(len(signal))
    out[valid] = full[index[valid]]
    return out


def propagate(
    source: np.ndarray,
    geometry: ArrayGeometry,
    scene: SceneSpec,
    sample_rate: Optional[int] = None,
) -> AudioClip:
    fs = sample_rate or geometry.sample_rate
    if scene.label == LABEL_REPLAYED:
        emitted = scipy.signal.lfilter(np.asarray(scene.coloration, dtype=np.float64), [1.0], source)
        position = np.asarray(scene.loudspeaker_position, dtype=np.float64)
    else:
        emitted = np.asarray(source, dtype=np.float64)
        position = np.asarray(scene.source_position, dtype=np.float64)
    if position.shape == (2,):
        position = np.append(position, 0.0)
    dists = np.linalg.norm(geometry.positions - position[None, :], axis=1)
    if np.any(dists <= 1e-9):
        raise GeometryError("emitter coincides with a microphone")
    delays = dists / scene.speed_of_sound * fs
    channels = np.stack(
        [fractional_delay(emitted, d) / r for d, r in zip(delays, dists)]
    ) * RECORDING_GAIN
    if np.isfinite(scene.snr_db):
        rng = derive_rng(*as_seed_sequence(scene.seed), 0x5EED)
        power = np.mean(channels**2, axis=1, keepdims=True)
        sigma = np.sqrt(power / 10 ** (scene.snr_db / 10))
        noise = rng.standard_normal(channels.shape)
        if scene.correlated_noise:
            noise = np.sqrt(0.5) * (noise + rng.standard_normal(channels.shape[1])[None, :])
        channels = channels + sigma * noise
    full_scale = 2 ** (geometry.bit_depth - 1)
    channels = np.clip(channels, -1.0, (full_scale - 1) / full_scale)
    return make_clip(channels, fs, geometry.bit_depth, label=scene.label, device_id=geometry.name)


def reference_class_split(total: int) -> Tuple[int, int]:
    """Scale the reference core-set ratio of genuine to replayed clips to ``total``."""
    if total < 2:
        raise InputError("need at least one clip per class")
    genuine = int(round(total * CORE_GENUINE / (CORE_GENUINE + CORE_REPLAYED)))
    genuine = min(max(genuine, 1), total - 1)
    return genuine, total - genuine


def _on_circle(rng: np.random.Generator, azimuth_deg: Tuple[float, float], distance: Tuple[float, float], height: Tuple[float, float]) -> np.ndarray:
    azimuth = np.deg2rad(rng.uniform(*azimuth_deg))
    r = rng.uniform(*distance)
    return np.array([r * np.sin(azimuth), r * np.cos(azimuth), rng.uniform(*height)])


def sample_scene(rng: np.random.Generator, label: Label, seed: SeedLike, sample_rate: int) -> SceneSpec:
    """Talkers stand in front of the array; loudspeakers sit low and off to the side or back."""
    talker = _on_circle(rng, (-70.0, 70.0), (0.8, 2.0), (0.2, 0.5))
    speaker = _on_circle(rng, (110.0, 250.0), (0.4, 1.2), (-0.1, 0.1))
    return SceneSpec(
        source_position=talker,
        loudspeaker_position=speaker,
        label=label,
        snr_db=float(rng.uniform(20.0, 40.0)),
        coloration=loudspeaker_coloration(sample_rate),
        seed=seed,
    )


class _ClipJob(NamedTuple):
    index: int
    label: Label
    speaker: int
    split: str
    path: Path


def _speaker_splits(n_speakers: int, seed: int, fractions: Tuple[float, float, float]) -> List[str]:
    order = derive_rng(seed, 0x5B1).permutation(n_speakers)
    n_dev = max(1, int(round(fractions[1] * n_speakers)))
    n_eval = max(1, int(round(fractions[2] * n_speakers)))
    n_train = n_speakers - n_dev - n_eval
    if n_train < 1:
        raise InputError(f"{n_speakers} speakers cannot cover train/dev/eval")
    splits = [""] * n_speakers
    for rank, speaker in enumerate(order):
        splits[speaker] = (
            SPLIT_TRAIN if rank < n_train else SPLIT_DEV if rank < n_train + n_dev else SPLIT_EVAL
        )
    return splits


def generate_corpus(
    out_dir: Path,
    n_genuine: int,
    n_replayed: int,
    geometry: ArrayGeometry,
    seed: int,
    *,
    duration_s: float = 2.0,
    n_speakers: Optional[int] = None,
    split_fractions: Tuple[float, float, float] = (0.7, 0.1, 0.2),
    workers: int = 1,
) -> List[ManifestRecord]:
    """
    Render clips as WAV files under ``out_dir/clips`` and write
    ``out_dir/manifest.jsonl``. Speakers are assigned to exactly one split.
    """
    jobs, records = _plan(out_dir, n_genuine, n_replayed, geometry, seed, n_speakers, split_fractions)
    run_ordered(lambda job: _render(job, geometry, seed, duration_s), jobs, workers=workers)
    write_manifest(Path(out_dir) / MANIFEST_NAME, records)
    _LOGGER.info("Wrote %d clips for preset %s to %s", len(records), geometry.name, out_dir)
    return records


async def async_generate_corpus(
    out_dir: Path,
    n_genuine: int,
    n_replayed: int,
    geometry: ArrayGeometry,
    seed: int,
    *,
    duration_s: float = 2.0,
    n_speakers: Optional[int] = None,
    split_fractions: Tuple[float, float, float] = (0.7, 0.1, 0.2),
    workers: int = 1,
) -> List[ManifestRecord]:
    jobs, records = _plan(out_dir, n_genuine, n_replayed, geometry, seed, n_speakers, split_fractions)
    await gather_ordered(lambda job: _render(job, geometry, seed, duration_s), jobs, workers=workers)
    write_manifest(Path(out_dir) / MANIFEST_NAME, records)
    return records


def _plan(out_dir, n_genuine, n_replayed, geometry, seed, n_speakers, split_fractions):
    if n_genuine < 1 or n_replayed < 1:
        raise InputError("need at least one genuine and one replayed clip")
    total = n_genuine + n_replayed
    speakers = n_speakers or max(3, min(30, total // 10))
    splits = _speaker_splits(speakers, seed, split_fractions)
    clip_dir = Path(out_dir) / "clips"
    clip_dir.mkdir(parents=True, exist_ok=True)
    jobs: List[_ClipJob] = []
    records: List[ManifestRecord] = []
    for index in range(total):
        genuine = index < n_genuine
        label: Label = LABEL_GENUINE if genuine else LABEL_REPLAYED
        speaker = (index if genuine else index - n_genuine) % speakers
        name = f"{label}_{index:05d}.wav"
        jobs.append(_ClipJob(index, label, speaker, splits[speaker], clip_dir / name))
        records.append(
            ManifestRecord(
                path=f"clips/{name}",
                label=label,
                device=geometry.name,
                speaker=f"spk{speaker:03d}",
                environment="synthetic",
                split=splits[speaker],  # type: ignore
            )
        )
    return jobs, records


def _render(job: _ClipJob, geometry: ArrayGeometry, seed: int, duration_s: float):
    fs = geometry.sample_rate
    rng = derive_rng(seed, job.index)
    base_f0 = derive_rng(seed, 0x5EA4, job.speaker).uniform(90.0, 250.0)
    source = synth_source(duration_s, (seed, job.speaker, job.index), fs, base_f0=base_f0)
    scene = sample_scene(rng, job.label, (seed, job.index), fs)
    clip = propagate(source, geometry, scene)
    write_wav(job.path, clip)
    _LOGGER.debug("Rendered %s (speaker %d, %s)", job.path.name, job.speaker, job.split)
