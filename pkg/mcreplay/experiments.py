"""
Experiment recipes built on ``train``/``multi_seed``: channel-count ablation,
filter-count sweep, input-segment ablation, model-mode comparison and a
per-channel single-model sweep. Every configuration in a report uses the
same seeds, so rows are paired.
"""
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .const import MODE_DUMMY, MODE_MULTICHANNEL, MODE_SINGLE
from .detector.audio import ManifestRecord, load_record
from .detector.backbone import ModelConfig, architecture_hash, parameter_count_of, resolve_architecture
from .detector.errors import ConfigurationError, DimensionError, InputError
from .detector.evaluation import ExperimentReport, ReportRow, relative_improvement
from .detector.trainer import SeedSummary, TrainConfig, multi_seed
from .detector.wav import PathLike

_LOGGER = logging.getLogger(__name__)


def _run_dir(out_dir: Optional[PathLike], name: str) -> Optional[Path]:
    return None if out_dir is None else Path(out_dir) / name


def _row(name: str, summary: SeedSummary, base: Optional[float] = None, **extra) -> ReportRow:
    rel = None if base is None else relative_improvement(base, summary.mean)
    extra.setdefault("parameters", summary.parameter_count)
    extra.setdefault("architecture", summary.architecture)
    return ReportRow(name, summary.eers, summary.seeds, rel, extra)


def _corpus_shape(records: Sequence[ManifestRecord]) -> Tuple[int, int]:
    if not records:
        raise InputError("empty manifest")
    clip = load_record(records[0])
    return clip.sample_rate, clip.channels


def validate_order(order: Sequence[int], channels: int) -> Tuple[int, ...]:
    order = tuple(order)
    if not order:
        raise InputError("channel order is empty")
    if len(set(order)) != len(order):
        raise InputError(f"channel order {order} repeats a channel")
    bad = [i for i in order if not 1 <= i <= channels]
    if bad:
        raise InputError(f"channel order {order} names channels outside 1..{channels}")
    return order


def channel_ablation(
    records: Sequence[ManifestRecord],
    order: Sequence[int],
    model: ModelConfig,
    train_config: TrainConfig,
    out_dir: Optional[PathLike] = None,
) -> ExperimentReport:
    """One multichannel model per prefix of ``order``; prefix 1 is the single-channel setup."""
    _, channels = _corpus_shape(records)
    order = validate_order(order, channels)
    label = "-".join(str(i) for i in order)
    report = ExperimentReport(f"channel ablation {label}", {"order": label})
    base = None
    for count in range(1, len(order) + 1):
        prefix = order[:count]
        config = model._replace(mode=MODE_MULTICHANNEL, channel_order=prefix)
        summary = multi_seed(records, config, train_config, out_dir=_run_dir(out_dir, f"channels_{count}"))
        base = summary.mean if base is None else base
        report.add(
            _row(
                f"{count}ch ({'-'.join(map(str, prefix))})",
                summary,
                None if count == 1 else base,
                channels=count,
            )
        )
    return report


def filter_sweep(
    records: Sequence[ManifestRecord],
    filters: Sequence[int],
    model: ModelConfig,
    train_config: TrainConfig,
    out_dir: Optional[PathLike] = None,
) -> ExperimentReport:
    """One run per filter count, rows sorted by P. P below the frequency kernel width is rejected up front."""
    values = sorted(set(int(p) for p in filters))
    if not values:
        raise ConfigurationError("filter sweep is empty")
    too_small = [p for p in values if p < model.freq_width]
    if too_small:
        raise ConfigurationError(
            f"filter counts {too_small} are below the frequency kernel width {model.freq_width}"
        )
    report = ExperimentReport("filter sweep", {"filters": values})
    for p in values:
        summary = multi_seed(
            records, model._replace(filters=p), train_config, out_dir=_run_dir(out_dir, f"filters_{p}")
        )
        report.add(_row(f"P={p}", summary, filters=p))
    return report


def segment_ablation(
    records: Sequence[ManifestRecord],
    lengths: Sequence[float],
    positions: Sequence[str],
    model: ModelConfig,
    train_config: TrainConfig,
    out_dir: Optional[PathLike] = None,
) -> ExperimentReport:
    """
    Single-channel and multichannel EER for every (length, position) cell.

    Both models of a cell share seeds, and the multichannel row carries its
    relative improvement over the single-channel row of the same cell.
    """
    if any(length <= 0 for length in lengths):
        raise InputError(f"segment lengths must be positive, got {list(lengths)}")
    modes = (MODE_SINGLE, MODE_MULTICHANNEL)
    report = ExperimentReport(
        "segment ablation",
        {"lengths": list(lengths), "positions": list(positions), "modes": list(modes)},
    )
    for position in positions:
        for length in lengths:
            cell = f"{position}_{length:g}s"
            base = None
            for mode in modes:
                summary = multi_seed(
                    records,
                    model._replace(segment_s=float(length), position=position, mode=mode),
                    train_config,
                    out_dir=_run_dir(out_dir, f"{cell}/{mode}"),
                )
                report.add(
                    _row(
                        f"{length:g}s {position} {mode}",
                        summary,
                        base,
                        segment_s=length,
                        position=position,
                        mode=mode,
                    )
                )
                base = summary.mean if base is None else base
    return report


def mode_parameter_counts(records: Sequence[ManifestRecord], model: ModelConfig) -> dict:
    """Parameter counts of the three model modes on this corpus, with their consistency checked."""
    sample_rate, channels = _corpus_shape(records)
    counts = {}
    for mode in (MODE_SINGLE, MODE_DUMMY, MODE_MULTICHANNEL):
        arch = resolve_architecture(model._replace(mode=mode), sample_rate, channels)
        counts[mode] = parameter_count_of(arch)
    arch = resolve_architecture(model._replace(mode=MODE_MULTICHANNEL), sample_rate, channels)
    if counts[MODE_DUMMY] != counts[MODE_MULTICHANNEL]:
        raise DimensionError(f"dummy and multichannel models differ in size: {counts}")
    front = (arch.channels - 1) * arch.filters * arch.filter_length
    if counts[MODE_MULTICHANNEL] - counts[MODE_SINGLE] != front:
        raise DimensionError(f"single-channel model is not smaller by {front} coefficients: {counts}")
    return counts


def dummy_comparison(
    records: Sequence[ManifestRecord],
    model: ModelConfig,
    train_config: TrainConfig,
    out_dir: Optional[PathLike] = None,
) -> ExperimentReport:
    """Single, dummy-multichannel and multichannel models with identical seeds and settings."""
    counts = mode_parameter_counts(records, model)
    report = ExperimentReport("model comparison", {"parameters": counts})
    base = None
    for mode in (MODE_SINGLE, MODE_DUMMY, MODE_MULTICHANNEL):
        summary = multi_seed(records, model._replace(mode=mode), train_config, out_dir=_run_dir(out_dir, mode))
        base = summary.mean if base is None else base
        report.add(_row(mode, summary, None if mode == MODE_SINGLE else base))
    return report


def single_channel_sweep(
    records: Sequence[ManifestRecord],
    model: ModelConfig,
    train_config: TrainConfig,
    channels: Optional[Sequence[int]] = None,
    out_dir: Optional[PathLike] = None,
) -> ExperimentReport:
    """A single-channel model per microphone; the spread across channels goes in the metadata."""
    _, available = _corpus_shape(records)
    chosen = validate_order(channels or range(1, available + 1), available)
    report = ExperimentReport("single-channel sweep")
    means: List[float] = []
    for channel in chosen:
        summary = multi_seed(
            records,
            model._replace(mode=MODE_SINGLE, channel_order=(channel,)),
            train_config,
            out_dir=_run_dir(out_dir, f"channel_{channel}"),
        )
        means.append(summary.mean)
        report.add(_row(f"channel {channel}", summary, channel=channel))
    report.metadata["channel_eer_std"] = float(np.std(means))
    report.metadata["channel_eer_mean"] = float(np.mean(means))
    return report


def prefix_hash_matches_single(records: Sequence[ManifestRecord], model: ModelConfig, order: Sequence[int]) -> bool:
    """The 1-channel prefix model and a single-channel model share an architecture."""
    sample_rate, channels = _corpus_shape(records)
    prefix = resolve_architecture(
        model._replace(mode=MODE_MULTICHANNEL, channel_order=tuple(order)[:1]), sample_rate, channels
    )
    single = resolve_architecture(model._replace(mode=MODE_SINGLE), sample_rate, channels)
    return architecture_hash(prefix) == architecture_hash(single)
