"""
Scoring, equal error rate and experiment reports.

Scores are replay probabilities. A clip is accepted as genuine when its
score is below the threshold, so at threshold t

    FAR(t) = fraction of replayed clips with score <  t
    FRR(t) = fraction of genuine clips with score  >= t
"""
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..const import LABEL_GENUINE, LABEL_REPLAYED, LABELS, REPORT_RECORDS_NAME, REPORT_TEXT_NAME
from .audio import Label, ManifestRecord, load_record
from .backbone import ModelParams, clip_frames, score_frames
from .errors import InputError
from .utils import gather_ordered, run_ordered, worker_count
from .wav import PathLike

_LOGGER = logging.getLogger(__name__)


class ScoreSet(NamedTuple):
    scores: np.ndarray
    labels: Tuple[Label, ...]
    clip_ids: Tuple[str, ...] = ()
    metadata: Dict[str, Any] = {}

    @property
    def genuine(self) -> np.ndarray:
        return self.scores[np.array([label == LABEL_GENUINE for label in self.labels], dtype=bool)]

    @property
    def replayed(self) -> np.ndarray:
        return self.scores[np.array([label == LABEL_REPLAYED for label in self.labels], dtype=bool)]


def make_scoreset(
    scores: Sequence[float],
    labels: Sequence[Label],
    clip_ids: Sequence[str] = (),
    **metadata,
) -> ScoreSet:
    values = np.asarray(scores, dtype=np.float64)
    if values.ndim != 1 or len(values) != len(labels):
        raise InputError(f"{len(values)} scores for {len(labels)} labels")
    if clip_ids and len(clip_ids) != len(labels):
        raise InputError(f"{len(clip_ids)} clip ids for {len(labels)} labels")
    bad = [label for label in labels if label not in LABELS]
    if bad:
        raise InputError(f"unknown labels {sorted(set(bad))}")
    if not np.all(np.isfinite(values)):
        raise InputError("non-finite score")
    return ScoreSet(values, tuple(labels), tuple(clip_ids), dict(metadata))


def _operating_counts(scores: ScoreSet) -> Tuple[np.ndarray, np.ndarray, int, int]:
    genuine = np.sort(scores.genuine)
    replayed = np.sort(scores.replayed)
    if len(genuine) == 0 or len(replayed) == 0:
        raise InputError("EER needs at least one genuine and one replayed score")
    thresholds = np.append(np.unique(scores.scores), np.inf)
    false_accepts = np.searchsorted(replayed, thresholds, side="left")
    false_rejects = len(genuine) - np.searchsorted(genuine, thresholds, side="left")
    return false_accepts, false_rejects, len(replayed), len(genuine)


def det_points(scores: ScoreSet) -> List[Tuple[float, float]]:
    """(FAR, FRR) at every distinct score and at +inf, in increasing threshold order."""
    false_accepts, false_rejects, n_replayed, n_genuine = _operating_counts(scores)
    return list(zip((false_accepts / n_replayed).tolist(), (false_rejects / n_genuine).tolist()))


def eer(scores: ScoreSet) -> float:
    """
    Equal error rate over the threshold sweep.

    Thresholds are the distinct scores plus +inf. FAR - FRR never decreases
    along the sweep; where it is exactly zero the rate is FAR there,
    otherwise it is interpolated linearly between the last point below
    zero and the first point above. Only score ranks matter.

    A fully inverted ranking (every replayed score below every genuine
    score) meets FAR = FRR only at (1, 1). It has no crossing between the
    sweep's end points (0, 1) and (1, 0), and interpolating along that
    chord gives 0.5, which is what is returned.
    """
    false_accepts, false_rejects, n_replayed, n_genuine = _operating_counts(scores)
    # sign of FAR - FRR in exact integer arithmetic
    gap = false_accepts * n_genuine - false_rejects * n_replayed
    far = false_accepts / n_replayed
    frr = false_rejects / n_genuine
    exact = np.flatnonzero(gap == 0)
    if len(exact):
        at = exact[0]
        if false_accepts[at] == n_replayed and false_rejects[at] == n_genuine:
            return 0.5
        return float(far[at])
    # the sweep starts at (0, 1) and ends at (1, 0)
    above = int(np.argmax(gap > 0))
    below = above - 1
    low_gap = far[below] - frr[below]
    high_gap = far[above] - frr[above]
    alpha = -low_gap / (high_gap - low_gap)
    return float(far[below] + alpha * (far[above] - far[below]))


# -- scoring -----------------------------------------------------------------


def _clip_id(record: ManifestRecord) -> str:
    return Path(record["path"]).name


def _load_frames(record: ManifestRecord, params: ModelParams) -> np.ndarray:
    return clip_frames(load_record(record), params.arch)


def evaluate(
    params: ModelParams,
    records: Sequence[ManifestRecord],
    split: Optional[str] = None,
    batch: int = 32,
) -> ScoreSet:
    """Score every clip of ``split`` (all records when None)."""
    chosen = [r for r in records if split is None or r["split"] == split]
    if not chosen:
        raise InputError(f"no clips in split {split!r}")
    workers = worker_count()
    scores: List[float] = []
    for start in range(0, len(chosen), batch):
        chunk = chosen[start : start + batch]
        frames = run_ordered(lambda r: _load_frames(r, params), chunk, workers=workers)
        scores.extend(float(s) for s in score_frames(np.stack(frames), params))
    return make_scoreset(
        scores,
        [r["label"] for r in chosen],
        [_clip_id(r) for r in chosen],
        split=split or "all",
        mode=params.arch.mode,
        channel_order=list(params.arch.channel_order),
        filters=params.arch.filters,
        segment_s=params.arch.segment_s,
    )


async def async_evaluate(
    params: ModelParams,
    records: Sequence[ManifestRecord],
    split: Optional[str] = None,
    workers: int = 1,
) -> ScoreSet:
    chosen = [r for r in records if split is None or r["split"] == split]
    if not chosen:
        raise InputError(f"no clips in split {split!r}")
    frames = await gather_ordered(lambda r: _load_frames(r, params), chosen, workers=workers)
    scores = score_frames(np.stack(frames), params)
    return make_scoreset(
        scores.tolist(), [r["label"] for r in chosen], [_clip_id(r) for r in chosen], split=split or "all"
    )


def write_scores(path: PathLike, scores: ScoreSet):
    """One JSON object per line: clip_id, score, label."""
    ids = scores.clip_ids or tuple(str(i) for i in range(len(scores.labels)))
    lines = [
        json.dumps({"clip_id": clip_id, "score": float(value), "label": label})
        for clip_id, value, label in zip(ids, scores.scores, scores.labels)
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scores(path: PathLike) -> ScoreSet:
    rows = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    return make_scoreset(
        [row["score"] for row in rows], [row["label"] for row in rows], [row["clip_id"] for row in rows]
    )


# -- reports -----------------------------------------------------------------


def relative_improvement(base: float, new: float) -> float:
    """(base - new) / base; positive means ``new`` is better. NaN for a zero baseline."""
    if base == 0:
        return math.nan
    return (base - new) / base


class ReportRow(NamedTuple):
    name: str
    eers: Tuple[float, ...]
    seeds: Tuple[int, ...]
    relative_improvement: Optional[float] = None
    extra: Dict[str, Any] = {}

    @property
    def mean(self) -> float:
        return float(np.mean(self.eers))

    @property
    def std(self) -> float:
        return float(np.std(self.eers))


class ExperimentReport:
    """Rows of per-configuration EERs, rendered as a text table and JSON lines."""

    def __init__(self, title: str, metadata: Optional[Dict[str, Any]] = None) -> None:
        self.title = title
        self.metadata: Dict[str, Any] = dict(metadata or {})
        self.rows: List[ReportRow] = []

    def add(self, row: ReportRow) -> ReportRow:
        self.rows.append(row)
        _LOGGER.info("%s | %s: EER %.4f +/- %.4f", self.title, row.name, row.mean, row.std)
        return row

    def row(self, name: str) -> ReportRow:
        for row in self.rows:
            if row.name == name:
                return row
        raise KeyError(name)

    def records(self) -> List[Dict[str, Any]]:
        out = []
        for row in self.rows:
            record = {
                "experiment": self.title,
                "config": row.name,
                "eer_mean": row.mean,
                "eer_std": row.std,
                "eers": list(row.eers),
                "seeds": list(row.seeds),
                "relative_improvement": row.relative_improvement,
            }
            record.update(row.extra)
            out.append(record)
        return out

    def to_text(self) -> str:
        header = f"{'config':<24} {'EER %':>8} {'std %':>8} {'rel. impr.':>10}  seeds"
        lines = [self.title, "=" * len(header), header, "-" * len(header)]
        for row in self.rows:
            rel = "" if row.relative_improvement is None else f"{100 * row.relative_improvement:+.1f}%"
            lines.append(
                f"{row.name:<24} {100 * row.mean:>8.2f} {100 * row.std:>8.2f} {rel:>10}  "
                + ",".join(str(s) for s in row.seeds)
            )
        for key in sorted(self.metadata):
            lines.append(f"# {key}: {self.metadata[key]}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: PathLike):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / REPORT_TEXT_NAME).write_text(self.to_text(), encoding="utf-8")
        lines = [json.dumps(record, sort_keys=True) for record in self.records()]
        (out / REPORT_RECORDS_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
