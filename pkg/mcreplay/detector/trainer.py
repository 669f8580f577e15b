"""
Weighted cross-entropy training with ADAM, a warm-up/step learning-rate
schedule and early stopping on dev EER.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..const import (
    CHECKPOINT_NAME,
    LABEL_GENUINE,
    LABEL_REPLAYED,
    SPLIT_DEV,
    SPLIT_EVAL,
    SPLIT_TRAIN,
    TRAINING_LOG_NAME,
)
from .audio import ManifestRecord, load_record, records_for, split_core
from .backbone import (
    CLASS_INDEX,
    ModelConfig,
    ModelParams,
    architecture_hash,
    clip_frames,
    forward_logits,
    init_params,
    resolve_architecture,
)
from .checkpoint import save_params
from .errors import InputError, NumericError
from .evaluation import eer, evaluate
from .tensor import FlatView, GradCheckReport, Graph, grad_check, softmax_cross_entropy
from .utils import derive_rng, run_ordered, worker_count
from .wav import PathLike

_LOGGER = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainConfig(NamedTuple):
    batch_size: int = 64
    lr_init: float = 1e-5
    warmup_epochs: int = 20
    warmup_multiplier: float = 10.0
    decay_interval: int = 20
    decay_factor: float = 0.5
    max_epochs: int = 100
    weight_decay: float = 1e-3
    seeds: Tuple[int, ...] = (1, 2, 3)
    patience: int = 10
    grad_clip: float = 5.0  # 0 disables
    dev_fraction: float = 0.1


class ClassWeights(NamedTuple):
    genuine: float
    replayed: float

    def for_targets(self, targets: np.ndarray) -> np.ndarray:
        return np.where(targets == CLASS_INDEX[LABEL_REPLAYED], self.replayed, self.genuine)


class AdamState:
    def __init__(self, size: int) -> None:
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0


class LogRecord(NamedTuple):
    epoch: int
    step: int
    loss: float
    lr: float
    dev_eer: float


class TrainResult(NamedTuple):
    params: ModelParams
    log: List[LogRecord]
    best_epoch: int
    best_dev_eer: float


def class_weights(n_genuine: int, n_replayed: int) -> ClassWeights:
    """Normalized reciprocal class counts: w_k = (1/n_k) / (1/n_g + 1/n_r)."""
    if n_genuine < 1 or n_replayed < 1:
        raise InputError(f"class counts must be >= 1, got {n_genuine}/{n_replayed}")
    inv_g, inv_r = 1.0 / n_genuine, 1.0 / n_replayed
    return ClassWeights(inv_g / (inv_g + inv_r), inv_r / (inv_g + inv_r))


def lr_at(epoch: int, config: TrainConfig) -> float:
    if epoch < 0:
        raise InputError(f"epoch must be >= 0, got {epoch}")
    if epoch < config.warmup_epochs:
        return config.lr_init * (1 + (config.warmup_multiplier - 1) * epoch / config.warmup_epochs)
    drops = (epoch - config.warmup_epochs) // config.decay_interval
    return config.lr_init * config.warmup_multiplier * config.decay_factor**drops


def adam_step(
    view: FlatView,
    grads: np.ndarray,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> np.ndarray:
    """One ADAM update with decoupled weight decay; returns the new flat parameters."""
    if grads.shape != (view.size,):
        raise InputError(f"gradient of shape {grads.shape} for {view.size} parameters")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient, step aborted")
    theta = view.values()
    state.t += 1
    state.m = ADAM_BETA1 * state.m + (1 - ADAM_BETA1) * grads
    state.v = ADAM_BETA2 * state.v + (1 - ADAM_BETA2) * grads * grads
    m_hat = state.m / (1 - ADAM_BETA1**state.t)
    v_hat = state.v / (1 - ADAM_BETA2**state.t)
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS) - lr * weight_decay * theta
    view.assign(theta)
    return theta


def clip_gradients(grads: np.ndarray, max_norm: float) -> np.ndarray:
    if max_norm <= 0:
        return grads
    norm = float(np.sqrt(np.dot(grads, grads)))
    if norm > max_norm:
        return grads * (max_norm / norm)
    return grads


def batch_loss(params: ModelParams, frames: np.ndarray, targets: np.ndarray, weights: ClassWeights):
    logits = forward_logits(frames, params)
    return softmax_cross_entropy(logits, targets, weights.for_targets(targets))


def train_step(
    params: ModelParams,
    state: AdamState,
    frames: np.ndarray,
    targets: np.ndarray,
    weights: ClassWeights,
    lr: float,
    config: TrainConfig,
) -> float:
    """Forward, backward, clip and update on one mini-batch; returns the batch loss."""
    view = params.flat_view()
    view.zero_grad()
    with Graph() as graph:
        loss = batch_loss(params, frames, targets, weights)
        graph.backward(loss)
    grads = clip_gradients(view.grads(), config.grad_clip)
    adam_step(view, grads, state, lr, config.weight_decay)
    return loss.item()


class ClipSource:
    """Loads model input for manifest records on demand."""

    def __init__(self, records: Sequence[ManifestRecord], params: ModelParams) -> None:
        self.records = list(records)
        self.arch = params.arch
        self.targets = np.array([CLASS_INDEX[r["label"]] for r in self.records], dtype=np.int64)

    def __len__(self):
        return len(self.records)

    def frames(self, indices: Sequence[int]) -> np.ndarray:
        loaded = run_ordered(
            lambda i: clip_frames(load_record(self.records[i]), self.arch),
            list(indices),
            workers=worker_count(),
        )
        return np.stack(loaded)


def _corpus_shape(records: Sequence[ManifestRecord]) -> Tuple[int, int]:
    clip = load_record(records[0])
    return clip.sample_rate, clip.channels


def build_params(records: Sequence[ManifestRecord], model: ModelConfig, seed: int) -> ModelParams:
    sample_rate, channels = _corpus_shape(records)
    return init_params(resolve_architecture(model, sample_rate, channels), (seed, 0xA11))


def _write_log(path: Path, log: Sequence[LogRecord]):
    lines = [json.dumps(record._asdict()) for record in log]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def train(
    records: Sequence[ManifestRecord],
    model: ModelConfig,
    config: TrainConfig,
    seed: int,
    out_dir: Optional[PathLike] = None,
) -> TrainResult:
    """
    Train on the train split, early-stop on dev EER and return the best
    checkpoint. A manifest without a dev split gets a seeded 90/10 split of
    its train clips.
    """
    records = split_core(records, config.dev_fraction, seed)
    train_records = records_for(records, SPLIT_TRAIN)
    dev_records = records_for(records, SPLIT_DEV)
    if not train_records or not dev_records:
        raise InputError("training needs non-empty train and dev splits")
    n_genuine = sum(r["label"] == LABEL_GENUINE for r in train_records)
    weights = class_weights(n_genuine, len(train_records) - n_genuine)
    params = build_params(train_records, model, seed)
    source = ClipSource(train_records, params)
    state = AdamState(params.parameter_count)
    _LOGGER.info(
        "Training %r on %d clips (dev %d), seed %d, weights %s",
        params, len(source), len(dev_records), seed, weights,
    )

    log: List[LogRecord] = []
    best_values = params.flat_view().values()
    best_eer, best_epoch, stale, step = float("inf"), -1, 0, 0
    for epoch in range(config.max_epochs):
        lr = lr_at(epoch, config)
        order = derive_rng(seed, 0x5F, epoch).permutation(len(source))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            loss = train_step(params, state, source.frames(batch), source.targets[batch], weights, lr, config)
            losses.append(loss)
            step += 1
            _LOGGER.debug("epoch %d step %d loss %.6f", epoch, step, loss)
        dev_eer = eer(evaluate(params, dev_records))
        record = LogRecord(epoch, step, float(np.mean(losses)), lr, dev_eer)
        log.append(record)
        _LOGGER.info("epoch %d: loss %.5f lr %.3g dev EER %.4f", epoch, record.loss, lr, dev_eer)
        if dev_eer < best_eer:
            best_eer, best_epoch, stale = dev_eer, epoch, 0
            best_values = params.flat_view().values()
        else:
            stale += 1
            if stale >= config.patience:
                _LOGGER.info("Early stop after epoch %d (best %d)", epoch, best_epoch)
                break

    params.flat_view().assign(best_values)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_log(out / TRAINING_LOG_NAME, log)
        save_params(out / CHECKPOINT_NAME, params)
    return TrainResult(params, log, best_epoch, best_eer)


class SeedSummary(NamedTuple):
    seeds: Tuple[int, ...]
    eers: Tuple[float, ...]
    parameter_count: int
    architecture: str

    @property
    def mean(self) -> float:
        return float(np.mean(self.eers))

    @property
    def std(self) -> float:
        return float(np.std(self.eers))

    def as_record(self, name: str) -> Dict[str, Any]:
        return {
            "config": name,
            "eer_mean": self.mean,
            "eer_std": self.std,
            "eers": list(self.eers),
            "seeds": list(self.seeds),
        }


def multi_seed(
    records: Sequence[ManifestRecord],
    model: ModelConfig,
    config: TrainConfig,
    seeds: Optional[Sequence[int]] = None,
    out_dir: Optional[PathLike] = None,
) -> SeedSummary:
    """Train once per seed and score each run on the eval split."""
    seeds = tuple(seeds if seeds is not None else config.seeds)
    if not seeds:
        raise InputError("need at least one seed")
    if not records_for(records, SPLIT_EVAL):
        raise InputError("manifest has no eval split")
    eers: List[float] = []
    result = None
    for seed in seeds:
        run_dir = None if out_dir is None else Path(out_dir) / f"seed_{seed}"
        result = train(records, model, config, seed, run_dir)
        eers.append(eer(evaluate(result.params, records, SPLIT_EVAL)))
        _LOGGER.info("seed %d: eval EER %.4f", seed, eers[-1])
    return SeedSummary(seeds, tuple(eers), result.params.parameter_count, architecture_hash(result.params))


def model_grad_check(
    params: ModelParams,
    frames: np.ndarray,
    targets: np.ndarray,
    weights: ClassWeights = ClassWeights(0.5, 0.5),
    *,
    coords: int = 200,
    eps: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-5,
) -> GradCheckReport:
    """
    Finite-difference check of the training loss over every parameter tensor.

    ``floor`` bounds the relative-error denominator from below so that
    rounding noise in the loss difference does not dominate coordinates
    with near-zero gradients. A backward pass that drops a gradient of
    magnitude g still reports an error of at least min(1, g / floor).
    """
    return grad_check(
        lambda: batch_loss(params, frames, targets, weights),
        params.flat_view(),
        eps,
        coords=coords,
        seed=seed,
        floor=floor,
    )
