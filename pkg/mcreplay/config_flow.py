"""
Experiment recipes: INI files with [data], [model], [train] and [experiment]
sections, validated with voluptuous into typed configs. Keys are unique
across sections, so a flat ``key=value`` override finds its section.
"""
import configparser
import logging
from pathlib import Path
from typing import Any, Dict, NamedTuple, Optional, Sequence, Tuple

import voluptuous as vol

from .const import (
    DEFAULT_FILTER_SWEEP,
    DEFAULT_SEGMENT_LENGTHS,
    MODES,
    POSITIONS,
    SECTION_DATA,
    SECTION_EXPERIMENT,
    SECTION_MODEL,
    SECTION_TRAIN,
    SECTIONS,
)
from .detector.backbone import ModelConfig
from .detector.errors import ConfigurationError
from .detector.synth import PRESETS
from .detector.trainer import TrainConfig
from .detector.utils import stable_hash

_LOGGER = logging.getLogger(__name__)


class DataConfig(NamedTuple):
    manifest: str = ""
    preset: str = "d2"
    n_clips: int = 200
    class_split: str = "balanced"
    duration: float = 2.0
    n_speakers: int = 0  # 0: derived from the clip count
    data_seed: int = 1
    workers: int = 1


class ExperimentConfig(NamedTuple):
    filter_sweep: Tuple[int, ...] = DEFAULT_FILTER_SWEEP
    segment_lengths: Tuple[float, ...] = DEFAULT_SEGMENT_LENGTHS
    segment_positions: Tuple[str, ...] = POSITIONS
    channel_orders: Tuple[Tuple[int, ...], ...] = ()
    grad_coords: int = 200
    grad_eps: float = 1e-5
    grad_tolerance: float = 1e-4


class RecipeConfig(NamedTuple):
    data: DataConfig = DataConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    experiment: ExperimentConfig = ExperimentConfig()

    def as_dict(self) -> Dict[str, Dict[str, Any]]:
        return {
            SECTION_DATA: self.data._asdict(),
            SECTION_MODEL: self.model._asdict(),
            SECTION_TRAIN: self.train._asdict(),
            SECTION_EXPERIMENT: self.experiment._asdict(),
        }

    @property
    def config_hash(self) -> str:
        return stable_hash(self.as_dict())


def _split(value: Any, seps: str = ",") -> Sequence[Any]:
    if isinstance(value, (list, tuple)):
        return value
    text = str(value).strip()
    for sep in seps[1:]:
        text = text.replace(sep, seps[0])
    return [part.strip() for part in text.split(seps[0]) if part.strip()]


def int_list(value: Any) -> Tuple[int, ...]:
    """'1,4,2,3' or '1-4-2-3' -> (1, 4, 2, 3)."""
    try:
        return tuple(int(v) for v in _split(value, ",- "))
    except ValueError as exc:
        raise vol.Invalid(f"expected a list of integers, got {value!r}") from exc


def float_list(value: Any) -> Tuple[float, ...]:
    try:
        return tuple(float(v) for v in _split(value, ", "))
    except ValueError as exc:
        raise vol.Invalid(f"expected a list of numbers, got {value!r}") from exc


def position_list(value: Any) -> Tuple[str, ...]:
    positions = tuple(str(v).lower() for v in _split(value, ", "))
    bad = [p for p in positions if p not in POSITIONS]
    if bad:
        raise vol.Invalid(f"unknown segment positions {bad}")
    return positions


def order_list(value: Any) -> Tuple[Tuple[int, ...], ...]:
    """'1-4-2-3; 1-2-3-4' -> ((1, 4, 2, 3), (1, 2, 3, 4))."""
    if isinstance(value, (list, tuple)):
        return tuple(int_list(v) for v in value)
    return tuple(int_list(part) for part in str(value).split(";") if part.strip())


def _positive(kind):
    return vol.All(vol.Coerce(kind), vol.Range(min=0, min_included=False))


def _at_least(minimum: int):
    return vol.All(vol.Coerce(int), vol.Range(min=minimum))


def _fields(defaults: NamedTuple, validators: Dict[str, Any]) -> vol.Schema:
    return vol.Schema(
        {vol.Optional(key, default=getattr(defaults, key)): validators[key] for key in defaults._fields}
    )


DATA_SCHEMA = _fields(
    DataConfig(),
    {
        "manifest": str,
        "preset": vol.All(str, vol.Lower, vol.In(sorted(PRESETS))),
        "n_clips": _at_least(2),
        "class_split": vol.All(str, vol.Lower, vol.In(["balanced", "reference"])),
        "duration": _positive(float),
        "n_speakers": _at_least(0),
        "data_seed": vol.Coerce(int),
        "workers": _at_least(1),
    },
)

MODEL_SCHEMA = _fields(
    ModelConfig(),
    {
        "mode": vol.All(str, vol.Lower, vol.In(MODES)),
        "filters": _at_least(1),
        "filter_length": _at_least(0),
        "freq_maps": _at_least(1),
        "freq_width": _at_least(1),
        "freq_pool": _at_least(1),
        "embed_dim": _at_least(1),
        "hidden": _at_least(1),
        "layers": _at_least(1),
        "channel_order": int_list,
        "segment_s": _positive(float),
        "position": vol.All(str, vol.Lower, vol.In(POSITIONS)),
    },
)

TRAIN_SCHEMA = _fields(
    TrainConfig(),
    {
        "batch_size": _at_least(1),
        "lr_init": _positive(float),
        "warmup_epochs": _at_least(0),
        "warmup_multiplier": _positive(float),
        "decay_interval": _at_least(1),
        "decay_factor": _positive(float),
        "max_epochs": _at_least(1),
        "weight_decay": vol.All(vol.Coerce(float), vol.Range(min=0)),
        "seeds": vol.All(int_list, vol.Length(min=1)),
        "patience": _at_least(1),
        "grad_clip": vol.All(vol.Coerce(float), vol.Range(min=0)),
        "dev_fraction": vol.All(vol.Coerce(float), vol.Range(min=0, max=1, min_included=False, max_included=False)),
    },
)

EXPERIMENT_SCHEMA = _fields(
    ExperimentConfig(),
    {
        "filter_sweep": vol.All(int_list, vol.Length(min=1)),
        "segment_lengths": vol.All(float_list, vol.Length(min=1)),
        "segment_positions": vol.All(position_list, vol.Length(min=1)),
        "channel_orders": order_list,
        "grad_coords": _at_least(1),
        "grad_eps": _positive(float),
        "grad_tolerance": _positive(float),
    },
)

SCHEMAS = {
    SECTION_DATA: (DATA_SCHEMA, DataConfig),
    SECTION_MODEL: (MODEL_SCHEMA, ModelConfig),
    SECTION_TRAIN: (TRAIN_SCHEMA, TrainConfig),
    SECTION_EXPERIMENT: (EXPERIMENT_SCHEMA, ExperimentConfig),
}

KEY_SECTION = {key: section for section, (_, kind) in SCHEMAS.items() for key in kind._fields}


def parse_override(text: str) -> Tuple[str, str]:
    key, sep, value = text.partition("=")
    key = key.strip().lower()
    if not sep or not key:
        raise ConfigurationError(f"override {text!r} is not key=value")
    if key not in KEY_SECTION:
        raise ConfigurationError(f"unknown config key {key!r}")
    return key, value.strip()


def load_recipe(
    path: Optional[Path] = None,
    overrides: Sequence[str] = (),
    flags: Optional[Dict[str, Any]] = None,
) -> RecipeConfig:
    """
    Read a recipe file, then apply ``overrides`` (``key=value`` strings) and
    ``flags`` (already-typed values from command-line options) in that order.
    """
    raw: Dict[str, Dict[str, Any]] = {section: {} for section in SECTIONS}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as handle:
                parser.read_file(handle)
        except OSError as exc:
            raise ConfigurationError(f"cannot read recipe {path}: {exc.strerror or exc}") from exc
        except configparser.Error as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
        for section in parser.sections():
            if section not in SCHEMAS:
                raise ConfigurationError(f"{path}: unknown section [{section}]")
            for key, value in parser.items(section):
                if KEY_SECTION.get(key) != section:
                    raise ConfigurationError(f"{path}: key {key!r} does not belong in [{section}]")
                raw[section][key] = value
    for text in overrides:
        key, value = parse_override(text)
        raw[KEY_SECTION[key]][key] = value
    for key, value in (flags or {}).items():
        if value is None:
            continue
        if key not in KEY_SECTION:
            raise ConfigurationError(f"unknown config key {key!r}")
        raw[KEY_SECTION[key]][key] = value

    parts = {}
    for section, (schema, kind) in SCHEMAS.items():
        try:
            parts[section] = kind(**schema(raw[section]))
        except vol.Invalid as exc:
            raise ConfigurationError(f"[{section}] {exc}") from exc
    recipe = RecipeConfig(parts[SECTION_DATA], parts[SECTION_MODEL], parts[SECTION_TRAIN], parts[SECTION_EXPERIMENT])
    _LOGGER.debug("Loaded recipe %s (hash %s)", path or "<defaults>", recipe.config_hash[:12])
    return recipe
