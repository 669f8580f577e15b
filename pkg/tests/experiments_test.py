import logging
from pathlib import Path

import numpy as np
import pytest

from mcreplay.config_flow import load_recipe
from mcreplay.detector.audio import load_manifest
from mcreplay.detector.backbone import ModelConfig
from mcreplay.detector.errors import ConfigurationError, InputError
from mcreplay.detector.evaluation import relative_improvement
from mcreplay.detector.synth import furthest_first_order, generate_corpus, preset
from mcreplay.detector.trainer import TrainConfig
from mcreplay.experiments import (
    channel_ablation,
    dummy_comparison,
    filter_sweep,
    mode_parameter_counts,
    prefix_hash_matches_single,
    segment_ablation,
    single_channel_sweep,
    validate_order,
)

_LOGGER = logging.getLogger(__name__)

RECIPES = Path(__file__).resolve().parent.parent / "recipes"

TINY = ModelConfig(
    filters=8,
    freq_maps=2,
    freq_width=4,
    freq_pool=2,
    embed_dim=3,
    hidden=3,
    layers=1,
    segment_s=0.06,
)

QUICK = TrainConfig(
    batch_size=4,
    lr_init=1e-3,
    warmup_epochs=1,
    warmup_multiplier=1.0,
    max_epochs=1,
    weight_decay=0.0,
    seeds=(1,),
)


@pytest.fixture(name="corpus", scope="module")
def corpus_fixture(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    generate_corpus(root, 8, 8, preset("d1"), seed=5, duration_s=0.1)
    return load_manifest(root / "manifest.jsonl")


def test_validate_order():
    assert validate_order([1, 4, 2, 3], 4) == (1, 4, 2, 3)
    with pytest.raises(InputError):
        validate_order([], 4)
    with pytest.raises(InputError):
        validate_order([1, 1], 4)
    with pytest.raises(InputError):
        validate_order([1, 5], 4)
    with pytest.raises(InputError):
        validate_order([0], 4)


def test_mode_parameter_counts(corpus):
    counts = mode_parameter_counts(corpus, TINY)
    assert counts["dummy-multichannel"] == counts["multichannel"]
    assert counts["multichannel"] - counts["single"] == 8 * 630


def test_prefix_model_is_the_single_model(corpus):
    assert prefix_hash_matches_single(corpus, TINY, (2, 1))


def test_filter_sweep_rejects_narrow_filter_counts(corpus):
    with pytest.raises(ConfigurationError):
        filter_sweep(corpus, [2, 8], TINY, QUICK)
    with pytest.raises(ConfigurationError):
        filter_sweep(corpus, [], TINY, QUICK)


def test_segment_ablation_rejects_zero_length(corpus):
    with pytest.raises(InputError):
        segment_ablation(corpus, [0.0], ["beginning"], TINY, QUICK)


def test_channel_ablation(corpus, tmp_path):
    with pytest.raises(InputError):
        channel_ablation(corpus, (3,), TINY, QUICK)
    report = channel_ablation(corpus, (2, 1), TINY, QUICK, tmp_path)
    assert [row.name for row in report.rows] == ["1ch (2)", "2ch (2-1)"]
    assert report.metadata == {"order": "2-1"}
    first, second = report.rows
    assert first.relative_improvement is None
    assert second.extra["channels"] == 2
    assert first.seeds == second.seeds == (1,)
    assert second.extra["parameters"] > first.extra["parameters"]
    assert (tmp_path / "channels_2" / "seed_1" / "model.mcrp").exists()


def test_filter_sweep_rows(corpus):
    report = filter_sweep(corpus, [16, 8, 8], TINY, QUICK)
    assert [row.name for row in report.rows] == ["P=8", "P=16"]
    assert [row.extra["filters"] for row in report.rows] == [8, 16]


def test_dummy_comparison(corpus):
    report = dummy_comparison(corpus, TINY, QUICK)
    assert [row.name for row in report.rows] == ["single", "dummy-multichannel", "multichannel"]
    counts = report.metadata["parameters"]
    for row in report.rows:
        assert row.extra["parameters"] == counts[row.name]
        assert 0.0 <= row.mean <= 1.0
    assert report.rows[0].relative_improvement is None


def test_single_channel_sweep(corpus):
    report = single_channel_sweep(corpus, TINY, QUICK)
    assert [row.name for row in report.rows] == ["channel 1", "channel 2"]
    means = [row.mean for row in report.rows]
    assert report.metadata["channel_eer_std"] == pytest.approx(np.std(means))
    assert report.metadata["channel_eer_mean"] == pytest.approx(np.mean(means))


def test_segment_ablation_pairs_single_and_multichannel(corpus, tmp_path):
    report = segment_ablation(corpus, [0.06], ["beginning", "middle"], TINY, QUICK, tmp_path)
    assert [row.name for row in report.rows] == [
        "0.06s beginning single",
        "0.06s beginning multichannel",
        "0.06s middle single",
        "0.06s middle multichannel",
    ]
    assert report.metadata["modes"] == ["single", "multichannel"]
    for single, multi in zip(report.rows[::2], report.rows[1::2]):
        assert single.seeds == multi.seeds == (1,)
        assert (single.extra["position"], single.extra["segment_s"]) == (multi.extra["position"], multi.extra["segment_s"])
        assert single.relative_improvement is None
        assert multi.relative_improvement == pytest.approx(relative_improvement(single.mean, multi.mean), nan_ok=True)
        assert multi.extra["parameters"] > single.extra["parameters"]
    assert (tmp_path / "middle_0.06s" / "multichannel" / "seed_1" / "model.mcrp").exists()


@pytest.fixture(name="desk_corpus", scope="module")
def desk_corpus_fixture(tmp_path_factory):
    # 1250 clips leave about 875 train and 250 eval clips after the 70/10/20 split
    data = load_recipe(RECIPES / "desk.ini", ["n_clips=1250"]).data
    root = tmp_path_factory.mktemp("desk")
    generate_corpus(
        root,
        data.n_clips // 2,
        data.n_clips - data.n_clips // 2,
        preset(data.preset),
        data.data_seed,
        duration_s=data.duration,
    )
    return load_manifest(root / "manifest.jsonl")


@pytest.mark.slow
def test_desk_scale_mode_ordering(desk_corpus):
    recipe = load_recipe(RECIPES / "desk.ini")
    assert len(recipe.train.seeds) == 3
    report = dummy_comparison(desk_corpus, recipe.model, recipe.train)
    single, dummy, multi = (report.row(mode).mean for mode in ("single", "dummy-multichannel", "multichannel"))
    _LOGGER.info("desk EER single %.4f dummy %.4f multichannel %.4f", single, dummy, multi)
    assert multi < dummy
    assert multi < single
    assert multi <= 0.25


@pytest.mark.slow
def test_desk_scale_channel_count_trend(desk_corpus):
    recipe = load_recipe(RECIPES / "ablate_channels_d2.ini")
    order = recipe.experiment.channel_orders[0]
    assert order == tuple(furthest_first_order(preset("d2")))
    report = channel_ablation(desk_corpus, order, recipe.model, recipe.train)
    one, four = report.rows[0], report.rows[-1]
    assert (one.extra["channels"], four.extra["channels"]) == (1, 4)
    assert four.mean <= one.mean
