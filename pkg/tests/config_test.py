import logging
from pathlib import Path

import pytest
import voluptuous as vol

from mcreplay.config_flow import (
    DataConfig,
    ExperimentConfig,
    RecipeConfig,
    float_list,
    int_list,
    load_recipe,
    order_list,
    parse_override,
    position_list,
)
from mcreplay.detector.backbone import ModelConfig
from mcreplay.detector.errors import ConfigurationError
from mcreplay.detector.trainer import TrainConfig

_LOGGER = logging.getLogger(__name__)

RECIPES = Path(__file__).resolve().parent.parent / "recipes"


def write_recipe(tmp_path, text: str) -> Path:
    path = tmp_path / "recipe.ini"
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults():
    recipe = load_recipe()
    assert recipe == RecipeConfig()
    assert recipe.data == DataConfig()
    assert recipe.experiment == ExperimentConfig()


def test_recipe_file(tmp_path):
    path = write_recipe(
        tmp_path,
        "[data]\npreset = D3\nn_clips = 40\n\n[model]\nfilters = 16\nchannel_order = 1-4-2\n"
        "\n[train]\nlr_init = 3e-4\nseeds = 4, 5\n",
    )
    recipe = load_recipe(path)
    assert recipe.data.preset == "d3"
    assert recipe.data.n_clips == 40
    assert recipe.model.filters == 16
    assert recipe.model.channel_order == (1, 4, 2)
    assert recipe.train.lr_init == pytest.approx(3e-4)
    assert recipe.train.seeds == (4, 5)
    assert recipe.model.hidden == ModelConfig().hidden


def test_overrides_then_flags(tmp_path):
    path = write_recipe(tmp_path, "[model]\nfilters = 16\nhidden = 32\n")
    recipe = load_recipe(path, ["filters=32", "mode=single"], {"filters": 8, "preset": None})
    assert recipe.model.filters == 8
    assert recipe.model.hidden == 32
    assert recipe.model.mode == "single"
    assert recipe.data.preset == DataConfig().preset


def test_experiment_lists():
    recipe = load_recipe(
        None,
        ["channel_orders=1-4-2-3; 1-2-3-4", "segment_positions=beginning,Middle", "filter_sweep=8,16"],
    )
    assert recipe.experiment.channel_orders == ((1, 4, 2, 3), (1, 2, 3, 4))
    assert recipe.experiment.segment_positions == ("beginning", "middle")
    assert recipe.experiment.filter_sweep == (8, 16)


@pytest.mark.parametrize(
    "override",
    [
        "mode=stereo",
        "n_clips=1",
        "dev_fraction=1.0",
        "filters=0",
        "seeds=",
        "segment_s=-1",
        "segment_positions=end",
        "preset=d9",
        "batch_size=many",
    ],
)
def test_invalid_values(override):
    with pytest.raises(ConfigurationError):
        load_recipe(None, [override])


def test_unknown_keys():
    with pytest.raises(ConfigurationError):
        load_recipe(None, ["nope=1"])
    with pytest.raises(ConfigurationError):
        load_recipe(None, ["filters"])
    with pytest.raises(ConfigurationError):
        load_recipe(None, (), {"nope": 1})


def test_bad_recipe_files(tmp_path):
    with pytest.raises(ConfigurationError):
        load_recipe(write_recipe(tmp_path, "[optimizer]\nlr = 1\n"))
    with pytest.raises(ConfigurationError):
        load_recipe(write_recipe(tmp_path, "[data]\nfilters = 16\n"))
    with pytest.raises(ConfigurationError):
        load_recipe(write_recipe(tmp_path, "filters = 16\n"))


def test_missing_recipe_file_is_a_configuration_error(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read recipe"):
        load_recipe(tmp_path / "missing.ini")
    with pytest.raises(ConfigurationError):
        load_recipe(tmp_path)


def test_parse_override():
    assert parse_override(" Filters = 16 ") == ("filters", "16")


def test_list_parsers():
    assert int_list("1, 4,2") == (1, 4, 2)
    assert int_list("1-4-2-3") == (1, 4, 2, 3)
    assert int_list([3, 1]) == (3, 1)
    assert float_list("0.5, 1.0 1.5") == (0.5, 1.0, 1.5)
    assert position_list("MIDDLE") == ("middle",)
    assert order_list("1-2;2-1;") == ((1, 2), (2, 1))
    with pytest.raises(vol.Invalid):
        int_list("1,x")
    with pytest.raises(vol.Invalid):
        float_list("fast")
    with pytest.raises(vol.Invalid):
        position_list("end")


@pytest.mark.parametrize("path", sorted(RECIPES.glob("*.ini")), ids=lambda p: p.stem)
def test_shipped_recipes_load(path):
    recipe = load_recipe(path)
    assert recipe.train.seeds


def test_reference_recipe_matches_defaults():
    recipe = load_recipe(RECIPES / "reference.ini")
    assert recipe.model == ModelConfig()
    assert recipe.train == TrainConfig()
    assert recipe.data.preset == "d1"


def test_config_hash():
    assert load_recipe().config_hash == RecipeConfig().config_hash
    assert len(RecipeConfig().config_hash) == 64
    assert load_recipe(None, ["filters=32"]).config_hash != RecipeConfig().config_hash
