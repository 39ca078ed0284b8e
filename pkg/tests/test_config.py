import dataclasses
from typing import Optional

import pytest
from hypothesis import given, strategies as st

from pcn.config import ConfigError, apply_overrides, from_items, parse_sections, format_sections, to_items
from pcn.datagen import DATA_PRESETS, DataConfig
from pcn.model import PRESETS, ModelConfig, preset
from pcn.training import TRAIN_PRESETS, TrainConfig


@dataclasses.dataclass
class _Demo:
    n: int = 1
    x: float = 0.5
    flag: bool = False
    name: str = "a"
    widths: list[int] = dataclasses.field(default_factory=lambda: [1, 2])
    schedule: Optional[list[tuple[int, float]]] = None


@pytest.mark.parametrize("obj", [DATA_PRESETS["full"], DATA_PRESETS["toy"], TRAIN_PRESETS["toy"],
                                 TrainConfig(alpha_schedule=[(0, 0.01), (10, 1.0)])]
                         + [preset(n) for n in PRESETS])
def test_round_trip(obj):
    assert from_items(type(obj), to_items(obj)) == obj


@given(st.integers(-10**6, 10**6), st.floats(allow_nan=False, allow_infinity=False), st.booleans(),
       st.lists(st.integers(0, 10**4), max_size=5))
def test_round_trip_property(n, x, flag, widths):
    d = _Demo(n, x, flag, "b", widths, [(0, x)])
    assert from_items(_Demo, to_items(d)) == d


def test_text_round_trip():
    sections = {"model": to_items(preset("toy")), "train": to_items(TRAIN_PRESETS["toy"])}
    assert parse_sections(format_sections(sections)) == sections


def test_unknown_key_names_it():
    with pytest.raises(ConfigError, match="'model.widht'"):
        from_items(ModelConfig, {"widht": "3"}, "model")


def test_bad_value_names_key():
    with pytest.raises(ConfigError, match="'train.epochs'"):
        from_items(TrainConfig, {"epochs": "many"}, "train")


def test_invalid_combination_is_config_error():
    with pytest.raises(ConfigError, match="bottleneck"):
        from_items(ModelConfig, {"bottleneck": "7"}, "model")


def test_none_and_bool_parsing():
    d = from_items(_Demo, {"flag": "yes", "schedule": "none"})
    assert d.flag is True and d.schedule is None
    with pytest.raises(ConfigError):
        from_items(_Demo, {"flag": "maybe"})


def test_overrides_apply_last():
    base = {"data": to_items(DataConfig())}
    out = apply_overrides(base, ["data.shapes=3", "data.shapes = 5", "train.lr=0.1"])
    assert out["data"]["shapes"] == "5" and out["train"] == {"lr": "0.1"}
    assert base["data"]["shapes"] == "10"
    with pytest.raises(ConfigError, match="section.key=value"):
        apply_overrides(base, ["shapes=3"])


def test_malformed_text():
    with pytest.raises(ConfigError):
        parse_sections("no section header\n")
