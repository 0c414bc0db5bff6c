import json

import pytest

from subshift_forge._core.config import ALL_CHECKS, RunConfig, canonical_json, load_config
from subshift_forge._core.errors import ConfigError


def test_parse_desk_config(desk_config):
    schedule = desk_config.schedule
    assert (schedule.N, schedule.M) == (2, 6)
    assert schedule.desk_jumps == {7: 3}
    assert schedule.desk_reference == {1: 1}
    assert schedule.r == (2.0,)
    assert desk_config.caps.max_family == 40
    assert desk_config.mode == "desk"
    assert desk_config.checks == ALL_CHECKS
    assert desk_config.verify.samples == 8


def test_config_hash_is_stable(desk_config):
    again = RunConfig.from_dict(json.loads(json.dumps(desk_config.to_dict())))
    assert again.config_hash == desk_config.config_hash
    assert len(desk_config.config_hash) == 64
    assert desk_config.with_overrides(seed=1).config_hash != desk_config.config_hash
    assert desk_config.with_overrides(mode="faithful").mode == "faithful"


def test_canonical_json():
    assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'


@pytest.mark.parametrize(
    "changes,field",
    [
        ({"N": 1}, "'N'"),
        ({"M": 2}, "'M'"),
        ({"alpha": "one"}, "'alpha'"),
        ({"alpha": {"7": 0.5}}, "default"),
        ({"c_eps": 0}, "'c_eps'"),
        ({"decay_offset": 0}, "'decay_offset'"),
        ({"r": [3.0]}, r"'r\[1\]'"),
        ({"desk_jumps": {"5": 3}}, "'desk_jumps' key 5"),
        ({"desk_reference": {"2": 1}}, "'desk_reference' key 2"),
        ({"windows": {"default": 2, "3": 1}}, "nondecreasing"),
        ({"caps": {"max_level": 0}}, "'caps.max_level'"),
        ({"mode": "fast"}, "'mode'"),
        ({"seed": -1}, "'seed'"),
        ({"checks": ["entropy", "magic"]}, "magic"),
        ({"sequence": {"source": "file"}}, "'sequence.path'"),
        ({"verify": {"samples": 1}}, "'verify.samples'"),
        ({"unknown": 1}, "Malformed"),
    ],
    ids=lambda v: v if isinstance(v, str) else next(iter(v)),
)
def test_invalid_config(make_desk, changes, field):
    with pytest.raises(ConfigError, match=field):
        RunConfig.from_dict(make_desk(**changes))


def test_load_config(make_desk, write_config, tmp_path):
    config = load_config(write_config(make_desk()))
    assert config.seed == 12345

    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")

    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(broken)
