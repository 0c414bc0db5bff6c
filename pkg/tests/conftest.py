import copy
import json

import pytest

from subshift_forge._core.config import RunConfig
from subshift_forge.hierarchy import build_hierarchy
from subshift_forge.schedule import build_schedule
from subshift_forge.sequences import mobius

# N=2, M=6, multipliers 6, 6, 7 and a Bernstein step at level 3 against level 1
DESK = {
    "N": 2,
    "M": 6,
    "alpha": "const:1",
    "c_eps": 0.3,
    "c_delta": 0.3,
    "r": [2.0],
    "desk_jumps": {"7": 3},
    "desk_reference": {"1": 1},
    "windows": {"default": 1},
    "caps": {"max_level": 3, "max_family": 40, "max_candidates": 20000},
    "sequence": {"source": "mobius"},
    "seed": 12345,
    "mode": "desk",
    "verify": {"samples": 8},
}

# m_3^2 N_3 - 1 terms, all the correlation test reads at level 3
DESK_Y_LENGTH = 49 * 252 - 1


def desk_dict(**changes) -> dict:
    data = copy.deepcopy(DESK)
    data.update(changes)
    return data


@pytest.fixture(scope="session")
def desk_config():
    return RunConfig.from_dict(desk_dict())


@pytest.fixture(scope="session")
def desk_schedule(desk_config):
    return build_schedule(desk_config.schedule)


@pytest.fixture(scope="session")
def desk_y():
    return mobius(DESK_Y_LENGTH)


@pytest.fixture(scope="session")
def desk_levels(desk_config, desk_schedule, desk_y):
    return build_hierarchy(desk_schedule, desk_y, desk_config.caps, seed=desk_config.seed)


@pytest.fixture
def write_config(tmp_path):
    def writer(data: dict, name: str = "config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return writer


@pytest.fixture
def make_desk():
    return desk_dict
