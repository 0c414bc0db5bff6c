"""On-disk layout of a run directory.

::

    <out>/config.json            canonical run config and its hash
    <out>/schedule.json          the parameter schedule
    <out>/validation.json        schedule validation rows
    <out>/level_00/meta.json     level record, written after blocks.txt
    <out>/level_00/blocks.txt    one base-N digit line per block
    <out>/report.json            aggregated verification report
    <out>/uncorrelation.csv      per-n uncorrelation trace

Every JSON file carries the config hash and seed and is written with sorted keys
and no timestamps, so identical runs give identical bytes.
"""

from __future__ import annotations

import json
import logging
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np
from pandas import DataFrame

from subshift_forge._core.config import RunConfig
from subshift_forge._core.errors import ConfigError, VerificationError
from subshift_forge.hierarchy import FamilyLevel
from subshift_forge.schedule import Schedule
from subshift_forge.symbolic import blocks_to_lines, lines_to_blocks

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
SCHEDULE_FILE = "schedule.json"
VALIDATION_FILE = "validation.json"
REPORT_FILE = "report.json"
UNCORRELATION_FILE = "uncorrelation.csv"


def _encode(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, (set, frozenset, tuple)):
        return sorted(value) if isinstance(value, (set, frozenset)) else list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(path: Path, data: Any) -> None:
    text = json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False, default=_encode)
    path.write_text(text + "\n", encoding="utf-8")


def read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"Missing artifact: {path}") from None


def table_records(table: DataFrame) -> list[dict]:
    """Rows of ``table`` as plain dicts, ready for :func:`write_json`."""
    return table.to_dict(orient="records")


def stamp(config: RunConfig) -> dict:
    return {"config_hash": config.config_hash, "seed": config.seed}


def level_dir(out: Path, k: int) -> Path:
    return Path(out) / f"level_{k:02d}"


def write_config(out: Path, config: RunConfig) -> None:
    """Write ``config.json``; refuse a directory that belongs to another config."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / CONFIG_FILE
    if path.exists():
        check_stamp(read_json(path), config, path)
    write_json(path, {"config": config.to_dict(), **stamp(config)})


def read_config(out: Path) -> RunConfig:
    stored = read_json(Path(out) / CONFIG_FILE)
    config = RunConfig.from_dict(stored["config"])
    if config.config_hash != stored["config_hash"]:
        raise ConfigError(f"{Path(out) / CONFIG_FILE} does not match its recorded hash.")
    return config


def check_stamp(record: dict, config: RunConfig, path: Path) -> None:
    """Raise :class:`ConfigError` unless ``record`` was written by ``config``."""
    if record.get("config_hash") != config.config_hash:
        raise ConfigError(
            f"{path} was written by config {record.get('config_hash', '?')[:12]}, "
            f"not {config.config_hash[:12]}. Use a fresh output directory."
        )
    if record.get("seed") != config.seed:
        raise ConfigError(
            f"{path} was written with seed {record.get('seed')}, not {config.seed}."
        )


def write_schedule(out: Path, schedule: Schedule, validation: DataFrame, config: RunConfig) -> None:
    write_json(Path(out) / SCHEDULE_FILE, {"schedule": schedule.to_dict(), **stamp(config)})
    write_json(
        Path(out) / VALIDATION_FILE, {"rows": table_records(validation), **stamp(config)}
    )


def read_schedule(out: Path, config: RunConfig) -> Schedule:
    path = Path(out) / SCHEDULE_FILE
    record = read_json(path)
    check_stamp(record, config, path)
    return Schedule.from_dict(record["schedule"])


def write_level(out: Path, level: FamilyLevel, config: RunConfig) -> None:
    """Write ``blocks.txt`` then ``meta.json``; a level without meta is incomplete."""
    path = level_dir(out, level.k)
    path.mkdir(parents=True, exist_ok=True)
    (path / "blocks.txt").write_text(
        "".join(line + "\n" for line in blocks_to_lines(level.blocks)), encoding="utf-8"
    )
    write_json(path / "meta.json", {**level.to_meta(), **stamp(config)})
    logger.info("wrote level %d (%d blocks) to %s", level.k, len(level), path)


def read_level(out: Path, k: int, config: RunConfig) -> FamilyLevel:
    """Load level ``k`` as stored; blocks are not checked against the recorded digest.

    A ``blocks.txt`` that cannot be read back as a level raises
    :class:`~subshift_forge._core.errors.VerificationError`.
    """
    path = level_dir(out, k)
    meta = read_json(path / "meta.json")
    check_stamp(meta, config, path / "meta.json")
    lines = (path / "blocks.txt").read_text(encoding="utf-8").splitlines()
    try:
        blocks = lines_to_blocks(lines, meta["N"]) if lines else np.zeros((0, meta["N_k"]), np.uint8)
        return FamilyLevel.from_meta(meta, blocks.reshape(-1, meta["N_k"]))
    except ValueError as err:
        raise VerificationError(f"{path / 'blocks.txt'} is corrupt: {err}") from err


def completed_levels(out: Path, config: RunConfig) -> list[FamilyLevel]:
    """The consecutive levels ``0, 1, ...`` already written for ``config``.

    A level written under another config hash or seed raises
    :class:`ConfigError`; a level directory without ``meta.json`` ends the run.
    """
    levels = []
    k = 0
    while (level_dir(out, k) / "meta.json").exists():
        levels.append(read_level(out, k, config))
        k += 1
    if levels:
        logger.info("resuming after level %d", levels[-1].k)
    return levels


def read_levels(out: Path, config: RunConfig) -> list[FamilyLevel]:
    levels = completed_levels(out, config)
    if not levels:
        raise ConfigError(f"No levels found under {out}; run `forge build` first.")
    return levels


def write_report(out: Path, report: dict, config: RunConfig) -> None:
    write_json(Path(out) / REPORT_FILE, {**report, **stamp(config)})


def write_uncorrelation(out: Path, trace: DataFrame) -> None:
    trace.to_csv(Path(out) / UNCORRELATION_FILE, index=False, float_format="%.12g")
