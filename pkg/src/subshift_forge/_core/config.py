"""Run configuration: parsing, validation and hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

from subshift_forge._core.errors import ConfigError

Mode = Literal["desk", "faithful"]
ALL_CHECKS = ("reverify", "gamma", "entropy", "spread", "diameter", "uncorrelation")
SEQUENCE_SOURCES = ("mobius", "file", "synthetic")
_CONST_ALPHA = re.compile(r"^const:([0-9.eE+-]+)$")


def canonical_json(value: Any) -> str:
    """Sorted-key, whitespace-free JSON used for hashing."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _int_keys(name: str, mapping: dict | None) -> dict[int, int]:
    if mapping is None:
        return {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"'{name}' must be a mapping.")
    try:
        return {int(k): int(v) for k, v in mapping.items()}
    except (TypeError, ValueError):
        raise ConfigError(f"'{name}' must map integers to integers.") from None


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def check_alpha(alpha: str | dict) -> None:
    """Validate an ``alpha`` entry: ``"const:<v>"`` or a table with a ``"default"``."""
    if isinstance(alpha, str):
        match = _CONST_ALPHA.match(alpha)
        _require(match is not None, f"'alpha' must look like 'const:1', got {alpha!r}.")
        _require(float(match.group(1)) > 0, "'alpha' must be positive.")
        return
    _require(isinstance(alpha, dict), "'alpha' must be 'const:<v>' or a table.")
    _require("default" in alpha, "An 'alpha' table needs a 'default' entry.")
    for key, value in alpha.items():
        _require(
            key == "default" or str(key).isdigit(),
            f"'alpha' keys are multipliers or 'default', got {key!r}.",
        )
        _require(
            isinstance(value, (int, float)) and value > 0,
            f"'alpha[{key}]' must be a positive number.",
        )


@dataclass(frozen=True)
class Caps:
    """Desk-scale limits on the construction."""

    max_level: int = 3
    max_family: int = 2000
    max_candidates: int = 200_000

    def __post_init__(self):
        _require(self.max_level >= 1, "'caps.max_level' must be >= 1.")
        _require(self.max_family >= 1, "'caps.max_family' must be >= 1.")
        _require(self.max_candidates >= 0, "'caps.max_candidates' must be >= 0.")


@dataclass(frozen=True)
class ScheduleConfig:
    """Inputs of the parameter schedule."""

    N: int
    M: int
    alpha: str | dict = "const:1"
    c_eps: float = 0.3
    c_delta: float = 0.3
    decay_offset: float = math.e
    r: tuple[float, ...] = ()
    desk_jumps: dict[int, int] = field(default_factory=dict)
    desk_reference: dict[int, int] = field(default_factory=dict)
    windows: dict[str, int] = field(default_factory=lambda: {"default": 1})
    caps: Caps = field(default_factory=Caps)
    mode: Mode = "desk"
    rule: Literal["b", "b_prime"] = "b_prime"

    def __post_init__(self):
        _require(isinstance(self.N, int) and 2 <= self.N <= 36, "'N' must be in 2..36.")
        _require(isinstance(self.M, int) and self.M >= 3, "'M' must be an integer >= 3.")
        check_alpha(self.alpha)
        _require(self.c_eps > 0, "'c_eps' must be positive.")
        _require(self.c_delta > 0, "'c_delta' must be positive.")
        _require(self.decay_offset > 0, "'decay_offset' must be positive.")
        object.__setattr__(self, "r", tuple(float(v) for v in self.r))
        for j, r in enumerate(self.r, start=1):
            _require(0 < r <= 2, f"'r[{j}]' must lie in (0, 2], got {r}.")
        jumps = _int_keys("desk_jumps", self.desk_jumps)
        for m, K in jumps.items():
            _require(m > self.M, f"'desk_jumps' key {m} must exceed M={self.M}.")
            _require(K >= 2, f"'desk_jumps[{m}]' must be >= 2.")
        object.__setattr__(self, "desk_jumps", jumps)
        reference = _int_keys("desk_reference", self.desk_reference)
        for j, p in reference.items():
            _require(1 <= j <= len(self.r), f"'desk_reference' key {j} names no r(j).")
            _require(p >= 1, f"'desk_reference[{j}]' must be >= 1.")
        object.__setattr__(self, "desk_reference", reference)
        windows = {str(k): int(v) for k, v in self.windows.items()}
        windows.setdefault("default", 1)
        steps = sorted((int(k), v) for k, v in windows.items() if k != "default")
        sizes = [windows["default"]] + [v for _, v in steps]
        _require(all(v >= 1 for v in sizes), "'windows' entries must be >= 1.")
        _require(sizes == sorted(sizes), "'windows' must be nondecreasing in the step.")
        object.__setattr__(self, "windows", windows)
        _require(self.mode in ("desk", "faithful"), f"'mode' must be desk or faithful, got {self.mode!r}.")
        _require(self.rule in ("b", "b_prime"), f"'rule' must be b or b_prime, got {self.rule!r}.")


@dataclass(frozen=True)
class SequenceConfig:
    """Where the test sequence ``y`` comes from."""

    source: str = "mobius"
    path: str | None = None
    seed: int = 7
    length: int | None = None

    def __post_init__(self):
        _require(
            self.source in SEQUENCE_SOURCES,
            f"'sequence.source' must be one of {SEQUENCE_SOURCES}, got {self.source!r}.",
        )
        _require(
            self.source != "file" or bool(self.path),
            "'sequence.path' is required for source 'file'.",
        )
        _require(
            self.length is None or self.length >= 1, "'sequence.length' must be >= 1."
        )


@dataclass(frozen=True)
class VerifyConfig:
    """Sizes of the sampled verification checks."""

    samples: int = 50
    n_list: tuple[int, ...] | None = None
    point_length: int | None = None

    def __post_init__(self):
        _require(self.samples >= 2, "'verify.samples' must be >= 2.")
        if self.n_list is not None:
            object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
            _require(all(n >= 1 for n in self.n_list), "'verify.n_list' must be positive.")
        _require(
            self.point_length is None or self.point_length >= 1,
            "'verify.point_length' must be >= 1.",
        )


@dataclass(frozen=True)
class RunConfig:
    """A complete run: schedule inputs, sequence, seed and the checks to run."""

    schedule: ScheduleConfig
    sequence: SequenceConfig = field(default_factory=SequenceConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    seed: int = 0
    checks: tuple[str, ...] = ALL_CHECKS

    def __post_init__(self):
        _require(
            isinstance(self.seed, int) and 0 <= self.seed < 2**64,
            "'seed' must be an unsigned 64-bit integer.",
        )
        object.__setattr__(self, "checks", tuple(self.checks))
        unknown = set(self.checks) - set(ALL_CHECKS)
        _require(not unknown, f"Unknown checks: {sorted(unknown)}.")

    @property
    def mode(self) -> Mode:
        """``"desk"`` or ``"faithful"``."""
        return self.schedule.mode

    @property
    def caps(self) -> Caps:
        """Construction caps."""
        return self.schedule.caps

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        """Build a config from the flat JSON layout."""
        if not isinstance(data, dict):
            raise ConfigError("A run config must be a JSON object.")
        data = dict(data)
        try:
            caps = Caps(**data.pop("caps", {}))
            sequence = SequenceConfig(**data.pop("sequence", {}))
            verify = VerifyConfig(**data.pop("verify", {}))
            seed = data.pop("seed", 0)
            checks = data.pop("checks", ALL_CHECKS)
            schedule = ScheduleConfig(caps=caps, **data)
        except TypeError as err:
            raise ConfigError(f"Malformed run config: {err}") from None
        return cls(schedule=schedule, sequence=sequence, verify=verify, seed=seed, checks=checks)

    def to_dict(self) -> dict:
        """The canonical flat JSON layout, with string keys throughout."""
        schedule = dataclasses.asdict(self.schedule)
        schedule["desk_jumps"] = {str(k): v for k, v in self.schedule.desk_jumps.items()}
        schedule["desk_reference"] = {
            str(k): v for k, v in self.schedule.desk_reference.items()
        }
        schedule["r"] = list(self.schedule.r)
        verify = dataclasses.asdict(self.verify)
        if verify["n_list"] is not None:
            verify["n_list"] = list(verify["n_list"])
        return {
            **schedule,
            "sequence": dataclasses.asdict(self.sequence),
            "verify": verify,
            "seed": self.seed,
            "checks": list(self.checks),
        }

    @property
    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form; written into every artifact."""
        return hashlib.sha256(canonical_json(self.to_dict()).encode("utf-8")).hexdigest()

    def with_overrides(self, seed: int | None = None, mode: Mode | None = None) -> RunConfig:
        """A copy with ``seed`` and/or ``mode`` replaced; ``None`` keeps the current value."""
        config = self
        if mode is not None:
            config = dataclasses.replace(
                config, schedule=dataclasses.replace(config.schedule, mode=mode)
            )
        if seed is not None:
            config = dataclasses.replace(config, seed=seed)
        return config


def load_config(path: str | Path) -> RunConfig:
    """Read a run config from a JSON file."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"Config file {path} is not valid JSON: {err}") from None
    return RunConfig.from_dict(data)
