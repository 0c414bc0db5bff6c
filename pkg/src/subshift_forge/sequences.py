"""Bounded test sequences and the arithmetic-progression screen.

All indexing in this module is 1-based, so ``y.at(1)`` is the first term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from math import isqrt
from pathlib import Path
from typing import Literal

import numpy as np
from pandas import DataFrame

from subshift_forge._core.cache import is_remote, retrieve_sequence
from subshift_forge._core.errors import InvalidArgumentError, SequenceParseError

logger = logging.getLogger(__name__)

Source = Literal["mobius", "file", "synthetic"]


@dataclass(frozen=True, eq=False)
class TestSequence:
    """A real sequence ``y_1, y_2, ...`` with ``|y_i| <= 1``.

    Parameters
    ----------
    values
        The terms, ``values[i - 1]`` holding ``y_i``. Copied and frozen.
    source
        Where the terms came from.
    """

    __test__ = False  # keep pytest from collecting this class

    values: np.ndarray
    source: Source = "synthetic"

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise InvalidArgumentError("A test sequence needs at least one term.")
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("Test sequence terms must be finite.")
        if np.any(np.abs(values) > 1):
            bad = int(np.argmax(np.abs(values) > 1)) + 1
            raise InvalidArgumentError(
                f"Test sequence term y_{bad} = {values[bad - 1]} lies outside [-1, 1]."
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        return f"TestSequence(source='{self.source}', length={len(self)})"

    @property
    def length(self) -> int:
        """Number of terms."""
        return self.values.size

    @cached_property
    def is_integral(self) -> bool:
        """Whether every term is an integer, making all correlation sums exact."""
        return bool(np.all(self.values == np.round(self.values)))

    def at(self, i: int) -> float:
        """The term ``y_i``."""
        if not 1 <= i <= len(self):
            raise InvalidArgumentError(f"Index {i} outside 1..{len(self)}.")
        return float(self.values[i - 1])

    def window(self, j: int, length: int) -> np.ndarray:
        """The block ``y_j ... y_{j + length - 1}``."""
        if j < 1 or length < 0 or j + length - 1 > len(self):
            raise InvalidArgumentError(
                f"Window y_{j}..y_{j + length - 1} exceeds the sequence "
                f"(length {len(self)})."
            )
        return self.values[j - 1 : j - 1 + length]


def smallest_prime_factors(n_max: int) -> np.ndarray:
    """Smallest-prime-factor table ``spf[i]`` for ``0 <= i <= n_max`` (``spf[1] = 1``)."""
    spf = np.zeros(n_max + 1, dtype=np.int64)
    for p in range(2, isqrt(n_max) + 1):
        if spf[p] == 0:
            multiples = spf[p * p :: p]
            multiples[multiples == 0] = p
    unmarked = spf == 0
    spf[unmarked] = np.arange(n_max + 1)[unmarked]
    spf[: min(2, n_max + 1)] = np.arange(min(2, n_max + 1))
    return spf


def mobius(n_max: int) -> TestSequence:
    """The Möbius function on ``1..n_max``.

    Parameters
    ----------
    n_max
        Number of terms.

    Returns
    -------
    ``TestSequence`` with ``source="mobius"``.

    Usage
    -----
    >>> sf.sequences.mobius(6).values
    array([ 1., -1., -1.,  0., -1.,  1.])
    """
    if n_max < 1:
        raise InvalidArgumentError(f"mobius needs n_max >= 1, got {n_max}.")
    spf = smallest_prime_factors(n_max)
    mu = np.zeros(n_max + 1, dtype=np.int8)
    mu[1] = 1
    # mu(i) only depends on mu(i // spf(i)) < i, so dyadic ranges can be filled at once
    lo = 2
    while lo <= n_max:
        hi = min(2 * lo, n_max + 1)
        i = np.arange(lo, hi)
        p = spf[lo:hi]
        j = i // p
        mu[lo:hi] = np.where(j % p == 0, 0, -mu[j])
        lo = hi
    logger.debug("sieved mobius up to %d", n_max)
    return TestSequence(mu[1:], source="mobius")


def synthetic_pm1(seed: int, n: int) -> TestSequence:
    """Seeded iid uniform ±1 terms.

    Aperiodic only almost surely; screen the result with :func:`verify_aperiodic`.
    """
    if n < 1:
        raise InvalidArgumentError(f"synthetic_pm1 needs n >= 1, got {n}.")
    rng = np.random.default_rng(seed)
    return TestSequence(2 * rng.integers(0, 2, size=n) - 1, source="synthetic")


def load_sequence(path: str | Path) -> TestSequence:
    """Load a sequence file: UTF-8, one real per line, line ``i`` holding ``y_i``.

    Values outside ``[-1, 1]`` are rejected, never clamped. ``http(s)://`` paths are
    downloaded once and cached.
    """
    if is_remote(path):
        path = retrieve_sequence(str(path))
    text = Path(path).read_text(encoding="utf-8")
    values = []
    for line, raw in enumerate(text.splitlines(), start=1):
        token = raw.strip()
        try:
            value = float(token)
        except ValueError:
            raise SequenceParseError(f"not a real number: {raw!r}", line) from None
        if not np.isfinite(value) or abs(value) > 1:
            raise SequenceParseError(f"value {token} outside [-1, 1]", line)
        values.append(value)
    if not values:
        raise SequenceParseError("empty sequence file", 1)
    return TestSequence(np.array(values), source="file")


def save_sequence(y: TestSequence, path: str | Path) -> None:
    """Write ``y`` in the format read by :func:`load_sequence`."""
    if y.is_integral:
        lines = (str(int(v)) for v in y.values)
    else:
        lines = (repr(float(v)) for v in y.values)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def max_admissible_n(y: TestSequence, t: int, l: int) -> int:
    """Largest ``n`` with ``n * t + l <= len(y)``."""
    return (len(y) - l) // t


def ap_average(y: TestSequence, t: int, l: int, n: int) -> float:
    """Average of ``y`` along the progression ``t + l, 2t + l, ..., nt + l``.

    Parameters
    ----------
    y
        The sequence.
    t
        Step, ``t >= 1``.
    l
        Shift, ``l >= 0``.
    n
        Number of terms, ``n >= 1``.

    Usage
    -----
    >>> sf.sequences.ap_average(sf.sequences.mobius(100), t=1, l=0, n=100)
    """
    if t < 1 or l < 0 or n < 1:
        raise InvalidArgumentError(f"Need t >= 1, l >= 0, n >= 1; got {t}, {l}, {n}.")
    largest = max_admissible_n(y, t, l)
    if n > largest:
        raise InvalidArgumentError(
            f"Progression t={t}, l={l} leaves the sequence after n={largest} terms "
            f"(asked for n={n})."
        )
    terms = y.values[t + l - 1 : n * t + l : t]
    return float(terms.sum() / n)


@dataclass(frozen=True)
class AperiodicityReport:
    """Result of :func:`verify_aperiodic`.

    ``table`` holds one row per progression with columns ``t``, ``l``, ``n``,
    ``average`` and ``flagged``.
    """

    table: DataFrame
    t_max: int
    tol: float
    note: str = field(
        default=(
            "A finite screen can only falsify aperiodicity, never prove it: "
            "aperiodicity is a statement about limits."
        )
    )

    @property
    def max_abs(self) -> float:
        """Largest absolute average over all progressions."""
        return float(self.table["average"].abs().max())

    @property
    def flagged(self) -> list[tuple[int, int]]:
        """Progressions ``(t, l)`` whose average exceeds the tolerance."""
        rows = self.table[self.table["flagged"]]
        return list(zip(rows["t"].tolist(), rows["l"].tolist()))

    @property
    def passed(self) -> bool:
        """Whether no progression was flagged."""
        return not self.flagged


def verify_aperiodic(y: TestSequence, t_max: int, tol: float) -> AperiodicityReport:
    """Screen ``y`` for nonzero averages along progressions with step ``t <= t_max``.

    Every ``(t, l)`` with ``0 <= l < t`` is evaluated at the largest admissible ``n``
    and flagged when ``|average| > tol``.

    Usage
    -----
    >>> report = sf.sequences.verify_aperiodic(sf.sequences.mobius(10**6), 10, 0.05)
    >>> report.flagged
    []
    """
    if t_max < 1 or tol <= 0:
        raise InvalidArgumentError(f"Need t_max >= 1 and tol > 0; got {t_max}, {tol}.")
    if 2 * t_max - 1 > len(y):
        raise InvalidArgumentError(
            f"A sequence of length {len(y)} is too short for t_max={t_max}."
        )
    rows = []
    for t in range(1, t_max + 1):
        for l in range(t):
            n = max_admissible_n(y, t, l)
            average = ap_average(y, t, l, n)
            rows.append((t, l, n, average, abs(average) > tol))
    table = DataFrame(rows, columns=["t", "l", "n", "average", "flagged"])
    report = AperiodicityReport(table=table, t_max=t_max, tol=tol)
    logger.info(
        "aperiodicity screen t_max=%d: max |average| %.3g, %d flagged",
        t_max,
        report.max_abs,
        len(report.flagged),
    )
    return report
