from __future__ import annotations

from abc import ABC, abstractmethod
from typing import TYPE_CHECKING

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from subshift_forge._core.errors import InvalidArgumentError
from subshift_forge.symbolic import CodeFamily, window_codes

# largest (candidates x shifts) matrix of correlation sums held at once
MAX_SUMS = 2**22

# verdicts and scores of one named test, one entry per candidate
Verdicts = tuple[np.ndarray, np.ndarray]

if TYPE_CHECKING:
    from subshift_forge.hierarchy import BernsteinStats


def correlation_bound(eps_plus_delta: float, length: int) -> float:
    """Bound on a correlation *sum* over ``length`` terms: ``2 (eps + delta) length``."""
    return 2 * eps_plus_delta * length


class AbstractBlockTest(ABC):
    """Base class for all block tests. Defines logical operators and interface.

    A test screens candidate blocks given as a ``(count, length)`` symbol array.
    """

    def __and__(self, other):
        return AndBlockTest(self, other)

    def __or__(self, other):
        return OrBlockTest(self, other)

    def __invert__(self):
        return NotBlockTest(self)

    @abstractmethod
    def mask(self, candidates: np.ndarray) -> np.ndarray:
        """Boolean array, ``True`` where the candidate passes."""
        pass

    @abstractmethod
    def names(self) -> set[str]:
        """Labels of the tests applied, e.g. ``{"R", "F"}``."""
        pass

    def screen(self, candidates: np.ndarray) -> tuple[np.ndarray, dict[str, Verdicts]]:
        """Overall verdicts, and the verdicts and scores of every named test run.

        Scores are ``nan`` for candidates a named test never saw.
        """
        return self.mask(candidates), {}


class EmptyFilter(AbstractBlockTest):
    """A test every block passes."""

    def __repr__(self) -> str:
        return "EmptyFilter()"

    def mask(self, candidates: np.ndarray) -> np.ndarray:
        return np.ones(len(candidates), dtype=bool)

    def names(self) -> set[str]:
        return set()


class AbstractBlockTestOperator(AbstractBlockTest):
    def __init__(self, left: AbstractBlockTest, right: AbstractBlockTest):
        self.left = left
        self.right = right

    def names(self) -> set[str]:
        return self.left.names() | self.right.names()


class AndBlockTest(AbstractBlockTestOperator):
    """Logical and of two tests. The right test only sees left passers."""

    def __repr__(self) -> str:
        return f"({self.left} & {self.right})"

    def mask(self, candidates: np.ndarray) -> np.ndarray:
        return self.screen(candidates)[0]

    def screen(self, candidates: np.ndarray) -> tuple[np.ndarray, dict[str, Verdicts]]:
        left, details = self.left.screen(candidates)
        passed = left.copy()
        if left.any():
            right, right_details = self.right.screen(candidates[left])
            passed[left] = right
            for name, (verdicts, scores) in right_details.items():
                full_verdicts = np.zeros(len(candidates), dtype=bool)
                full_verdicts[left] = verdicts
                full_scores = np.full(len(candidates), np.nan)
                full_scores[left] = scores
                details[name] = (full_verdicts, full_scores)
        return passed, details


class NotBlockTest(AbstractBlockTest):
    """A test that inverts the result of another test."""

    def __init__(self, test: AbstractBlockTest):
        self.test = test

    def __repr__(self) -> str:
        return f"~{repr(self.test)}"

    def mask(self, candidates: np.ndarray) -> np.ndarray:
        return ~self.test.mask(candidates)

    def names(self) -> set[str]:
        return self.test.names()

    def screen(self, candidates: np.ndarray) -> tuple[np.ndarray, dict[str, Verdicts]]:
        passed, details = self.test.screen(candidates)
        return ~passed, details


class OrBlockTest(AbstractBlockTestOperator):
    """Logical or of two tests."""

    def __repr__(self) -> str:
        return f"({self.left} | {self.right})"

    def mask(self, candidates: np.ndarray) -> np.ndarray:
        return self.left.mask(candidates) | self.right.mask(candidates)

    def screen(self, candidates: np.ndarray) -> tuple[np.ndarray, dict[str, Verdicts]]:
        left, details = self.left.screen(candidates)
        right, right_details = self.right.screen(candidates)
        return left | right, {**details, **right_details}


class CorrelationFilter(AbstractBlockTest):
    """The correlation test (R).

    A block ``B`` of length ``N_k`` passes when, for every code ``f`` and every
    ``j = 1 .. (m**2 - 1) N_k``, the correlation of ``f(B)`` with
    ``y_j .. y_{j + |f(B)| - 1}`` has absolute value below ``2 (eps + delta)``.
    Sums are compared against :func:`correlation_bound` rather than averages.

    Parameters
    ----------
    y
        Sequence terms, ``y[i - 1]`` holding ``y_i``.
    codes
        The code family ``F_k``.
    eps_plus_delta
        ``eps_k + delta_k``.
    m
        The multiplier ``m_k``.
    N_k
        Block length.
    """

    def __init__(
        self,
        y: np.ndarray,
        codes: CodeFamily,
        eps_plus_delta: float,
        m: int,
        N_k: int,
    ):
        self.codes = codes
        self.eps_plus_delta = eps_plus_delta
        self.m = m
        self.N_k = N_k
        self.shifts = (m * m - 1) * N_k
        required = required_sequence_length(m, N_k)
        if len(y) < required:
            raise InvalidArgumentError(
                f"The correlation test at N_k={N_k}, m={m} needs {required} "
                f"sequence terms, got {len(y)}."
            )
        self._alphabet = codes.codes[0].alphabet_size if len(codes) else 2
        self._windows = {}
        for w in codes.windows:
            length = N_k - w + 1
            if length < 1:
                raise InvalidArgumentError(f"Code window {w} exceeds block length {N_k}.")
            y_windows = sliding_window_view(
                np.asarray(y[: self.shifts + length - 1], dtype=np.float64), length
            )
            self._windows[w] = np.ascontiguousarray(y_windows)
        self._plan = self._plan_codes()

    def __repr__(self) -> str:
        return (
            f"CorrelationFilter(codes={len(self.codes)}, m={self.m}, N_k={self.N_k}, "
            f"eps_plus_delta={self.eps_plus_delta:.4g})"
        )

    def _plan_codes(self):
        # f and -f give the same |sum|; constant codes do not depend on the block
        plan = {}
        for w in self.codes.windows:
            tables, seen, constant_worst = [], set(), None
            for f in self.codes:
                if f.window != w:
                    continue
                if f.is_constant:
                    if constant_worst is None:
                        sums = self._windows[w].sum(axis=1)
                        constant_worst = float(np.abs(sums).max())
                    continue
                if f.negated().table.tobytes() in seen:
                    continue
                seen.add(f.table.tobytes())
                tables.append(f.table)
            plan[w] = (np.array(tables, dtype=np.float64), constant_worst)
        return plan

    def names(self) -> set[str]:
        return {"R"}

    def _worst_for_window(self, candidates: np.ndarray, w: int) -> np.ndarray:
        tables, constant_worst = self._plan[w]
        candidates = np.atleast_2d(candidates)
        worst = np.full(len(candidates), constant_worst or 0.0)
        if len(tables):
            windows = window_codes(candidates, w, self._alphabet)
            rows = max(1, MAX_SUMS // self._windows[w].shape[0])
            for start in range(0, len(candidates), rows):
                part = windows[start : start + rows]
                for table in tables:
                    sums = table[part] @ self._windows[w].T
                    worst[start : start + rows] = np.maximum(
                        worst[start : start + rows], np.abs(sums).max(axis=1)
                    )
        return worst

    def evaluate(self, candidates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Verdicts and the largest |correlation| over codes and shifts, per candidate."""
        candidates = np.atleast_2d(candidates)
        passed = np.ones(len(candidates), dtype=bool)
        worst = np.zeros(len(candidates))
        for w in self._plan:
            length = self.N_k - w + 1
            sums = self._worst_for_window(candidates, w)
            passed &= sums < correlation_bound(self.eps_plus_delta, length)
            worst = np.maximum(worst, sums / length)
        return passed, worst

    def mask(self, candidates: np.ndarray) -> np.ndarray:
        return self.evaluate(candidates)[0]

    def screen(self, candidates: np.ndarray) -> tuple[np.ndarray, dict[str, Verdicts]]:
        passed, worst = self.evaluate(candidates)
        return passed, {"R": (passed, worst)}


class BernsteinFilter(AbstractBlockTest):
    """The Bernstein test (F) against the short-block statistics of ``G'_p``.

    A block is cut into ``q = N_k / N_p`` components of length ``N_p``. It passes
    when for every ``D`` in ``Λ^n`` the mean frequency of ``D`` over the components
    is within ``stats.threshold`` of ``stats.xbar[D]``. Equality passes.
    """

    def __init__(self, stats: BernsteinStats, N_k: int):
        if N_k % stats.N_p:
            raise InvalidArgumentError(
                f"Blocks of length {N_k} do not cut into components of length {stats.N_p}."
            )
        self.stats = stats
        self.N_k = N_k
        self.q = N_k // stats.N_p

    def __repr__(self) -> str:
        return f"BernsteinFilter(p={self.stats.p}, n={self.stats.n}, q={self.q})"

    def names(self) -> set[str]:
        return {"F"}

    def component_rows(self, candidates: np.ndarray) -> np.ndarray:
        """Row of each component in the reference family, shape ``(count, q)``."""
        candidates = np.atleast_2d(candidates)
        family = self.stats.family
        components = candidates.reshape(-1, self.stats.N_p)
        _, inverse = np.unique(
            np.concatenate([family, components]), axis=0, return_inverse=True
        )
        inverse = inverse.reshape(-1)
        lookup = np.full(inverse.max() + 1, -1, dtype=np.int64)
        lookup[inverse[: len(family)]] = np.arange(len(family))
        rows = lookup[inverse[len(family) :]]
        if np.any(rows < 0):
            bad = int(np.argmax(rows < 0))
            raise InvalidArgumentError(
                f"Component {bad % self.q} of candidate {bad // self.q} is not a block "
                f"of the reference family at step {self.stats.p}."
            )
        return rows.reshape(len(candidates), self.q)

    def deviation_numerators(self, candidates: np.ndarray) -> np.ndarray:
        """Exact ``max_D |G * sum_i c_i(D) - q * T(D)|`` per candidate.

        ``c_i(D)`` counts ``D`` in component ``i``, ``T(D)`` totals the counts over
        the ``G`` reference blocks. Dividing by ``q * G * N_p`` gives the deviation.
        """
        rows = self.component_rows(candidates)
        sums = self.stats.counts[rows].sum(axis=1)
        G = len(self.stats.family)
        return np.abs(G * sums - self.q * self.stats.totals[None, :]).max(axis=1)

    def evaluate(self, candidates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Verdicts and the largest deviation over ``D``, per candidate."""
        scale = self.q * len(self.stats.family) * self.stats.N_p
        numerators = self.deviation_numerators(candidates)
        return numerators <= self.stats.threshold * scale, numerators / scale

    def mask(self, candidates: np.ndarray) -> np.ndarray:
        return self.evaluate(candidates)[0]

    def screen(self, candidates: np.ndarray) -> tuple[np.ndarray, dict[str, Verdicts]]:
        passed, deviation = self.evaluate(candidates)
        return passed, {"F": (passed, deviation)}


def required_sequence_length(m: int, N_k: int) -> int:
    """Terms of ``y`` the correlation test reads: ``(m**2 - 1) N_k + N_k - 1``."""
    return m * m * N_k - 1

