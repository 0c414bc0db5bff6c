"""Empirical measures, entropy accounting and the uncorrelation and diameter verdicts."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pandas import DataFrame

from subshift_forge._core.errors import InvalidArgumentError
from subshift_forge.hierarchy import FamilyLevel
from subshift_forge.schedule import Schedule, UELevel
from subshift_forge.sequences import TestSequence
from subshift_forge.symbolic import (
    Block,
    Code,
    apply_code,
    code_family_for_step,
    occurrence_counts,
    window_codes,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Cylinder frequencies of one finite block up to depth ``L``.

    ``counts[n' - 1][D]`` counts the occurrences of the length-``n'`` block with
    lexicographic index ``D``; frequencies divide by ``source_length``.
    """

    depth: int
    N: int
    counts: tuple[np.ndarray, ...]
    source_length: int
    source: str = "block"

    def __repr__(self) -> str:
        return (
            f"EmpiricalMeasure(depth={self.depth}, N={self.N}, "
            f"source='{self.source}', length={self.source_length})"
        )

    def table(self, n: int) -> np.ndarray:
        """Frequencies of all blocks of length ``n``, lexicographic order."""
        if not 1 <= n <= self.depth:
            raise InvalidArgumentError(f"Depth {n} outside 1..{self.depth}.")
        return self.counts[n - 1] / self.source_length

    def __getitem__(self, D: Block) -> Fraction:
        index = int(window_codes(D.symbols, len(D), self.N)[0])
        return Fraction(int(self.counts[len(D) - 1][index]), self.source_length)

    def is_consistent(self) -> bool:
        """Normalization and extension consistency up to the boundary slack."""
        slack = 1 / self.source_length
        for n in range(1, self.depth + 1):
            total = self.table(n).sum()
            lower = 1 - (n - 1) / self.source_length
            if not lower - 1e-12 <= total <= 1 + 1e-12:
                return False
            if n > 1:
                extended = self.table(n).reshape(-1, self.N).sum(axis=1)
                if np.any(self.table(n - 1) < extended - 1e-12):
                    return False
                if np.any(self.table(n - 1) - extended > slack + 1e-12):
                    return False
        return True


def empirical_measure(C: Block, L: int, source: str = "block") -> EmpiricalMeasure:
    """``table[D] = freq(C, D)`` for every ``D`` with ``len(D) <= L``.

    Usage
    -----
    >>> mu = sf.ergodicity.empirical_measure(Block.from_string("010", 2), 1)
    >>> mu.table(1)
    array([0.66666667, 0.33333333])
    """
    if L < 1 or len(C) < L:
        raise InvalidArgumentError(f"Depth {L} needs a block of length >= {L}, got {len(C)}.")
    counts = tuple(occurrence_counts(C.symbols, n, C.alphabet_size)[0] for n in range(1, L + 1))
    return EmpiricalMeasure(
        depth=L, N=C.alphabet_size, counts=counts, source_length=len(C), source=source
    )


def tail_bound(n_max: int) -> float:
    """What the distance omits beyond depth ``n_max``: ``2 * 2**-n_max``."""
    return 2.0 ** (1 - n_max)


def measure_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure, n_max: int) -> float:
    """Truncated distance ``sum_{n'<=n_max} 2**-n' sum_D |mu(D) - nu(D)|``.

    The full distance exceeds this by at most :func:`tail_bound`.
    """
    if mu.N != nu.N:
        raise InvalidArgumentError("Measures over different alphabets.")
    if n_max < 1 or mu.depth < n_max or nu.depth < n_max:
        raise InvalidArgumentError(
            f"Depth {n_max} exceeds the measures' depths {mu.depth} and {nu.depth}."
        )
    return math.fsum(
        2.0**-n * float(np.abs(mu.table(n) - nu.table(n)).sum()) for n in range(1, n_max + 1)
    )


@dataclass(frozen=True)
class EntropyReport:
    """Per-level entropy accounting and the (ent2) comparisons between levels."""

    levels: DataFrame
    pairs: DataFrame

    @property
    def holds(self) -> bool:
        """Whether every asserted row holds."""
        asserted = self.levels[self.levels["asserted"]]
        pairs = self.pairs[self.pairs["asserted"]]
        return bool(
            asserted["identity_holds"].all()
            and asserted["composition_holds"].all()
            and asserted["lower_bound_holds"].all()
            and pairs["holds"].all()
        )


def entropy_report(levels: Sequence[FamilyLevel], M: int) -> EntropyReport:
    """Entropy of each level and the identities that tie it to the ``gamma_i``.

    For each level ``h(Σ_k) = log #G_k / N_k`` is compared with
    ``log N + sum_{i<=k} log(gamma_i) / N_i`` and ``log #G_k`` with
    ``N_k log N + sum_i (N_k / N_i) log gamma_i``. If every ``gamma_i >= 1/2``,
    ``h(Σ_k) >= log N - log 2 / (M - 1)`` is checked. For every built pair
    ``p < k``, ``h(Σ_p) - h(Σ_k) < log 2 / (N_p (m_p - 1))``.

    Identities are asserted only along fully enumerated chains; sampled levels
    carry estimates.
    """
    if not levels or levels[0].k != 0:
        raise InvalidArgumentError("entropy_report needs the levels from k = 0 on.")
    N = levels[0].N
    log_N = math.log(N)
    rows = []
    exact_chain = True
    telescope = log_N
    composition_terms: list[tuple[int, float]] = []
    all_half = True
    for lvl in levels:
        k = lvl.k
        exact_chain = exact_chain and lvl.exact
        if k >= 1:
            log_gamma = math.log(lvl.gamma)
            telescope += log_gamma / lvl.N_k
            composition_terms.append((lvl.N_k, log_gamma))
            all_half = all_half and lvl.gamma >= Fraction(1, 2)
        if exact_chain:
            h = math.log(len(lvl)) / lvl.N_k
        else:
            h = lvl.entropy
        rel_err = abs(h - telescope) / abs(h) if h else abs(telescope)
        log_card = lvl.N_k * log_N + math.fsum(lvl.N_k / N_i * lg for N_i, lg in composition_terms)
        observed = math.log(len(lvl)) if exact_chain else lvl.log_cardinality
        composition_err = abs(log_card - observed) / max(abs(observed), 1e-300)
        partial_bound = log_N - math.log(2) * math.fsum(float(M) ** -i for i in range(1, k + 1))
        limit_bound = log_N - math.log(2) / (M - 1)
        rows.append(
            {
                "k": k,
                "N_k": lvl.N_k,
                "gamma": float(lvl.gamma),
                "exact": exact_chain,
                "h": h,
                "telescoped": telescope,
                "rel_err": rel_err,
                "identity_holds": rel_err <= 1e-12,
                "composition_rel_err": composition_err,
                "composition_holds": composition_err <= 1e-12,
                "partial_bound": partial_bound,
                "lower_bound": limit_bound,
                "bound_applies": all_half,
                "lower_bound_holds": (h >= limit_bound) if all_half else True,
                "asserted": exact_chain,
            }
        )
    level_table = DataFrame(rows)

    pairs = []
    by_k = {lvl.k: lvl for lvl in levels}
    gammas_ok = {lvl.k: lvl.gamma >= Fraction(1, 2) for lvl in levels if lvl.k >= 1}
    for p, k in combinations(sorted(by_k), 2):
        low, high = by_k[p], by_k[k]
        # m_0 is undefined; the level-1 multiplier bounds N_i from below instead
        m_p = by_k[1].m_k if p == 0 else low.m_k
        bound = math.log(2) / (low.N_k * (m_p - 1))
        h_p = level_table.loc[level_table["k"] == p, "h"].iloc[0]
        h_k = level_table.loc[level_table["k"] == k, "h"].iloc[0]
        exact = bool(level_table.loc[level_table["k"] == k, "exact"].iloc[0])
        half = all(gammas_ok[i] for i in range(p + 1, k + 1))
        pairs.append(
            {
                "p": p,
                "k": k,
                "difference": h_p - h_k,
                "bound": bound,
                "holds": h_p - h_k < bound,
                "asserted": exact and half,
            }
        )
    pair_table = DataFrame(pairs, columns=["p", "k", "difference", "bound", "holds", "asserted"])
    return EntropyReport(levels=level_table, pairs=pair_table)


@dataclass(frozen=True)
class SpreadReport:
    """Largest frequency difference between two blocks of one family."""

    max_spread: float
    worst_D: Block | None
    worst_pair: tuple[int, int] | None
    note: str = ""


def freq_spread(level: FamilyLevel, n: int) -> SpreadReport:
    """Largest ``|freq(B, D) - freq(B', D)|`` over ``D`` in ``Λ^n`` and pairs in the family.

    Computed as max minus min per ``D``, which equals the pairwise maximum.
    """
    if not len(level):
        raise InvalidArgumentError(f"Level {level.k} is empty.")
    if n < 1 or n > level.N_k:
        raise InvalidArgumentError(f"n={n} must lie in 1..{level.N_k}.")
    if len(level) == 1:
        return SpreadReport(0.0, None, None, note="singleton family")
    counts = occurrence_counts(level.blocks, n, level.N)
    spread = counts.max(axis=0) - counts.min(axis=0)
    D = int(spread.argmax())
    pair = (int(counts[:, D].argmax()), int(counts[:, D].argmin()))
    digits = np.array([(D // level.N**i) % level.N for i in range(n - 1, -1, -1)])
    return SpreadReport(float(spread[D] / level.N_k), Block(digits, level.N), pair)


def sample_point(
    level: FamilyLevel, length: int, seed: int, offset: int | None = None
) -> Block:
    """A finite piece of a point of ``Σ_k``.

    Family blocks are drawn uniformly and independently with a generator seeded
    by ``seed``, concatenated, and cut after a uniform offset in ``[0, N_k)``
    (or the given ``offset``) to emulate shifts.
    """
    if not len(level):
        raise InvalidArgumentError(f"Level {level.k} is empty.")
    if length < level.N_k:
        raise InvalidArgumentError(f"length must be >= N_k={level.N_k}, got {length}.")
    rng = np.random.default_rng(seed)
    if offset is None:
        offset = int(rng.integers(0, level.N_k))
    if not 0 <= offset < level.N_k:
        raise InvalidArgumentError(f"offset must lie in 0..{level.N_k - 1}.")
    count = -(-(length + offset) // level.N_k)
    picks = rng.integers(0, len(level), size=count)
    symbols = level.blocks[picks].ravel()[offset : offset + length]
    return Block(symbols, level.N)


def resolve_step(n: int, schedule: Schedule) -> int:
    """Smallest ``k >= 1`` with ``n < m_k**2 N_k``."""
    k = 1
    while not n < schedule.m(k) ** 2 * schedule.N_k(k):
        k += 1
    return k


def fact_bound(m: int, eps_plus_delta: float) -> float:
    """``2/(m-2) + ((m-4)/(m-2)) 2 (eps + delta)``."""
    return 2 / (m - 2) + (m - 4) / (m - 2) * 2 * eps_plus_delta


def _status(n: int, k: int, f: Code, schedule: Schedule, built: int | None) -> str | None:
    if built is not None and k > built:
        return "not-applicable"
    if f not in code_family_for_step(schedule.N, k, schedule.windows):
        return "not-applicable"
    if n <= (schedule.m(k) - 2) * schedule.N_k(k):
        return "below-horizon"
    return None


def uncorrelation_check(
    x: Block,
    y: TestSequence,
    f: Code,
    n_list: Sequence[int],
    *,
    schedule: Schedule,
    built: int | None = None,
) -> DataFrame:
    """Compare ``A(n) = (1/n) sum_{i<=n} f(x_i .. x_{i+w-1}) y_i`` with the uniform bound.

    ``k`` is the smallest step with ``n < m_k**2 N_k``; the bound is
    :func:`fact_bound` at ``m_k`` and ``eps_k + delta_k``. Entries are
    ``not-applicable`` when ``f`` is not in ``F_k`` or ``k`` exceeds ``built``,
    and ``below-horizon`` when ``n <= (m_k - 2) N_k``.

    Returns
    -------
    One row per ``n`` with columns ``n``, ``k``, ``m``, ``A``, ``bound``,
    ``margin`` and ``status``.
    """
    n_list = sorted(set(int(n) for n in n_list))
    if not n_list or n_list[0] < 1:
        raise InvalidArgumentError("n_list must hold positive integers.")
    n_max = n_list[-1]
    if len(x) < n_max + f.window - 1:
        raise InvalidArgumentError(
            f"x must have length >= {n_max + f.window - 1} for n up to {n_max}."
        )
    if len(y) < n_max:
        raise InvalidArgumentError(f"y must cover n up to {n_max}, has {len(y)} terms.")
    image = apply_code(f, x).signs[:n_max].astype(np.float64)
    partial = np.cumsum(image * y.values[:n_max])
    rows = []
    for n in n_list:
        k = resolve_step(n, schedule)
        m = schedule.m(k)
        bound = fact_bound(m, schedule.eps_plus_delta(k))
        A = float(partial[n - 1] / n)
        status = _status(n, k, f, schedule, built)
        if status is None:
            status = "holds" if abs(A) <= bound else "violated"
        rows.append((n, k, m, A, bound, bound - abs(A), status))
    return DataFrame(rows, columns=["n", "k", "m", "A", "bound", "margin", "status"])


def default_n_list(schedule: Schedule, top: int) -> list[int]:
    """Test lengths ``(m_k - 1) N_k``, ``m_k N_k`` and ``m_k**2 N_k - 1`` for ``k <= top``."""
    values = set()
    for k in range(1, top + 1):
        m, N_k = schedule.m(k), schedule.N_k(k)
        values.update(((m - 1) * N_k, m * N_k, m * m * N_k - 1))
    return sorted(values)


def uniformity_sweep(
    level: FamilyLevel,
    y: TestSequence,
    f: Code,
    n_list: Sequence[int],
    *,
    schedule: Schedule,
    seed: int = 0,
    threads: int = 1,
) -> DataFrame:
    """Worst ``|A(n)|`` over every family block and every shift offset.

    Each block of ``level`` starts a point, continued by seeded random family
    blocks; all offsets ``0 .. N_k - 1`` into the starting block are tested.
    Blocks are spread over ``threads`` worker threads; the result does not
    depend on their number.

    Returns
    -------
    One row per ``n`` with the worst block and offset, the bound and the status.
    """
    n_list = sorted(set(int(n) for n in n_list))
    if not n_list or n_list[0] < 1:
        raise InvalidArgumentError("n_list must hold positive integers.")
    n_max = n_list[-1]
    if len(y) < n_max:
        raise InvalidArgumentError(f"y must cover n up to {n_max}, has {len(y)} terms.")
    N_k = level.N_k
    span = N_k + n_max + f.window - 1
    tail_count = -(-span // N_k)
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(level), size=(len(level), tail_count))
    columns = np.array(n_list) - 1
    y_head = y.values[:n_max]

    def block_worst(b: int) -> tuple[np.ndarray, np.ndarray]:
        long = np.concatenate([level.blocks[b], level.blocks[picks[b]].ravel()])[:span]
        image = f.table[window_codes(long, f.window, level.N)].astype(np.float64)
        windows = sliding_window_view(image, n_max)[:N_k]
        absolute = np.abs(np.cumsum(windows * y_head, axis=1)[:, columns] / (columns + 1))
        return absolute.max(axis=0), absolute.argmax(axis=0)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_block = list(pool.map(block_worst, range(len(level))))
    else:
        per_block = [block_worst(b) for b in range(len(level))]
    worst = np.zeros(len(n_list))
    worst_at = [(0, 0)] * len(n_list)
    # blocks in order, first maximum wins, whatever the thread count
    for b, (best, offsets) in enumerate(per_block):
        for i in range(len(n_list)):
            if best[i] > worst[i]:
                worst[i] = best[i]
                worst_at[i] = (b, int(offsets[i]))
    rows = []
    for i, n in enumerate(n_list):
        k = resolve_step(n, schedule)
        m = schedule.m(k)
        bound = fact_bound(m, schedule.eps_plus_delta(k))
        status = _status(n, k, f, schedule, level.k)
        if status is None:
            status = "holds" if worst[i] <= bound else "violated"
        rows.append((n, k, m, float(worst[i]), *worst_at[i], bound, bound - worst[i], status))
    table = DataFrame(
        rows, columns=["n", "k", "m", "max_abs_A", "block", "offset", "bound", "margin", "status"]
    )
    table["points"] = len(level) * N_k
    logger.info("uniformity sweep over %d points at level %d", len(level) * N_k, level.k)
    return table


@dataclass(frozen=True)
class DiameterReport:
    """Sampled estimate of the diameter of the invariant measures of ``Σ'_k``."""

    k: int
    j: int
    samples: int
    length: int
    n: int
    diameter: float
    tail: float
    r: float
    spread: float
    spread_bound: float
    theta_measured: float
    contract_rhs: float
    distances: list[float] = field(default_factory=list, repr=False)

    @property
    def holds(self) -> bool:
        """Whether the sampled diameter plus the tail stays below ``r``."""
        return self.diameter + self.tail < self.r

    @property
    def spread_holds(self) -> bool:
        """Whether the family spread stays within ``theta + 2 n q / N_k``."""
        return self.spread <= self.spread_bound

    @property
    def contract_holds(self) -> bool:
        """Whether the distances respect the closeness contract at the measured closeness."""
        return self.diameter + self.tail <= self.contract_rhs

    def to_dict(self) -> dict:
        """Flat record for the verification report."""
        return {
            "k": self.k,
            "j": self.j,
            "samples": self.samples,
            "length": self.length,
            "n": self.n,
            "diameter": self.diameter,
            "tail": self.tail,
            "r": self.r,
            "holds": self.holds,
            "spread": self.spread,
            "spread_bound": self.spread_bound,
            "spread_holds": self.spread_holds,
            "theta_measured": self.theta_measured,
            "contract_rhs": self.contract_rhs,
            "contract_holds": self.contract_holds,
        }


def diameter_report(
    level: FamilyLevel,
    ue: UELevel,
    samples: int,
    seed: int,
    *,
    length: int | None = None,
) -> DiameterReport:
    """Estimate how far apart invariant measures of ``Σ'_k`` can be.

    Draws ``samples`` points with :func:`sample_point`, forms their empirical
    measures at depth ``ue.n`` and takes the largest pairwise
    :func:`measure_distance`. The diameter plus the tail must stay below
    ``ue.r``. The frequency spread of the family is compared with
    ``theta + 2 n / N_p``, and the measured closeness with the contract
    ``N**n theta_measured + 2**(1 - n)``. This is a sample estimate, never the
    true diameter.
    """
    if level.bernstein is None:
        raise InvalidArgumentError(f"Level {level.k} is not a Bernstein step.")
    if samples < 2:
        raise InvalidArgumentError("diameter_report needs at least two samples.")
    length = length or 8 * level.N_k
    rng = np.random.default_rng([seed, level.k])
    seeds = rng.integers(0, 2**63 - 1, size=samples)
    measures = [
        empirical_measure(sample_point(level, length, int(s)), ue.n, source="sampled-orbit")
        for s in seeds
    ]
    distances, theta_measured = [], 0.0
    for mu, nu in combinations(measures, 2):
        distances.append(measure_distance(mu, nu, ue.n))
        for d in range(1, ue.n + 1):
            theta_measured = max(theta_measured, float(np.abs(mu.table(d) - nu.table(d)).max()))
    slack = ue.n * level.bernstein.q / level.N_k
    report = DiameterReport(
        k=level.k,
        j=ue.j,
        samples=samples,
        length=length,
        n=ue.n,
        diameter=max(distances),
        tail=tail_bound(ue.n),
        r=ue.r,
        spread=freq_spread(level, ue.n).max_spread,
        spread_bound=ue.theta + 2 * slack,
        theta_measured=theta_measured,
        contract_rhs=level.N**ue.n * theta_measured + tail_bound(ue.n),
        distances=distances,
    )
    logger.info(
        "diameter at level %d: %.4g + tail %.4g against r=%.4g",
        level.k,
        report.diameter,
        report.tail,
        ue.r,
    )
    return report
