"""Block families ``G_k`` and ``G'_k`` of the hierarchical construction.

Level ``k`` keeps the concatenations of ``m_k`` blocks of level ``k - 1`` that
pass the correlation test (R). At the Bernstein steps ``K_{m(j)}`` the survivors
must in addition pass the Bernstein test (F) against a much earlier reference
level ``p(j)``.
"""

from __future__ import annotations

import hashlib
import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from itertools import product

import numpy as np
from pandas import DataFrame
from scipy.stats import binomtest
from tqdm.auto import tqdm

from subshift_forge._core.config import Caps
from subshift_forge._core.errors import ConstructionFailedError, InvalidArgumentError
from subshift_forge._core.filters import (
    AbstractBlockTest,
    BernsteinFilter,
    CorrelationFilter,
    EmptyFilter,
    correlation_bound,
    required_sequence_length,
)
from subshift_forge.schedule import Schedule, UELevel, a_prime_table
from subshift_forge.sequences import TestSequence
from subshift_forge.symbolic import (
    Block,
    CodeFamily,
    apply_code,
    blocks_to_lines,
    code_family_for_step,
    freq,
    occurrence_counts,
)

logger = logging.getLogger(__name__)

BATCH_SIZE = 4096
IID_TRIALS = 2000


@dataclass(frozen=True)
class BernsteinRecord:
    """What happened at a Bernstein step."""

    p: int
    n: int
    q: int
    threshold: float
    gamma_bar: Fraction | float
    r_passes: int
    p_fail_given_bar: float
    worst_deviation: float
    p_fail_iid: float
    iid_trials: int
    bounds: tuple[dict, ...] = ()

    def to_dict(self) -> dict:
        """JSON form; an exact ``gamma_bar`` is written as ``"p/q"``."""
        return {
            "p": self.p,
            "n": self.n,
            "q": self.q,
            "threshold": self.threshold,
            "gamma_bar": _gamma_to_json(self.gamma_bar),
            "r_passes": self.r_passes,
            "p_fail_given_bar": self.p_fail_given_bar,
            "worst_deviation": self.worst_deviation,
            "p_fail_iid": self.p_fail_iid,
            "iid_trials": self.iid_trials,
            "bounds": list(self.bounds),
        }

    @classmethod
    def from_dict(cls, data: dict) -> BernsteinRecord:
        """Inverse of :meth:`to_dict`."""
        data = dict(data)
        data["gamma_bar"] = _gamma_from_json(data["gamma_bar"])
        data["bounds"] = tuple(data.get("bounds", ()))
        return cls(**data)


def _gamma_to_json(gamma: Fraction | float) -> str | float:
    if isinstance(gamma, Fraction):
        return f"{gamma.numerator}/{gamma.denominator}"
    return float(gamma)


def _gamma_from_json(value: str | float) -> Fraction | float:
    if isinstance(value, str):
        return Fraction(value)
    return float(value)


@dataclass(frozen=True, eq=False)
class FamilyLevel:
    """One level ``k`` of the construction.

    Parameters
    ----------
    k
        The step; ``k = 0`` is the alphabet itself.
    N
        Alphabet size.
    N_k
        Block length.
    m_k
        Multiplier: blocks are concatenations of ``m_k`` blocks of level ``k - 1``.
    blocks
        ``(count, N_k)`` array of symbols, one block per row.
    gamma
        Passing probability: an exact ``Fraction`` when every candidate was
        tested, otherwise a point estimate.
    tests
        ``("R",)`` or ``("R", "F")``.
    mode
        ``"root"``, ``"exhaustive"`` or ``"sampled"``.
    """

    k: int
    N: int
    N_k: int
    m_k: int
    blocks: np.ndarray
    gamma: Fraction | float
    tests: tuple[str, ...]
    mode: str
    draws: int
    passes: int
    log_cardinality: float
    gamma_ci: tuple[float, float] | None = None
    seed: int | None = None
    cap: int | None = None
    window: int | None = None
    eps_plus_delta: float | None = None
    bernstein: BernsteinRecord | None = None
    worst_correlation: float | None = None

    def __post_init__(self):
        blocks = np.ascontiguousarray(self.blocks, dtype=np.uint8)
        if blocks.ndim != 2 or blocks.shape[1] != self.N_k:
            raise InvalidArgumentError(
                f"Level {self.k} blocks must have shape (count, {self.N_k})."
            )
        blocks.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def __repr__(self) -> str:
        return (
            f"FamilyLevel(k={self.k}, N_k={self.N_k}, m_k={self.m_k}, blocks={len(self)}, "
            f"gamma={self.gamma}, mode='{self.mode}', tests={self.tests})"
        )

    @property
    def exact(self) -> bool:
        """Whether ``gamma`` was counted rather than sampled."""
        return self.mode in ("root", "exhaustive")

    @property
    def entropy(self) -> float:
        """``h(Σ_k) = log #G_k / N_k``, estimated when any level was sampled."""
        return self.log_cardinality / self.N_k

    def block(self, i: int) -> Block:
        """The ``i``-th block as a :class:`~subshift_forge.symbolic.Block`."""
        return Block(self.blocks[i], self.N)

    @cached_property
    def block_set(self) -> set[bytes]:
        """Raw bytes of every block, for membership tests."""
        return {row.tobytes() for row in self.blocks}

    @cached_property
    def blocks_sha256(self) -> str:
        """SHA-256 of the level's ``blocks.txt`` text."""
        text = "\n".join(blocks_to_lines(self.blocks)) + "\n"
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def to_meta(self) -> dict:
        """The ``meta.json`` record of this level."""
        return {
            "k": self.k,
            "N": self.N,
            "N_k": self.N_k,
            "m_k": self.m_k,
            "count": len(self),
            "gamma": _gamma_to_json(self.gamma),
            "gamma_ci": None if self.gamma_ci is None else list(self.gamma_ci),
            "tests": list(self.tests),
            "mode": self.mode,
            "draws": self.draws,
            "passes": self.passes,
            "log_cardinality": self.log_cardinality,
            "seed": self.seed,
            "cap": self.cap,
            "window": self.window,
            "eps_plus_delta": self.eps_plus_delta,
            "worst_correlation": self.worst_correlation,
            "bernstein": None if self.bernstein is None else self.bernstein.to_dict(),
            "blocks_sha256": self.blocks_sha256,
        }

    @classmethod
    def from_meta(cls, meta: dict, blocks: np.ndarray) -> FamilyLevel:
        """Rebuild a level from its ``meta.json`` record and stored blocks."""
        return cls(
            k=meta["k"],
            N=meta["N"],
            N_k=meta["N_k"],
            m_k=meta["m_k"],
            blocks=blocks,
            gamma=_gamma_from_json(meta["gamma"]),
            tests=tuple(meta["tests"]),
            mode=meta["mode"],
            draws=meta["draws"],
            passes=meta["passes"],
            log_cardinality=meta["log_cardinality"],
            gamma_ci=None if meta["gamma_ci"] is None else tuple(meta["gamma_ci"]),
            seed=meta["seed"],
            cap=meta["cap"],
            window=meta["window"],
            eps_plus_delta=meta["eps_plus_delta"],
            bernstein=None
            if meta["bernstein"] is None
            else BernsteinRecord.from_dict(meta["bernstein"]),
            worst_correlation=meta.get("worst_correlation"),
        )


def root_level(N: int) -> FamilyLevel:
    """Level 0: ``G_0 = Λ``, the ``N`` single-symbol blocks."""
    return FamilyLevel(
        k=0,
        N=N,
        N_k=1,
        m_k=1,
        blocks=np.arange(N, dtype=np.uint8)[:, None],
        gamma=Fraction(1),
        tests=(),
        mode="root",
        draws=N,
        passes=N,
        log_cardinality=math.log(N),
    )


@dataclass(frozen=True)
class BernsteinStats:
    """Short-block statistics of the reference family ``G'_p``.

    ``counts[b, D]`` counts occurrences of ``D`` (lexicographic index) in the
    ``b``-th reference block, ``totals[D]`` sums them over the family, and
    ``xbar = totals / (#G'_p N_p)`` is the mean frequency.
    """

    p: int
    n: int
    N: int
    N_p: int
    family: np.ndarray
    counts: np.ndarray
    totals: np.ndarray
    threshold: float = 1.0

    @property
    def xbar(self) -> np.ndarray:
        """Mean frequency of each ``D`` over the reference family."""
        return self.totals / (len(self.family) * self.N_p)

    def xbar_exact(self, D: Block) -> Fraction:
        """``xbar[D]`` as an exact fraction."""
        index = int(np.dot(D.symbols.astype(np.int64), self.N ** np.arange(self.n - 1, -1, -1)))
        return Fraction(int(self.totals[index]), len(self.family) * self.N_p)


def bernstein_stats(parent_p: FamilyLevel, n: int, threshold: float = 1.0) -> BernsteinStats:
    """Mean frequency ``xbar[D]`` over ``G'_p`` of every ``D`` in ``Λ^n``.

    Parameters
    ----------
    parent_p
        The reference level.
    n
        Short-block length.
    threshold
        The Bernstein threshold ``sqrt(8 beta)`` carried with the statistics.

    Usage
    -----
    >>> stats = sf.hierarchy.bernstein_stats(levels[1], n=2, threshold=ue.threshold)
    >>> stats.xbar
    """
    if n < 1 or n > parent_p.N_k:
        raise InvalidArgumentError(
            f"Short blocks of length {n} do not fit in blocks of length {parent_p.N_k}."
        )
    if not len(parent_p):
        raise InvalidArgumentError(f"Reference level {parent_p.k} is empty.")
    counts = occurrence_counts(parent_p.blocks, n, parent_p.N)
    return BernsteinStats(
        p=parent_p.k,
        n=n,
        N=parent_p.N,
        N_p=parent_p.N_k,
        family=parent_p.blocks,
        counts=counts,
        totals=counts.sum(axis=0),
        threshold=threshold,
    )


def correlation_test(
    B: Block,
    y: TestSequence,
    F: CodeFamily,
    eps_plus_delta: float,
    m: int,
    N_k: int,
) -> bool:
    """Whether ``B`` passes the correlation test (R).

    For every code ``f`` in ``F`` and every ``j = 1 .. (m**2 - 1) N_k`` the
    correlation of ``f(B)`` with ``y_j .. y_{j + |f(B)| - 1}`` must be smaller
    than ``2 eps_plus_delta`` in absolute value.
    """
    if len(B) != N_k:
        raise InvalidArgumentError(f"Block has length {len(B)}, expected N_k={N_k}.")
    test = CorrelationFilter(y.values, F, eps_plus_delta, m, N_k)
    return bool(test.mask(B.symbols[None, :])[0])


def bernstein_test(B: Block, stats: BernsteinStats) -> bool:
    """Whether ``B``, cut into reference blocks, passes the Bernstein test (F).

    Passes when for every ``D`` the mean frequency over the components is within
    ``stats.threshold`` of ``stats.xbar[D]``; equality passes.
    """
    return bool(BernsteinFilter(stats, len(B)).mask(B.symbols[None, :])[0])


@dataclass
class _Screened:
    digits: list[np.ndarray] = field(default_factory=list)
    draws: int = 0
    r_passes: int = 0
    passes: int = 0
    worst_correlation: float = 0.0
    best_correlation: float = math.inf
    worst_deviation: float = 0.0
    best_deviation: float = math.inf
    seen: set = field(default_factory=set)


class _CandidateScreen:
    """Screens candidate concatenations of parent blocks in a fixed order.

    Every candidate goes through ``test``, which must run the correlation test
    (R) first; its ``"F"`` scores, when present, are Bernstein deviations.
    Candidates are handled batch by batch; a batch is split into ordered
    sub-chunks for the thread pool and reassembled in candidate order, so the
    outcome does not depend on the number of threads.
    """

    def __init__(
        self,
        parent: FamilyLevel,
        m: int,
        test: AbstractBlockTest,
        threads: int,
    ):
        self.parent = parent
        self.m = m
        self.test = test
        self.threads = max(1, threads)

    def candidates(self, digits: np.ndarray) -> np.ndarray:
        return self.parent.blocks[digits].reshape(len(digits), -1)

    def _chunk(self, digits: np.ndarray):
        candidates = self.candidates(digits)
        passed, details = self.test.screen(candidates)
        r_pass, worst = details["R"]
        deviation = details["F"][1] if "F" in details else np.full(len(digits), np.nan)
        return r_pass, passed, worst, deviation

    def screen(self, digits: np.ndarray, pool: ThreadPoolExecutor | None):
        if pool is None or len(digits) < 2 * self.threads:
            return self._chunk(digits)
        parts = np.array_split(digits, self.threads)
        results = list(pool.map(self._chunk, parts))
        return tuple(np.concatenate(arrays) for arrays in zip(*results))


def _absorb(state: _Screened, digits, r_pass, passed, worst, deviation, max_family) -> bool:
    """Fold one screened batch into ``state``; ``True`` once the family is full."""
    cut = len(digits)
    full = False
    for i in np.flatnonzero(passed):
        key = digits[i].tobytes()
        if key in state.seen:
            continue
        state.seen.add(key)
        state.digits.append(digits[i])
        if len(state.digits) >= max_family:
            cut, full = i + 1, True
            break
    state.draws += cut
    state.r_passes += int(r_pass[:cut].sum())
    state.passes += int(passed[:cut].sum())
    if cut:
        state.worst_correlation = max(state.worst_correlation, float(worst[:cut].max()))
        state.best_correlation = min(state.best_correlation, float(worst[:cut].min()))
    deviation = deviation[:cut][~np.isnan(deviation[:cut])]
    if deviation.size:
        state.worst_deviation = max(state.worst_deviation, float(deviation.max()))
        state.best_deviation = min(state.best_deviation, float(deviation.min()))
    return full


def _run_screen(
    screen: _CandidateScreen,
    k: int,
    caps: Caps,
    seed: int,
    progress: bool,
) -> tuple[_Screened, str]:
    P, m = len(screen.parent), screen.m
    total = P**m
    state = _Screened()
    exhaustive = total <= caps.max_candidates
    pool = ThreadPoolExecutor(max_workers=screen.threads) if screen.threads > 1 else None
    try:
        if exhaustive:
            with tqdm(total=total, desc=f"level {k}", disable=not progress) as bar:
                for start in range(0, total, BATCH_SIZE):
                    index = np.arange(start, min(start + BATCH_SIZE, total))
                    digits = np.stack(np.unravel_index(index, (P,) * m), axis=1)
                    results = screen.screen(digits, pool)
                    # every candidate is distinct, so the family cap does not apply
                    _absorb(state, digits, *results, max_family=total + 1)
                    bar.update(len(index))
        else:
            rng = np.random.default_rng([seed, k])
            with tqdm(total=caps.max_candidates, desc=f"level {k}", disable=not progress) as bar:
                while state.draws < caps.max_candidates:
                    size = min(BATCH_SIZE, caps.max_candidates - state.draws)
                    digits = rng.integers(0, P, size=(size, m))
                    results = screen.screen(digits, pool)
                    before = state.draws
                    full = _absorb(state, digits, *results, max_family=caps.max_family)
                    bar.update(state.draws - before)
                    if full:
                        break
    finally:
        if pool is not None:
            pool.shutdown()
    return state, "exhaustive" if exhaustive else "sampled"


def _gamma(passes: int, draws: int, mode: str) -> tuple[Fraction | float, tuple | None]:
    if mode == "exhaustive":
        return Fraction(passes, draws), None
    ci = binomtest(passes, draws).proportion_ci(confidence_level=0.95, method="exact")
    return passes / draws, (float(ci.low), float(ci.high))


def _step_parameters(parent: FamilyLevel, schedule: Schedule, y: TestSequence, F_k: CodeFamily):
    k = parent.k + 1
    if k > schedule.horizon:
        raise InvalidArgumentError(f"Step {k} lies beyond the schedule horizon {schedule.horizon}.")
    if not len(parent):
        raise InvalidArgumentError(f"Parent level {parent.k} is empty.")
    m = schedule.m(k)
    N_k = m * parent.N_k
    required = required_sequence_length(m, N_k)
    if len(y) < required:
        raise InvalidArgumentError(
            f"Level {k} needs {required} terms of y (N_k={N_k}, m={m}), got {len(y)}."
        )
    correlation = CorrelationFilter(y.values, F_k, schedule.eps_plus_delta(k), m, N_k)
    return k, m, N_k, correlation


def _failed(k: int, state: _Screened, what: str) -> ConstructionFailedError:
    if what == "F":
        return ConstructionFailedError(
            f"No candidate at level {k} passed the Bernstein test after {state.draws} "
            f"draws ({state.r_passes} passed (R)); the closest came within "
            f"{state.best_deviation:.4g} of the mean",
            level=k,
            worst=state.worst_deviation,
            draws=state.draws,
        )
    return ConstructionFailedError(
        f"No candidate at level {k} passed the correlation test after {state.draws} "
        f"draws; the best candidate reached |correlation| {state.best_correlation:.4g}, "
        f"loosen eps + delta above half of that",
        level=k,
        worst=state.worst_correlation if state.draws else math.nan,
        draws=state.draws,
    )


def build_level_R(
    parent: FamilyLevel,
    schedule: Schedule,
    y: TestSequence,
    F_k: CodeFamily,
    caps: Caps,
    *,
    seed: int = 0,
    threads: int = 1,
    progress: bool = False,
) -> FamilyLevel:
    """Build ``G_k`` from ``G_{k-1}`` with the correlation test (R).

    When ``(#parent)**m_k <= caps.max_candidates`` every concatenation is tested
    and ``gamma`` is exact. Otherwise candidates are drawn uniformly with a
    generator seeded by ``(seed, k)`` until ``caps.max_family`` distinct passers
    or ``caps.max_candidates`` draws; ``gamma = passes / draws`` with a 95%
    binomial interval.

    Parameters
    ----------
    parent
        Level ``k - 1``.
    schedule
        Supplies ``m_k`` and ``eps_k + delta_k``.
    y
        The test sequence.
    F_k
        Codes of the test.
    caps
        Family and candidate limits.
    seed
        Run seed.
    threads
        Worker threads for candidate screening.
    progress
        Show a progress bar.

    Usage
    -----
    >>> level1 = sf.hierarchy.build_level_R(sf.hierarchy.root_level(2), schedule, y, F_1, caps)
    """
    k, m, N_k, correlation = _step_parameters(parent, schedule, y, F_k)
    test = correlation & EmptyFilter()
    screen = _CandidateScreen(parent, m, test, threads)
    state, mode = _run_screen(screen, k, caps, seed, progress)
    if not state.passes:
        raise _failed(k, state, "R")
    gamma, ci = _gamma(state.passes, state.draws, mode)
    blocks = screen.candidates(np.array(state.digits))
    level = FamilyLevel(
        k=k,
        N=parent.N,
        N_k=N_k,
        m_k=m,
        blocks=blocks,
        gamma=gamma,
        tests=tuple(test.names()),
        mode=mode,
        draws=state.draws,
        passes=state.passes,
        log_cardinality=m * parent.log_cardinality + math.log(gamma),
        gamma_ci=ci,
        seed=seed,
        cap=None if mode == "exhaustive" else caps.max_family,
        window=max(F_k.windows, default=None),
        eps_plus_delta=schedule.eps_plus_delta(k),
        worst_correlation=state.worst_correlation,
    )
    logger.info(
        "level %d (%s, R): %d of %d candidates passed, gamma=%.6g, kept %d blocks",
        k,
        mode,
        state.passes,
        state.draws,
        float(gamma),
        len(level),
    )
    return level


def _status(holds: bool, vacuous: bool = False) -> str:
    if vacuous:
        return "vacuous"
    return "holds" if holds else "fails"


def bernstein_trials(
    stats: BernsteinStats, q: int, beta: float, trials: int, seed: int
) -> DataFrame:
    """Empirical concentration of ``q`` iid reference blocks.

    Each trial draws ``q`` blocks of ``G'_p`` uniformly and independently and
    records, per ``D``, whether the mean frequency deviates from ``xbar[D]`` by
    more than ``sqrt(8 beta)``. The per-``D`` failure rates are compared with
    ``2 exp(-2 q beta)``, the rate of failing for some ``D`` with
    ``2 N**n exp(-2 q beta)``, each with a three-sigma binomial margin.

    Returns
    -------
    One row per ``D`` plus a final ``"any"`` row with columns ``D``,
    ``failures``, ``trials``, ``rate``, ``stderr``, ``bound``, ``holds``.
    """
    if q < 1 or trials < 1 or beta <= 0:
        raise InvalidArgumentError(f"Need q >= 1, trials >= 1, beta > 0; got {q}, {trials}, {beta}.")
    rng = np.random.default_rng(seed)
    G, size = len(stats.family), stats.counts.shape[1]
    scale = q * G * stats.N_p
    limit = math.sqrt(8 * beta) * scale
    per_D = np.zeros(size, dtype=np.int64)
    some = 0
    done = 0
    while done < trials:
        batch = min(BATCH_SIZE, trials - done)
        picks = rng.integers(0, G, size=(batch, q))
        sums = stats.counts[picks].sum(axis=1)
        failed = np.abs(G * sums - q * stats.totals[None, :]) > limit
        per_D += failed.sum(axis=0)
        some += int(failed.any(axis=1).sum())
        done += batch
    labels = blocks_to_lines(np.array(list(product(range(stats.N), repeat=stats.n))))
    rows = []
    single = 2 * math.exp(-2 * q * beta)
    for label, failures in zip(labels, per_D.tolist()):
        rows.append((label, failures, single))
    rows.append(("any", some, stats.N**stats.n * single))
    table = DataFrame(rows, columns=["D", "failures", "bound"])
    table["trials"] = trials
    table["rate"] = table["failures"] / trials
    table["stderr"] = np.sqrt(table["rate"] * (1 - table["rate"]) / trials)
    table["holds"] = table["rate"] <= table["bound"] + 3 * table["stderr"]
    return table[["D", "failures", "trials", "rate", "stderr", "bound", "holds"]]


def build_level_F(
    parent: FamilyLevel,
    schedule: Schedule,
    ue: UELevel,
    y: TestSequence,
    F_k: CodeFamily,
    caps: Caps,
    *,
    reference: FamilyLevel,
    stats: BernsteinStats | None = None,
    seed: int = 0,
    threads: int = 1,
    progress: bool = False,
    iid_trials: int = IID_TRIALS,
) -> FamilyLevel:
    """Build ``G'_k`` at a Bernstein step: test (R), then test (F) on the survivors.

    Records ``gamma_bar`` (the (R) passing rate), the empirical
    ``P(F | Ḡ_k)`` and ``gamma' = gamma_bar (1 - P(F | Ḡ_k))``, together with the
    bounds the argument relies on, each flagged ``holds``, ``fails`` or
    ``vacuous``:

    * ``q >= m_p**(k - p)`` for ``q = N_k / N_p``;
    * ``P(F) < 2 N**n exp(-2 q beta)`` in ``(G'_p)**q``, measured with iid trials;
    * ``P(Ḡ_k) > exp(-q beta)`` in ``(G'_p)**q``, from the estimated cardinalities;
    * ``P(F | Ḡ_k) < 2 N**n exp(-q beta)``;
    * ``P(F | Ḡ_k) < alpha(m) ((8.5/9)**(k-1) - (8/9)**(k-1))``;
    * ``h(Σ'_p) - h(Σ̄_k) < log 2 / (N_p (m_p - 1))``.

    Parameters
    ----------
    parent
        Level ``k - 1``.
    schedule
        The schedule; ``k`` must equal ``ue.K``.
    ue
        The unique-ergodicity level served by this step.
    y
        The test sequence.
    F_k
        Codes of the correlation test.
    caps
        Family and candidate limits.
    reference
        The already built level ``p = ue.p``.
    stats
        Precomputed :func:`bernstein_stats` of ``reference``; computed if missing.
    """
    k, m, N_k, correlation = _step_parameters(parent, schedule, y, F_k)
    if ue.K != k or ue.p is None:
        raise InvalidArgumentError(f"UE level {ue.j} has its Bernstein step at {ue.K}, not {k}.")
    if reference.k != ue.p:
        raise InvalidArgumentError(f"Reference level must be step {ue.p}, got {reference.k}.")
    if stats is None:
        stats = bernstein_stats(reference, ue.n, ue.threshold)
    bernstein = BernsteinFilter(stats, N_k)
    test = correlation & bernstein
    screen = _CandidateScreen(parent, m, test, threads)
    state, mode = _run_screen(screen, k, caps, seed, progress)
    if not state.r_passes:
        raise _failed(k, state, "R")
    if not state.passes:
        raise _failed(k, state, "F")

    gamma, ci = _gamma(state.passes, state.draws, mode)
    gamma_bar, _ = _gamma(state.r_passes, state.draws, mode)
    p_fail_given_bar = 1 - state.passes / state.r_passes
    q = bernstein.q
    p, n, beta, N = ue.p, ue.n, ue.beta, parent.N
    m_p = schedule.m(p)
    trials = bernstein_trials(stats, q, beta, iid_trials, seed=seed + k)
    p_fail_iid = float(trials["rate"].iloc[-1])

    log_bar = m * parent.log_cardinality + math.log(gamma_bar)
    pro1 = 2 * N**n * math.exp(-2 * q * beta)
    conditional = 2 * N**n * math.exp(-q * beta)
    alpha_m = schedule.alpha(m)
    e_side = alpha_m * ((17 / 18) ** (k - 1) - (8 / 9) ** (k - 1))
    log_p_bar = log_bar - q * reference.log_cardinality
    h_gap = reference.entropy - log_bar / N_k
    ent2 = math.log(2) / (reference.N_k * (m_p - 1))
    bounds = (
        {"name": "q >= m_p^(k-p)", "measured": q, "bound": m_p ** (k - p),
         "status": _status(q >= m_p ** (k - p))},
        {"name": "P(F) < 2N^n exp(-2q beta)", "measured": p_fail_iid, "bound": pro1,
         "status": _status(p_fail_iid < pro1, pro1 >= 1)},
        {"name": "log P(G_bar) > -q beta", "measured": log_p_bar, "bound": -q * beta,
         "status": _status(log_p_bar > -q * beta)},
        {"name": "P(F|G_bar) < 2N^n exp(-q beta)", "measured": p_fail_given_bar,
         "bound": conditional, "status": _status(p_fail_given_bar < conditional, conditional >= 1)},
        {"name": "P(F|G_bar) < (E) right side", "measured": p_fail_given_bar, "bound": e_side,
         "status": _status(p_fail_given_bar < e_side)},
        {"name": "h(S'_p) - h(S_bar_k) < log2/(N_p(m_p-1))", "measured": h_gap, "bound": ent2,
         "status": _status(h_gap < ent2)},
    )  # fmt: skip
    record = BernsteinRecord(
        p=p,
        n=n,
        q=q,
        threshold=stats.threshold,
        gamma_bar=gamma_bar,
        r_passes=state.r_passes,
        p_fail_given_bar=p_fail_given_bar,
        worst_deviation=state.worst_deviation,
        p_fail_iid=p_fail_iid,
        iid_trials=iid_trials,
        bounds=bounds,
    )
    blocks = screen.candidates(np.array(state.digits))
    level = FamilyLevel(
        k=k,
        N=N,
        N_k=N_k,
        m_k=m,
        blocks=blocks,
        gamma=gamma,
        tests=tuple(sorted(test.names(), reverse=True)),
        mode=mode,
        draws=state.draws,
        passes=state.passes,
        log_cardinality=m * parent.log_cardinality + math.log(gamma),
        gamma_ci=ci,
        seed=seed,
        cap=None if mode == "exhaustive" else caps.max_family,
        window=max(F_k.windows, default=None),
        eps_plus_delta=schedule.eps_plus_delta(k),
        bernstein=record,
        worst_correlation=state.worst_correlation,
    )
    logger.info(
        "level %d (%s, R+F): %d passed (R), %d passed both of %d, gamma_bar=%.6g, gamma'=%.6g",
        k,
        mode,
        state.r_passes,
        state.passes,
        state.draws,
        float(gamma_bar),
        float(gamma),
    )
    return level


def build_hierarchy(
    schedule: Schedule,
    y: TestSequence,
    caps: Caps,
    *,
    seed: int = 0,
    threads: int = 1,
    progress: bool = False,
    levels: Sequence[FamilyLevel] = (),
    on_level: Callable[[FamilyLevel], None] | None = None,
    top: int | None = None,
) -> list[FamilyLevel]:
    """Build levels ``0 .. top`` (default ``schedule.horizon``) after any given ``levels``.

    Steps that are Bernstein steps of a resolved UE level use
    :func:`build_level_F`, all others :func:`build_level_R`. ``on_level`` is
    called with each newly built level.
    """
    top = schedule.horizon if top is None else top
    if not 0 <= top <= schedule.horizon:
        raise InvalidArgumentError(f"top={top} outside 0..{schedule.horizon}.")
    built = list(levels) or [root_level(schedule.N)]
    stats_cache: dict[int, BernsteinStats] = {}
    for k in range(len(built), top + 1):
        F_k = code_family_for_step(schedule.N, k, schedule.windows)
        ue = schedule.ue_for_step(k)
        parent = built[-1]
        if ue is not None:
            reference = built[ue.p]
            if ue.j not in stats_cache:
                stats_cache[ue.j] = bernstein_stats(reference, ue.n, ue.threshold)
            level = build_level_F(
                parent, schedule, ue, y, F_k, caps,
                reference=reference, stats=stats_cache[ue.j],
                seed=seed, threads=threads, progress=progress,
            )  # fmt: skip
        else:
            level = build_level_R(
                parent, schedule, y, F_k, caps, seed=seed, threads=threads, progress=progress
            )
        built.append(level)
        if on_level is not None:
            on_level(level)
    return built


def _row(name: str, k: int, lhs: float, rhs: float, holds: bool, gating: bool, estimated: bool) -> dict:
    return {
        "name": name,
        "k": k,
        "lhs": float(lhs),
        "rhs": float(rhs),
        "holds": bool(holds),
        "gating": gating,
        "estimated": estimated,
    }


def check_gamma_chain(levels: Sequence[FamilyLevel], schedule: Schedule) -> DataFrame:
    """Evaluate the passing-probability inequalities level by level.

    Rows cover (C), (C'), the corollary ``gamma_k > 1 - 2**-(m_k + 2)``, (C̄)
    and the two links of the final product estimate at Bernstein steps, (A')
    wherever its range of steps is built, and ``gamma' > 1/2``. Rows gate only
    in faithful mode.
    """
    gating = schedule.mode == "faithful"
    rows = []
    gammas = {lvl.k: float(lvl.gamma) for lvl in levels if lvl.k >= 1}
    for lvl in levels:
        k = lvl.k
        if k < 1:
            continue
        est = not lvl.exact
        g = float(lvl.gamma)
        a = schedule.alpha(lvl.m_k)
        c = 1 - a * (8 / 9) ** (k - 1)
        c_prime = 1 - a * (17 / 18) ** (k - 1)
        rows.append(_row("(C)", k, g, c, g > c, gating, est))
        rows.append(_row("(C')", k, g, c_prime, g > c_prime, gating, est))
        corollary = 1 - 2.0 ** -(lvl.m_k + 2)
        rows.append(_row("gamma > 1 - 2^-(m+2)", k, g, corollary, g > corollary, gating, est))
        rows.append(_row("gamma' > 1/2", k, g, 0.5, g > 0.5, False, est))
        if lvl.bernstein is not None:
            g_bar = float(lvl.bernstein.gamma_bar)
            rows.append(_row("(C bar)", k, g_bar, c, g_bar > c, gating, est))
            e_side = a * ((17 / 18) ** (k - 1) - (8 / 9) ** (k - 1))
            middle = (1 - a * (8 / 9) ** (k - 1)) * (1 - e_side)
            rows.append(_row("gamma' > product", k, g, middle, g > middle, gating, est))
            rows.append(_row("product > 1 - alpha(8.5/9)^(k-1)", k, middle, c_prime, middle > c_prime, gating, est))
        p_k = schedule.p(k)
        if all(s in gammas for s in range(p_k + 1, k)):
            table = a_prime_table(schedule, gammas, k)
            head = table.iloc[0]
            rows.append(_row("(A')", k, head["lhs"], head["rhs"], head["holds"], gating, est))
    return DataFrame(rows, columns=["name", "k", "lhs", "rhs", "holds", "gating", "estimated"])


def reverify_level(
    level: FamilyLevel,
    parent: FamilyLevel,
    schedule: Schedule,
    y: TestSequence,
    *,
    reference: FamilyLevel | None = None,
) -> DataFrame:
    """Re-check every stored block with plain loops, independent of the builder.

    Checks block length, membership of the ``m_k`` pieces in ``parent``, the
    correlation test via ``np.correlate`` per block and code, and at Bernstein
    steps membership of the components in ``reference`` and the Bernstein test
    via exact :func:`~subshift_forge.symbolic.freq` counts. For exhaustive
    levels the count identity ``#G_k = gamma (#G_{k-1})**m_k`` is checked too.

    Returns
    -------
    One row per check with columns ``check``, ``k``, ``failures``, ``total`` and
    ``holds``.
    """
    k = level.k
    rows = []
    m = level.m_k
    F_k = code_family_for_step(schedule.N, k, schedule.windows)
    eps_plus_delta = schedule.eps_plus_delta(k)

    bad_length = sum(len(row) != level.N_k or level.N_k != m * parent.N_k for row in level.blocks)
    rows.append(("length N_k = m_k N_(k-1)", bad_length, len(level)))

    parents = parent.block_set
    not_nested = 0
    for row in level.blocks:
        pieces = [row[i : i + parent.N_k] for i in range(0, level.N_k, parent.N_k)]
        if any(piece.tobytes() not in parents for piece in pieces):
            not_nested += 1
    rows.append((f"pieces in G_{parent.k}", not_nested, len(level)))
    rows.append(("blocks distinct", len(level) - len(level.block_set), len(level)))

    required = required_sequence_length(m, level.N_k)
    failed_R = 0
    if len(y) < required:
        failed_R = len(level)
    else:
        for row in level.blocks:
            block = Block(row, level.N)
            for f in F_k:
                image = apply_code(f, block).signs.astype(np.float64)
                segment = y.values[: (m * m - 1) * level.N_k + len(image) - 1]
                sums = np.correlate(segment, image, mode="valid")
                if np.any(np.abs(sums) >= correlation_bound(eps_plus_delta, len(image))):
                    failed_R += 1
                    break
    rows.append(("correlation test (R)", failed_R, len(level)))

    if level.bernstein is not None:
        record = level.bernstein
        if reference is None or reference.k != record.p:
            raise InvalidArgumentError(f"Level {k} needs reference level {record.p}.")
        members = reference.block_set
        outside, failed_F = 0, 0
        shorts = [Block(np.array(D), level.N) for D in product(range(level.N), repeat=record.n)]
        G = len(reference)
        xbar = {
            D: sum((freq(reference.block(i), D) for i in range(G)), Fraction(0)) / G
            for D in shorts
        }
        threshold = Fraction(record.threshold)
        for row in level.blocks:
            parts = [row[i : i + reference.N_k] for i in range(0, level.N_k, reference.N_k)]
            if any(part.tobytes() not in members for part in parts):
                outside += 1
                continue
            blocks = [Block(part, level.N) for part in parts]
            for D in shorts:
                mean = sum((freq(b, D) for b in blocks), Fraction(0)) / len(blocks)
                if abs(mean - xbar[D]) > threshold:
                    failed_F += 1
                    break
        rows.append((f"components in G'_{record.p}", outside, len(level)))
        rows.append(("Bernstein test (F)", failed_F, len(level)))

    if level.mode == "exhaustive":
        expected = level.gamma * len(parent) ** m
        rows.append(("#G_k = gamma #G_(k-1)^m_k", int(expected != len(level)), 1))

    table = DataFrame(rows, columns=["check", "failures", "total"])
    table.insert(1, "k", k)
    table["holds"] = table["failures"] == 0
    return table
