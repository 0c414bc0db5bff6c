"""Parameter schedule of the construction.

Multipliers ``m_k``, jump indices ``K_m``, the ``eps_k``/``delta_k`` rules and the
unique-ergodicity levels ``r(j) -> (n, theta, beta, p, m, K)``.
"""

from __future__ import annotations

import logging
import math
import warnings
from bisect import bisect_right
from collections.abc import Mapping
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Literal

from pandas import DataFrame

from subshift_forge._core.config import ScheduleConfig, check_alpha
from subshift_forge._core.errors import InvalidArgumentError, ScheduleError
from subshift_forge.symbolic import window_for_step

logger = logging.getLogger(__name__)

Rule = Literal["b", "b_prime"]
BASES: dict[str, Fraction] = {"b": Fraction(8, 9), "b_prime": Fraction(17, 18)}
# jump search gives up on (E) after this many increments
MAX_E_SEARCH = 1_000_000


@dataclass(frozen=True)
class Alpha:
    """The function ``m -> alpha(m)``: a table with a default value."""

    table: Mapping[int, float] = field(default_factory=dict)
    default: float = 1.0

    @classmethod
    def parse(cls, spec: str | Mapping) -> Alpha:
        """Read ``"const:<v>"`` or ``{"<m>": v, ..., "default": v}``."""
        check_alpha(spec)
        if isinstance(spec, str):
            return cls(default=float(spec.split(":", 1)[1]))
        table = {int(k): float(v) for k, v in spec.items() if k != "default"}
        return cls(table=table, default=float(spec["default"]))

    def __call__(self, m: int) -> float:
        return self.table.get(m, self.default)

    def to_json(self) -> str | dict:
        """The config form accepted by :meth:`parse`."""
        if not self.table:
            return f"const:{self.default!r}"
        return {**{str(k): v for k, v in sorted(self.table.items())}, "default": self.default}


@dataclass(frozen=True)
class DecayRule:
    """``k -> c / ln(k + offset)``, positive and slowly decreasing to zero.

    The default offset ``e`` gives ``c / ln(k + e)``; offset 2 with
    ``c = c0 ln 3`` gives ``c0 ln 3 / ln(k + 2)``, which starts at ``c0``.
    """

    c: float
    offset: float = math.e

    def __call__(self, k: int) -> float:
        return self.c / math.log(k + self.offset)


@dataclass(frozen=True)
class UELevel:
    """One unique-ergodicity target ``r(j)`` and the parameters derived from it.

    ``p``, ``m`` and ``K`` stay ``None`` when no reference step was found
    within the schedule horizon.
    """

    j: int
    r: float
    n: int
    theta: float
    p: int | None = None
    m: int | None = None
    K: int | None = None

    @property
    def beta(self) -> float:
        """``theta**2 / 128``."""
        return self.theta**2 / 128

    @property
    def threshold(self) -> float:
        """Bernstein threshold ``sqrt(8 beta)``, which equals ``theta / 4``."""
        return self.theta / 4

    @property
    def resolved(self) -> bool:
        """Whether a reference step and a jump index were found."""
        return self.p is not None and self.K is not None

    def to_dict(self) -> dict:
        """JSON form, ``beta`` included."""
        return {
            "j": self.j,
            "r": self.r,
            "n": self.n,
            "theta": self.theta,
            "beta": self.beta,
            "p": self.p,
            "m": self.m,
            "K": self.K,
        }


@dataclass(frozen=True)
class Schedule:
    """All numeric parameters of a construction up to step ``horizon``.

    ``jumps`` maps each multiplier ``m > M`` to its jump index ``K_m``;
    ``K_M = 1`` is implicit, so ``m_1 = M``.
    """

    N: int
    M: int
    alpha: Alpha
    eps: DecayRule
    delta: DecayRule
    jumps: dict[int, int]
    ue_levels: tuple[UELevel, ...]
    horizon: int
    multipliers: tuple[int, ...]
    windows: dict[str, int] = field(default_factory=lambda: {"default": 1})
    mode: str = "desk"
    rule: Rule = "b_prime"
    faithful_jumps: dict[int, int] = field(default_factory=dict)

    def __repr__(self) -> str:
        return (
            f"Schedule(N={self.N}, M={self.M}, mode='{self.mode}', horizon={self.horizon}, "
            f"jumps={self.jumps}, ue_levels={len(self.ue_levels)})"
        )

    @cached_property
    def _sorted_jumps(self) -> list[int]:
        return sorted(self.jumps.values())

    def m(self, k: int) -> int:
        """Multiplier ``m_k = M + #{m > M : K_m <= k}`` for ``k >= 1``."""
        if k < 1:
            raise InvalidArgumentError(f"Multipliers start at step 1, got {k}.")
        return self.M + bisect_right(self._sorted_jumps, k)

    def N_k(self, k: int) -> int:
        """Block length ``N_k = m_1 ... m_k``, with ``N_0 = 1``."""
        return math.prod(self.m(i) for i in range(1, k + 1))

    def log_N_k(self, k: int) -> float:
        """``log N_k``, summed term by term."""
        return math.fsum(math.log(self.m(i)) for i in range(1, k + 1))

    def p(self, k: int) -> int:
        """Reference index ``p_k = m_k - M``."""
        return self.m(k) - self.M

    def eps_plus_delta(self, k: int) -> float:
        """``eps_k + delta_k``."""
        return self.eps(k) + self.delta(k)

    def window(self, k: int) -> int:
        """Code window used at step ``k``."""
        return window_for_step(k, self.windows)

    def ue_for_step(self, k: int) -> UELevel | None:
        """The unique-ergodicity level whose Bernstein step is ``k``, if any."""
        for ue in self.ue_levels:
            if ue.resolved and ue.K == k:
                return ue
        return None

    @property
    def bernstein_steps(self) -> list[int]:
        """Steps within the horizon that run the Bernstein test."""
        return sorted(ue.K for ue in self.ue_levels if ue.resolved and ue.K <= self.horizon)

    def to_dict(self) -> dict:
        """JSON form written to ``schedule.json``."""
        return {
            "N": self.N,
            "M": self.M,
            "alpha": self.alpha.to_json(),
            "c_eps": self.eps.c,
            "c_delta": self.delta.c,
            "decay_offset": self.eps.offset,
            "jumps": {str(m): K for m, K in sorted(self.jumps.items())},
            "faithful_jumps": {str(m): K for m, K in sorted(self.faithful_jumps.items())},
            "ue_levels": [ue.to_dict() for ue in self.ue_levels],
            "horizon": self.horizon,
            "multipliers": list(self.multipliers),
            "windows": dict(self.windows),
            "mode": self.mode,
            "rule": self.rule,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Schedule:
        """Inverse of :meth:`to_dict`; no validation is performed."""
        ue_levels = tuple(
            UELevel(
                j=d["j"], r=d["r"], n=d["n"], theta=d["theta"], p=d["p"], m=d["m"], K=d["K"]
            )
            for d in data["ue_levels"]
        )
        return cls(
            N=data["N"],
            M=data["M"],
            alpha=Alpha.parse(data["alpha"]),
            eps=DecayRule(data["c_eps"], data.get("decay_offset", math.e)),
            delta=DecayRule(data["c_delta"], data.get("decay_offset", math.e)),
            jumps={int(m): int(K) for m, K in data["jumps"].items()},
            ue_levels=ue_levels,
            horizon=data["horizon"],
            multipliers=tuple(data["multipliers"]),
            windows=data.get("windows", {"default": 1}),
            mode=data.get("mode", "desk"),
            rule=data.get("rule", "b_prime"),
            faithful_jumps={int(m): int(K) for m, K in data.get("faithful_jumps", {}).items()},
        )


def closeness_params(N: int, r: float) -> tuple[int, float]:
    """Block length ``n`` and closeness ``theta`` that certify distance below ``r``.

    ``n`` is the smallest integer with ``2**(1 - n) < r / 2`` and
    ``theta = r / (2 N**n)``. Two measures whose values on every cylinder of
    length ``n`` differ by less than ``theta`` are then closer than
    ``N**n theta + 2**(1 - n) < r``.

    Usage
    -----
    >>> sf.schedule.closeness_params(2, 0.5)
    (4, 0.015625)
    """
    if not 0 < r <= 2:
        raise InvalidArgumentError(f"r must lie in (0, 2], got {r}.")
    n = 1
    while 2.0 ** (1 - n) >= r / 2:
        n += 1
    return n, r / (2 * N**n)


def jump_condition(m: int, alpha: float, K: int, rule: Rule = "b_prime") -> bool:
    """Exact check of ``9 alpha(m) base**(K - 1) < 2**-(m + 2)``."""
    base = BASES[rule]
    return 9 * Fraction(alpha) * base ** (K - 1) < Fraction(1, 2 ** (m + 2))


def jump_index(m: int, alpha, rule: Rule = "b_prime", lower: int = 0) -> int:
    """Smallest ``K > lower`` with ``9 alpha(m) base**(K - 1) < 2**-(m + 2)``.

    Parameters
    ----------
    m
        The multiplier.
    alpha
        A callable ``m -> alpha(m)`` or a positive number.
    rule
        ``"b"`` for base ``8/9``, ``"b_prime"`` for base ``8.5/9``.
    lower
        The previous jump index; the result is forced above it.

    Usage
    -----
    >>> sf.schedule.jump_index(6, 1.0)
    137
    """
    if rule not in BASES:
        raise InvalidArgumentError(f"Unknown rule {rule!r}; use 'b' or 'b_prime'.")
    a = alpha(m) if callable(alpha) else float(alpha)
    if a <= 0:
        raise InvalidArgumentError(f"alpha({m}) must be positive, got {a}.")
    base = BASES[rule]
    estimate = (math.log(9 * a) + (m + 2) * math.log(2)) / -math.log(base)
    K = max(1, math.floor(estimate) + 2)
    while K > 1 and jump_condition(m, a, K - 1, rule):
        K -= 1
    while not jump_condition(m, a, K, rule):
        K += 1
    return max(K, lower + 1)


def requirement_E_sides(
    *, n: int, N: int, beta: float, m_p: int, p: int, alpha_m: float, K: int
) -> tuple[float, float]:
    """Natural logs of both sides of (E) at ``K_m = K``.

    Left: ``2 N**n exp(-beta m_p**(K - p))``. Right:
    ``alpha(m) ((8.5/9)**(K - 1) - (8/9)**(K - 1))``.
    """
    if K <= p:
        raise InvalidArgumentError(f"(E) needs K > p, got K={K}, p={p}.")
    exponent = (K - p) * math.log(m_p)
    if exponent > 700:
        lhs = -math.inf
    else:
        lhs = math.log(2) + n * math.log(N) - beta * math.exp(exponent)
    if K == 1:
        rhs = -math.inf
    else:
        rhs = (
            math.log(alpha_m)
            + (K - 1) * math.log(17 / 18)
            + math.log1p(-((16 / 17) ** (K - 1)))
        )
    return lhs, rhs


def requirement_E(level: UELevel, schedule: Schedule, K_candidate: int) -> bool:
    """Whether (E) holds for ``level`` with its jump index set to ``K_candidate``.

    Evaluated in log space; never overflows.
    """
    if level.p is None:
        raise InvalidArgumentError(f"UE level {level.j} has no reference step.")
    lhs, rhs = requirement_E_sides(
        n=level.n,
        N=schedule.N,
        beta=level.beta,
        m_p=schedule.m(level.p),
        p=level.p,
        alpha_m=schedule.alpha(level.p + schedule.M),
        K=K_candidate,
    )
    return lhs < rhs


def _ent1(log_N_p: float, m_p: int, n: int, beta: float, theta: float) -> tuple[bool, bool]:
    first = math.log(2) / (m_p - 1) < beta
    second = math.log(n) - log_N_p < math.log(theta / 4)
    return first, second


def build_schedule(config: ScheduleConfig) -> Schedule:
    """Fix ``K_m`` for ``m = M+1, M+2, ...`` until the horizon is passed.

    Each jump index is the smallest one satisfying the configured rule and
    exceeding the previous index. When ``m = p(j) + M`` for some level ``j``,
    ``K_m`` is further raised until (E) holds. The reference step ``p(j)`` is the
    smallest ``p`` satisfying (ent1), decided from already fixed entries before
    ``K_{m(j)}`` is chosen.

    In desk mode ``desk_jumps`` and ``desk_reference`` override these choices;
    the conditions they break are reported by :func:`validate_schedule`, not
    enforced.

    Parameters
    ----------
    config
        Schedule inputs.

    Returns
    -------
    The schedule up to step ``config.caps.max_level``.

    Usage
    -----
    >>> schedule = sf.schedule.build_schedule(config.schedule)
    >>> sf.schedule.validate_schedule(schedule)
    """
    alpha = Alpha.parse(config.alpha)
    horizon = config.caps.max_level
    desk = config.mode == "desk"
    desk_jumps = config.desk_jumps if desk else {}
    desk_reference = config.desk_reference if desk else {}
    if not desk and (config.desk_jumps or config.desk_reference):
        warnings.warn(
            "Faithful mode ignores 'desk_jumps' and 'desk_reference'.",
            UserWarning,
            stacklevel=2,
        )
    for j, p in desk_reference.items():
        if p >= horizon:
            raise ScheduleError(
                f"desk reference p({j})={p} is not below the horizon {horizon}",
                "p(j) < horizon",
            )

    ue_params = []
    for j, r in enumerate(config.r, start=1):
        n, theta = closeness_params(config.N, r)
        ue_params.append({"j": j, "r": r, "n": n, "theta": theta, "p": None, "K": None})

    jumps: dict[int, int] = {}
    faithful: dict[int, int] = {}
    previous = 1
    m = config.M
    while True:
        m += 1
        # p = m - M is the candidate reference step for m(j) = m. Jumps increase
        # strictly from K_M = 1, so p <= K_{m-1}: m_p and N_p read fixed jumps only
        p = m - config.M
        fixed = sorted(jumps.values())
        m_p = config.M + bisect_right(fixed, p)
        log_N_p = math.fsum(
            math.log(config.M + bisect_right(fixed, i)) for i in range(1, p + 1)
        )
        owners = []
        for ue in ue_params:
            if ue["p"] is not None:
                continue
            if ue["j"] in desk_reference:
                if desk_reference[ue["j"]] == p:
                    owners.append(ue)
            elif p < horizon and all(
                _ent1(log_N_p, m_p, ue["n"], ue["theta"] ** 2 / 128, ue["theta"])
            ):
                owners.append(ue)
        lower = max(previous, p) if owners else previous
        K = jump_index(m, alpha, config.rule, lower=previous)
        faithful[m] = K
        if m in desk_jumps:
            K = desk_jumps[m]
            if K <= previous:
                raise ScheduleError(
                    f"desk jump K_{m}={K} does not exceed K_{m - 1}={previous}",
                    "K_m strictly increasing",
                )
            if owners and K <= p:
                raise ScheduleError(
                    f"desk jump K_{m}={K} is not above the reference step p={p}",
                    "p(j) < K_m(j)",
                )
        elif owners:
            K = max(K, lower + 1)
            for ue in owners:
                for _ in range(MAX_E_SEARCH):
                    lhs, rhs = requirement_E_sides(
                        n=ue["n"],
                        N=config.N,
                        beta=ue["theta"] ** 2 / 128,
                        m_p=m_p,
                        p=p,
                        alpha_m=alpha(m),
                        K=K,
                    )
                    if lhs < rhs:
                        break
                    K += 1
                else:
                    raise ScheduleError(
                        f"requirement (E) for r({ue['j']}) fails up to K={K}",
                        "requirement (E)",
                    )
            faithful[m] = K
        for ue in owners:
            ue["p"], ue["K"], ue["m_p"] = p, K, m_p
        jumps[m] = K
        previous = K
        logger.debug("fixed K_%d = %d", m, K)
        if K > horizon:
            break

    ue_levels = tuple(
        UELevel(
            j=ue["j"],
            r=ue["r"],
            n=ue["n"],
            theta=ue["theta"],
            p=ue["p"],
            m=None if ue["p"] is None else ue["p"] + config.M,
            K=ue["K"],
        )
        for ue in ue_params
    )
    for ue in ue_levels:
        if not ue.resolved:
            warnings.warn(
                f"No reference step for r({ue.j})={ue.r} within the horizon {horizon}; "
                "no Bernstein step is scheduled for it.",
                UserWarning,
                stacklevel=2,
            )
    fixed = sorted(jumps.values())
    multipliers = tuple(config.M + bisect_right(fixed, k) for k in range(1, horizon + 1))
    for ue in ue_params:
        if ue["p"] is not None:
            assert ue["m_p"] == config.M + bisect_right(fixed, ue["p"]), ue
    schedule = Schedule(
        N=config.N,
        M=config.M,
        alpha=alpha,
        eps=DecayRule(config.c_eps, config.decay_offset),
        delta=DecayRule(config.c_delta, config.decay_offset),
        jumps=jumps,
        ue_levels=ue_levels,
        horizon=horizon,
        multipliers=multipliers,
        windows=dict(config.windows),
        mode=config.mode,
        rule=config.rule,
        faithful_jumps=faithful,
    )
    logger.info("built %r", schedule)
    return schedule


def _row(name: str, lhs, rhs, holds: bool, gating: bool, **params) -> dict:
    return {
        "name": name,
        "lhs": float(lhs),
        "rhs": float(rhs),
        "holds": bool(holds),
        "gating": bool(gating),
        "params": params,
    }


def validate_schedule(schedule: Schedule) -> DataFrame:
    """Check every schedule condition and invariant.

    One row per checked inequality with columns ``name``, ``lhs``, ``rhs``,
    ``holds``, ``gating`` and ``params``. Structural invariants always gate;
    the construction's own inequalities ((b'), (E), (ent1)) gate only in
    faithful mode.

    Usage
    -----
    >>> report = sf.schedule.validate_schedule(schedule)
    >>> report[~report["holds"]]
    """
    faithful = schedule.mode == "faithful"
    rows = []
    M = schedule.M
    ordered = sorted(schedule.jumps.items())
    previous = 1
    for m, K in ordered:
        a = schedule.alpha(m)
        rows.append(
            _row(
                "jump (b')" if schedule.rule == "b_prime" else "jump (b)",
                9 * a * float(BASES[schedule.rule]) ** (K - 1),
                2.0 ** -(m + 2),
                jump_condition(m, a, K, schedule.rule),
                faithful,
                m=m,
                K=K,
                faithful_K=schedule.faithful_jumps.get(m),
            )
        )
        rows.append(
            _row("K strictly increasing", previous, K, K > previous, True, m=m)
        )
        previous = K

    rebuilt = [M + sum(1 for K in schedule.jumps.values() if K <= k) for k in range(1, schedule.horizon + 1)]
    mismatches = sum(a != b for a, b in zip(rebuilt, schedule.multipliers))
    rows.append(
        _row(
            "m_k reconstruction",
            mismatches,
            0,
            mismatches == 0 and len(schedule.multipliers) == schedule.horizon,
            True,
        )
    )
    for k in range(1, schedule.horizon + 1):
        p_k = rebuilt[k - 1] - M
        rows.append(_row("p_k < k", p_k, k, p_k < k, True, k=k))
        for name, rule in (("eps", schedule.eps), ("delta", schedule.delta)):
            value = rule(k)
            rows.append(_row(f"{name}_k positive", value, 0, value > 0, True, k=k))
            if k > 1:
                rows.append(
                    _row(
                        f"{name}_k nonincreasing",
                        value,
                        rule(k - 1),
                        value <= rule(k - 1),
                        True,
                        k=k,
                    )
                )
        m_k = rebuilt[k - 1]
        a = schedule.alpha(m_k)
        c = 1 - a * (8 / 9) ** (k - 1)
        c_prime = 1 - a * (17 / 18) ** (k - 1)
        rows.append(_row("(C) above (C')", c, c_prime, c > c_prime or k == 1, True, k=k))

    for ue in schedule.ue_levels:
        bound = schedule.N**ue.n * ue.theta + 2.0 ** (1 - ue.n)
        rows.append(_row("closeness contract", bound, ue.r, bound < ue.r, True, j=ue.j))
        root = math.sqrt(8 * ue.beta)
        rows.append(
            _row(
                "sqrt(8 beta) = theta/4",
                root,
                ue.threshold,
                abs(root - ue.threshold) <= math.ulp(ue.threshold),
                True,
                j=ue.j,
            )
        )
        if not ue.resolved:
            rows.append(_row("(ent1) reference step found", 0, 1, False, faithful, j=ue.j))
            continue
        m_p = schedule.m(ue.p)
        rows.append(
            _row(
                "(ent1) log2/(m_p-1) < beta",
                math.log(2) / (m_p - 1),
                ue.beta,
                math.log(2) / (m_p - 1) < ue.beta,
                faithful,
                j=ue.j,
                p=ue.p,
            )
        )
        ratio = math.exp(math.log(ue.n) - schedule.log_N_k(ue.p))
        rows.append(
            _row("(ent1) n/N_p < theta/4", ratio, ue.threshold, ratio < ue.threshold, faithful, j=ue.j, p=ue.p)
        )
        rows.append(_row("p(j) < K_m(j)", ue.p, ue.K, ue.p < ue.K, True, j=ue.j))
        if ue.K > ue.p:
            lhs, rhs = requirement_E_sides(
                n=ue.n,
                N=schedule.N,
                beta=ue.beta,
                m_p=m_p,
                p=ue.p,
                alpha_m=schedule.alpha(ue.m),
                K=ue.K,
            )
            rows.append(_row("requirement (E), log", lhs, rhs, lhs < rhs, faithful, j=ue.j, K=ue.K))
    for j in range(1, len(schedule.ue_levels)):
        a, b = schedule.ue_levels[j - 1], schedule.ue_levels[j]
        rows.append(_row("r decreasing", b.r, a.r, b.r < a.r, True, j=b.j))
    return DataFrame(rows, columns=["name", "lhs", "rhs", "holds", "gating", "params"])


def all_green(report: DataFrame) -> bool:
    """Whether every gating row of a validation report holds."""
    gating = report[report["gating"]]
    return bool(gating["holds"].all())


def verify_A_prime(schedule: Schedule, gammas: Mapping[int, float], k: int) -> bool:
    """Check ``sum_{s=p_k+1}^{k-1} (1 - gamma'_s) < delta_k / 2`` and (C') per ``s``.

    Parameters
    ----------
    schedule
        The schedule supplying ``p_k``, ``delta_k`` and ``alpha``.
    gammas
        Passing probabilities ``gamma'_s`` by step.
    k
        The step.
    """
    return bool(a_prime_table(schedule, gammas, k)["holds"].all())


def a_prime_table(schedule: Schedule, gammas: Mapping[int, float], k: int) -> DataFrame:
    """The rows behind :func:`verify_A_prime`: the sum and each (C') check."""
    p_k = schedule.p(k)
    steps = range(p_k + 1, k)
    missing = [s for s in steps if s not in gammas]
    if missing:
        raise InvalidArgumentError(f"Missing gamma values for steps {missing}.")
    total = math.fsum(1 - float(gammas[s]) for s in steps)
    rows = [_row("(A')", total, schedule.delta(k) / 2, total < schedule.delta(k) / 2, False, k=k)]
    for s in steps:
        bound = 1 - schedule.alpha(schedule.m(s)) * (17 / 18) ** (s - 1)
        rows.append(_row("(C')", float(gammas[s]), bound, float(gammas[s]) > bound, False, k=s))
    return DataFrame(rows, columns=["name", "lhs", "rhs", "holds", "gating", "params"])
