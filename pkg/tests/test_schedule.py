import math

import pytest
from scipy.optimize import brentq

from subshift_forge._core.config import RunConfig
from subshift_forge._core.errors import InvalidArgumentError, ScheduleError
from subshift_forge.schedule import (
    Alpha,
    DecayRule,
    Schedule,
    UELevel,
    all_green,
    build_schedule,
    closeness_params,
    jump_condition,
    jump_index,
    requirement_E_sides,
    validate_schedule,
    verify_A_prime,
)


def rederived_jump(m: int, alpha: float, base: float) -> int:
    # smallest integer K above the real root of 9 alpha base^(K-1) = 2^-(m+2)
    def gap(K):
        return math.log(9 * alpha) + (K - 1) * math.log(base) + (m + 2) * math.log(2)

    return math.floor(brentq(gap, 1, 10_000)) + 1


@pytest.mark.parametrize(
    "m,rule,expected",
    [(6, "b_prime", 137), (6, "b", 67), (7, "b_prime", 149), (8, "b_prime", 161)],
    ids=lambda v: str(v),
)
def test_jump_index(m, rule, expected):
    base = 17 / 18 if rule == "b_prime" else 8 / 9
    assert jump_index(m, 1.0, rule) == expected
    assert rederived_jump(m, 1.0, base) == expected
    assert jump_condition(m, 1.0, expected, rule)
    assert not jump_condition(m, 1.0, expected - 1, rule)


def test_jump_index_respects_lower():
    assert jump_index(6, 1.0, lower=200) == 201
    assert jump_index(6, lambda m: 1.0, lower=10) == 137


def test_jump_index_rejects():
    with pytest.raises(InvalidArgumentError, match="Unknown rule"):
        jump_index(6, 1.0, rule="c")
    with pytest.raises(InvalidArgumentError, match="positive"):
        jump_index(6, 0.0)


def test_alpha():
    assert Alpha.parse("const:1")(7) == 1.0
    alpha = Alpha.parse({"7": 0.5, "default": 2})
    assert alpha(7) == 0.5
    assert alpha(8) == 2.0
    assert alpha.to_json() == {"7": 0.5, "default": 2.0}


@pytest.mark.parametrize(
    "r,expected",
    [(2.0, (2, 0.25)), (0.5, (4, 0.015625))],
    ids=["r=2", "r=0.5"],
)
def test_closeness_params(r, expected):
    assert closeness_params(2, r) == expected


@pytest.mark.parametrize("r", [2.0, 1.0, 0.5, 0.3, 0.1, 0.01])
def test_closeness_contract_and_threshold(r):
    n, theta = closeness_params(3, r)
    assert 3**n * theta + 2.0 ** (1 - n) < r
    level = UELevel(j=1, r=r, n=n, theta=theta)
    assert math.sqrt(8 * level.beta) == pytest.approx(theta / 4, rel=1e-15)
    assert level.threshold == theta / 4
    assert not level.resolved


@pytest.mark.parametrize("r", [0.0, 2.5])
def test_closeness_params_range(r):
    with pytest.raises(InvalidArgumentError):
        closeness_params(2, r)


def test_desk_schedule(desk_schedule):
    assert desk_schedule.jumps == {7: 3, 8: 161}
    assert desk_schedule.multipliers == (6, 6, 7)
    assert [desk_schedule.N_k(k) for k in range(4)] == [1, 6, 36, 252]
    assert desk_schedule.log_N_k(3) == pytest.approx(math.log(252))
    assert [desk_schedule.p(k) for k in (1, 2, 3)] == [0, 0, 1]
    assert desk_schedule.faithful_jumps[7] == 149
    (ue,) = desk_schedule.ue_levels
    assert (ue.n, ue.theta, ue.p, ue.m, ue.K) == (2, 0.25, 1, 7, 3)
    assert ue.beta == 0.00048828125
    assert desk_schedule.bernstein_steps == [3]
    assert desk_schedule.ue_for_step(3) is ue
    assert desk_schedule.ue_for_step(2) is None


def test_eps_delta_rule(desk_schedule):
    thresholds = [2 * desk_schedule.eps_plus_delta(k) for k in (1, 2, 3)]
    assert thresholds == pytest.approx([0.9138, 0.7735, 0.6882], abs=1e-4)
    assert thresholds == sorted(thresholds, reverse=True)


@pytest.mark.parametrize("k", [1, 2, 5, 40])
def test_decay_offset(k):
    assert DecayRule(0.3)(k) == pytest.approx(0.3 / math.log(k + math.e))
    c0 = 0.05
    shifted = DecayRule(c0 * math.log(3), offset=2)
    assert shifted(k) == pytest.approx(c0 * math.log(3) / math.log(k + 2))
    assert shifted(1) == pytest.approx(c0)
    assert shifted(k + 1) < shifted(k)


def test_decay_offset_in_schedule(make_desk):
    c0 = 0.05 * math.log(3)
    config = RunConfig.from_dict(make_desk(c_eps=c0, c_delta=c0, decay_offset=2.0))
    schedule = build_schedule(config.schedule)
    assert schedule.eps_plus_delta(1) == pytest.approx(0.1)
    assert schedule.eps_plus_delta(3) == pytest.approx(0.1 * math.log(3) / math.log(5))
    data = schedule.to_dict()
    assert data["decay_offset"] == 2.0
    assert Schedule.from_dict(data).eps_plus_delta(2) == schedule.eps_plus_delta(2)
    # records written before the offset existed read back with offset e
    del data["decay_offset"]
    assert Schedule.from_dict(data).eps.offset == math.e


@pytest.mark.parametrize(
    "jumps,reference",
    [
        ({"7": 3}, {"1": 1}),
        ({"7": 2, "8": 3, "9": 4}, {"1": 3}),
        ({"7": 2, "8": 5}, {"1": 2}),
    ],
    ids=["p=1", "p=3", "p=2"],
)
def test_reference_step_reads_fixed_jumps(make_desk, jumps, reference):
    config = RunConfig.from_dict(
        make_desk(desk_jumps=jumps, desk_reference=reference, caps={"max_level": 6})
    )
    schedule = build_schedule(config.schedule)
    (ue,) = schedule.ue_levels
    assert ue.p == reference["1"]
    assert ue.m == ue.p + schedule.M
    # p <= K_{m(j)-1} < K_{m(j)}, with K_M = 1
    assert ue.p <= schedule.jumps.get(ue.m - 1, 1) < ue.K
    earlier = [K for m, K in schedule.jumps.items() if m < ue.m]
    assert schedule.m(ue.p) == schedule.M + sum(K <= ue.p for K in earlier)


def test_desk_validation_is_green(desk_schedule):
    report = validate_schedule(desk_schedule)
    assert list(report.columns) == ["name", "lhs", "rhs", "holds", "gating", "params"]
    assert all_green(report)
    # the relaxed jump at m=7 breaks (b') but only gates in faithful mode
    jump = report[(report["name"] == "jump (b')")].iloc[0]
    assert jump["params"]["m"] == 7
    assert not jump["holds"]
    assert not jump["gating"]
    identity = report[report["name"] == "sqrt(8 beta) = theta/4"]
    assert identity["holds"].all()


def test_schedule_roundtrip(desk_schedule):
    again = Schedule.from_dict(desk_schedule.to_dict())
    assert again.jumps == desk_schedule.jumps
    assert again.multipliers == desk_schedule.multipliers
    assert again.ue_levels == desk_schedule.ue_levels
    assert again.eps_plus_delta(2) == desk_schedule.eps_plus_delta(2)


def test_faithful_schedule(make_desk):
    config = RunConfig.from_dict(
        make_desk(M=5, mode="faithful", desk_jumps={}, desk_reference={})
    )
    with pytest.warns(UserWarning, match="No reference step"):
        schedule = build_schedule(config.schedule)
    assert schedule.jumps == {6: 137}
    assert schedule.m(3) == 5
    report = validate_schedule(schedule)
    assert not all_green(report)
    row = report[report["name"] == "(ent1) reference step found"].iloc[0]
    assert row["gating"]


def test_faithful_mode_ignores_desk_overrides(make_desk):
    config = RunConfig.from_dict(make_desk(mode="faithful"))
    with pytest.warns(UserWarning, match="ignores"):
        schedule = build_schedule(config.schedule)
    assert schedule.jumps[7] == 149


def test_schedule_errors(make_desk):
    config = RunConfig.from_dict(make_desk(desk_jumps={"7": 3, "8": 3}))
    with pytest.raises(ScheduleError, match="strictly increasing") as info:
        build_schedule(config.schedule)
    assert info.value.constraint == "K_m strictly increasing"

    config = RunConfig.from_dict(make_desk(desk_reference={"1": 3}))
    with pytest.raises(ScheduleError) as info:
        build_schedule(config.schedule)
    assert info.value.constraint == "p(j) < horizon"


def test_requirement_E_sides():
    lhs, rhs = requirement_E_sides(n=2, N=2, beta=0.01, m_p=6, p=1, alpha_m=1.0, K=3)
    assert lhs == pytest.approx(math.log(2) + 2 * math.log(2) - 0.01 * 36)
    assert rhs == pytest.approx(2 * math.log(17 / 18) + math.log1p(-((16 / 17) ** 2)))
    lhs, _ = requirement_E_sides(n=2, N=2, beta=0.01, m_p=6, p=1, alpha_m=1.0, K=10_000)
    assert lhs == -math.inf
    with pytest.raises(InvalidArgumentError, match="K > p"):
        requirement_E_sides(n=2, N=2, beta=0.01, m_p=6, p=3, alpha_m=1.0, K=3)


def test_verify_A_prime(desk_schedule):
    assert verify_A_prime(desk_schedule, {1: 1.0, 2: 1.0}, 3)
    assert not verify_A_prime(desk_schedule, {1: 1.0, 2: 0.01}, 3)
    with pytest.raises(InvalidArgumentError, match="Missing gamma"):
        verify_A_prime(desk_schedule, {}, 3)
