import math
from fractions import Fraction

import numpy as np
import pytest

from subshift_forge._core.errors import InvalidArgumentError
from subshift_forge.ergodicity import (
    diameter_report,
    default_n_list,
    empirical_measure,
    entropy_report,
    fact_bound,
    freq_spread,
    measure_distance,
    resolve_step,
    sample_point,
    tail_bound,
    uncorrelation_check,
    uniformity_sweep,
)
from subshift_forge.hierarchy import FamilyLevel, root_level
from subshift_forge.schedule import UELevel, closeness_params
from subshift_forge.sequences import TestSequence
from subshift_forge.symbolic import Block, Code, apply_code


@pytest.fixture
def identity_code():
    return Code.parse("w:1;table:+-", 2)


def test_empirical_measure():
    mu = empirical_measure(Block.from_string("010", 2), 2)
    np.testing.assert_allclose(mu.table(1), [2 / 3, 1 / 3])
    np.testing.assert_allclose(mu.table(2), [0, 1 / 3, 1 / 3, 0])
    assert mu[Block.from_string("01", 2)] == Fraction(1, 3)
    assert mu.is_consistent()
    with pytest.raises(InvalidArgumentError, match="outside"):
        mu.table(3)
    with pytest.raises(InvalidArgumentError, match="needs a block"):
        empirical_measure(Block.from_string("01", 2), 3)


@pytest.mark.parametrize("L,n_max", [(10, 3), (7, 1), (20, 5)])
def test_distance_of_constant_blocks(L, n_max):
    zeros = empirical_measure(Block.from_string("0" * L, 2), n_max)
    ones = empirical_measure(Block.from_string("1" * L, 2), n_max)
    expected = sum(2.0**-n * 2 * (L - n + 1) / L for n in range(1, n_max + 1))
    assert measure_distance(zeros, ones, n_max) == pytest.approx(expected)


def test_distance_is_a_pseudometric():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        x, y, z = (
            empirical_measure(Block(rng.integers(0, 3, size=rng.integers(4, 40)), 3), 3)
            for _ in range(3)
        )
        assert measure_distance(x, x, 3) == 0
        assert measure_distance(x, y, 3) == measure_distance(y, x, 3)
        assert measure_distance(x, z, 3) <= measure_distance(x, y, 3) + measure_distance(
            y, z, 3
        ) + 1e-12


def test_distance_rejects():
    assert tail_bound(2) == 0.5
    shallow = empirical_measure(Block.from_string("0101", 2), 1)
    deep = empirical_measure(Block.from_string("0110", 2), 2)
    with pytest.raises(InvalidArgumentError, match="exceeds"):
        measure_distance(shallow, deep, 2)
    other = empirical_measure(Block.from_string("0120", 3), 1)
    with pytest.raises(InvalidArgumentError, match="alphabets"):
        measure_distance(shallow, other, 1)


def test_entropy_report_desk(desk_levels):
    report = entropy_report(desk_levels, M=6)
    assert report.holds
    levels = report.levels.set_index("k")
    assert levels.loc[1, "h"] == pytest.approx(math.log(2))
    assert levels.loc[1, "asserted"]
    assert not levels.loc[2, "asserted"]
    assert len(report.pairs) == 6


def test_entropy_report_three_of_four():
    # blocks 00, 01, 10 out of four candidates
    level = FamilyLevel(
        k=1,
        N=2,
        N_k=2,
        m_k=2,
        blocks=np.array([[0, 0], [0, 1], [1, 0]]),
        gamma=Fraction(3, 4),
        tests=("R",),
        mode="exhaustive",
        draws=4,
        passes=3,
        log_cardinality=math.log(3),
    )
    report = entropy_report([root_level(2), level], M=2)
    row = report.levels.set_index("k").loc[1]
    assert row["h"] == pytest.approx(0.5 * math.log(3))
    assert row["telescoped"] == pytest.approx(0.5 * math.log(3))
    assert row["identity_holds"]
    assert row["composition_holds"]
    pair = report.pairs.iloc[0]
    assert pair["difference"] == pytest.approx(math.log(2) - 0.5 * math.log(3))
    assert pair["holds"]
    assert report.holds


def test_entropy_report_needs_root(desk_levels):
    with pytest.raises(InvalidArgumentError, match="k = 0"):
        entropy_report(desk_levels[1:], M=6)


def test_freq_spread(desk_levels):
    spread = freq_spread(desk_levels[1], 1)
    assert spread.max_spread == 1.0
    assert str(spread.worst_D) == "0"
    assert spread.worst_pair == (0, 63)

    single = FamilyLevel(
        k=1, N=2, N_k=2, m_k=2, blocks=np.array([[0, 1]]), gamma=Fraction(1, 4),
        tests=("R",), mode="exhaustive", draws=4, passes=1, log_cardinality=0.0,
    )  # fmt: skip
    report = freq_spread(single, 1)
    assert report.max_spread == 0.0
    assert report.note == "singleton family"
    with pytest.raises(InvalidArgumentError):
        freq_spread(desk_levels[1], 7)


def test_sample_point(desk_levels):
    level = desk_levels[2]
    a = sample_point(level, 100, seed=3)
    assert len(a) == 100
    assert a == sample_point(level, 100, seed=3)
    aligned = sample_point(level, 36, seed=3, offset=0)
    assert aligned.symbols.tobytes() in level.block_set
    with pytest.raises(InvalidArgumentError, match="N_k=36"):
        sample_point(level, 10, seed=0)
    with pytest.raises(InvalidArgumentError, match="offset"):
        sample_point(level, 40, seed=0, offset=36)


def test_fact_bound_and_steps(desk_schedule):
    assert fact_bound(6, 0.3) == pytest.approx(0.8)
    assert resolve_step(215, desk_schedule) == 1
    assert resolve_step(216, desk_schedule) == 2
    assert resolve_step(12347, desk_schedule) == 3
    assert default_n_list(desk_schedule, 1) == [30, 36, 215]


def test_uncorrelation_adversarial(desk_levels, desk_schedule, identity_code):
    x = sample_point(desk_levels[3], 5000, seed=1)
    y = TestSequence(apply_code(identity_code, x).signs)
    table = uncorrelation_check(x, y, identity_code, [1000, 5000], schedule=desk_schedule)
    assert list(table["status"]) == ["violated", "violated"]
    assert (table["A"] == 1.0).all()
    assert list(table["k"]) == [2, 3]


def test_uncorrelation_mobius(desk_levels, desk_schedule, desk_y, identity_code):
    n_list = default_n_list(desk_schedule, 3)
    x = sample_point(desk_levels[3], max(n_list), seed=2)
    table = uncorrelation_check(x, desk_y, identity_code, n_list, schedule=desk_schedule, built=3)
    assert set(table["status"]) <= {"holds", "below-horizon"}
    assert (table.loc[table["status"] == "holds", "margin"] >= 0).all()


def test_uncorrelation_statuses(desk_levels, desk_schedule, desk_y, identity_code):
    x = sample_point(desk_levels[3], 1000, seed=4)
    table = uncorrelation_check(
        x, desk_y, identity_code, [10, 1000], schedule=desk_schedule, built=1
    )
    assert list(table["status"]) == ["below-horizon", "not-applicable"]
    with pytest.raises(InvalidArgumentError, match="length >= 1000"):
        uncorrelation_check(
            x[:500], desk_y, identity_code, [1000], schedule=desk_schedule
        )


def test_uniformity_sweep(desk_levels, desk_schedule, desk_y, identity_code):
    n_list = default_n_list(desk_schedule, 2)
    table = uniformity_sweep(
        desk_levels[2], desk_y, identity_code, n_list, schedule=desk_schedule
    )
    assert list(table["n"]) == n_list
    assert "violated" not in set(table["status"])
    assert (table["points"] == 40 * 36).all()


@pytest.mark.slow
def test_uniformity_sweep_level3(desk_levels, desk_schedule, desk_y, identity_code):
    n_list = default_n_list(desk_schedule, 3)
    table = uniformity_sweep(
        desk_levels[3], desk_y, identity_code, n_list, schedule=desk_schedule, seed=5
    )
    assert "violated" not in set(table["status"])


def test_diameter_report(desk_levels, desk_schedule):
    (ue,) = desk_schedule.ue_levels
    report = diameter_report(desk_levels[3], ue, samples=8, seed=12345)
    assert report.length == 8 * 252
    assert len(report.distances) == 28
    assert report.holds
    assert report.contract_holds
    assert report.spread_holds
    assert report.to_dict()["holds"] is True
    again = diameter_report(desk_levels[3], ue, samples=8, seed=12345)
    assert again.distances == report.distances


@pytest.mark.parametrize("r", [1.0, 0.5, 0.25], ids=lambda v: f"r={v}")
def test_diameter_tightens_with_smaller_r(desk_levels, desk_schedule, r):
    (coarse,) = desk_schedule.ue_levels
    n, theta = closeness_params(2, r)
    fine = UELevel(j=2, r=r, n=n, theta=theta, p=coarse.p, m=coarse.m, K=coarse.K)
    assert fine.n > coarse.n
    assert fine.theta < coarse.theta
    assert fine.threshold < coarse.threshold
    wide = diameter_report(desk_levels[3], coarse, samples=6, seed=3)
    narrow = diameter_report(desk_levels[3], fine, samples=6, seed=3)
    # same points; each deeper cylinder length n' adds at most 2**(1 - n')
    for d_coarse, d_fine in zip(wide.distances, narrow.distances):
        assert d_coarse <= d_fine + 1e-12
    assert narrow.diameter >= wide.diameter - 1e-12
    assert narrow.tail < wide.tail
    assert narrow.diameter + narrow.tail <= wide.diameter + wide.tail + 1e-12
    assert narrow.r < wide.r


def test_diameter_report_rejects(desk_levels, desk_schedule):
    (ue,) = desk_schedule.ue_levels
    with pytest.raises(InvalidArgumentError, match="not a Bernstein step"):
        diameter_report(desk_levels[2], ue, samples=8, seed=0)
    with pytest.raises(InvalidArgumentError, match="two samples"):
        diameter_report(desk_levels[3], ue, samples=1, seed=0)
