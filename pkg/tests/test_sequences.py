import numpy as np
import pytest

from subshift_forge._core.errors import InvalidArgumentError, SequenceParseError
from subshift_forge.sequences import (
    TestSequence,
    ap_average,
    load_sequence,
    max_admissible_n,
    mobius,
    save_sequence,
    smallest_prime_factors,
    synthetic_pm1,
    verify_aperiodic,
)


def mobius_by_trial_division(n: int) -> int:
    sign = 1
    p = 2
    while p * p <= n:
        if n % p == 0:
            n //= p
            if n % p == 0:
                return 0
            sign = -sign
        p += 1
    if n > 1:
        sign = -sign
    return sign


def test_mobius_small():
    np.testing.assert_array_equal(mobius(12).values, [1, -1, -1, 0, -1, 1, -1, 0, 0, 1, -1, 0])


def test_mobius_matches_trial_division():
    n = 20_000
    expected = [mobius_by_trial_division(i) for i in range(1, n + 1)]
    np.testing.assert_array_equal(mobius(n).values, expected)


@pytest.mark.slow
def test_mobius_matches_trial_division_1e5():
    n = 100_000
    expected = [mobius_by_trial_division(i) for i in range(1, n + 1)]
    np.testing.assert_array_equal(mobius(n).values, expected)


def test_mobius_single_term():
    y = mobius(1)
    assert len(y) == 1
    assert y.at(1) == 1


def test_smallest_prime_factors():
    spf = smallest_prime_factors(30)
    assert spf[1] == 1
    assert spf[2] == 2
    assert spf[9] == 3
    assert spf[25] == 5
    assert spf[29] == 29
    assert spf[30] == 2


def test_mobius_rejects_empty():
    with pytest.raises(InvalidArgumentError, match="n_max >= 1"):
        mobius(0)


def test_sequence_is_frozen_and_bounded():
    y = TestSequence([1, -1, 0.5])
    assert y.is_integral is False
    with pytest.raises(ValueError):
        y.values[0] = 0
    with pytest.raises(InvalidArgumentError, match=r"y_2 = 1.5 lies outside"):
        TestSequence([0, 1.5])
    with pytest.raises(InvalidArgumentError, match="finite"):
        TestSequence([0, np.nan])


def test_sequence_indexing_is_one_based():
    y = mobius(10)
    assert y.at(2) == -1
    np.testing.assert_array_equal(y.window(4, 3), [0, -1, 1])
    with pytest.raises(InvalidArgumentError):
        y.window(9, 3)
    with pytest.raises(InvalidArgumentError):
        y.at(0)


def test_synthetic_is_seeded():
    a, b = synthetic_pm1(3, 100), synthetic_pm1(3, 100)
    np.testing.assert_array_equal(a.values, b.values)
    assert set(np.unique(a.values)) <= {-1.0, 1.0}
    assert a.is_integral


def test_load_and_save(tmp_path):
    path = tmp_path / "y.txt"
    path.write_text("1\n-1\n 0.5 \n0\n", encoding="utf-8")
    y = load_sequence(path)
    np.testing.assert_array_equal(y.values, [1, -1, 0.5, 0])
    assert y.source == "file"

    out = tmp_path / "mu.txt"
    save_sequence(mobius(50), out)
    assert out.read_text(encoding="utf-8").splitlines()[:4] == ["1", "-1", "-1", "0"]
    np.testing.assert_array_equal(load_sequence(out).values, mobius(50).values)


@pytest.mark.parametrize(
    "text,line",
    [
        ("1\nabc\n0\n", 2),
        ("0\n0\n1.5\n", 3),
        ("-2\n", 1),
        ("", 1),
    ],
    ids=["not-a-number", "too-large", "too-small", "empty"],
)
def test_load_errors_name_the_line(tmp_path, text, line):
    path = tmp_path / "bad.txt"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(SequenceParseError) as info:
        load_sequence(path)
    assert info.value.line == line


def test_ap_average():
    y = mobius(100)
    # Mertens function M(100) = 1
    assert ap_average(y, t=1, l=0, n=100) == pytest.approx(0.01)
    # y_2, y_4, y_6 = -1, 0, 1
    assert ap_average(y, t=2, l=0, n=3) == 0.0
    assert max_admissible_n(y, 3, 1) == 33


@pytest.mark.parametrize("t,l", [(1, 0), (2, 1), (3, 2), (7, 0)], ids=lambda v: str(v))
def test_ap_average_is_linear_and_local(t, l):
    u = synthetic_pm1(3, 500)
    v = mobius(500)
    a, b = 0.25, -0.5
    mixed = TestSequence(a * u.values + b * v.values)
    n = max_admissible_n(u, t, l)
    for count in (1, n // 2, n):
        expected = a * ap_average(u, t, l, count) + b * ap_average(v, t, l, count)
        assert ap_average(mixed, t, l, count) == pytest.approx(expected, abs=1e-12)
        # terms beyond index count * t + l are never read
        longer = TestSequence(np.concatenate([u.values[: count * t + l], np.ones(37)]))
        assert ap_average(longer, t, l, count) == ap_average(u, t, l, count)


def test_ap_average_reports_largest_n():
    with pytest.raises(InvalidArgumentError, match=r"after n=33 terms"):
        ap_average(mobius(100), t=3, l=1, n=40)


def test_verify_aperiodic_mobius():
    report = verify_aperiodic(mobius(100_000), t_max=10, tol=0.05)
    assert report.passed
    assert len(report.table) == 55
    assert report.max_abs < 0.05
    assert "never prove" in report.note


@pytest.mark.slow
def test_verify_aperiodic_mobius_1e6():
    report = verify_aperiodic(mobius(10**6), t_max=10, tol=0.05)
    assert report.flagged == []


def test_verify_aperiodic_flags_periodic():
    y = TestSequence(np.tile([1, -1, 0], 200))
    report = verify_aperiodic(y, t_max=3, tol=0.05)
    assert not report.passed
    assert (3, 1) in report.flagged
    assert (3, 0) not in report.flagged
    assert (1, 0) not in report.flagged


def test_verify_aperiodic_too_short():
    with pytest.raises(InvalidArgumentError, match="too short"):
        verify_aperiodic(mobius(5), t_max=10, tol=0.05)


def test_load_remote_sequence(tmp_path, monkeypatch):
    cached = tmp_path / "cached.txt"
    save_sequence(mobius(30), cached)
    fetched = []

    def fake_retrieve(url, known_hash=None):
        fetched.append(url)
        return str(cached)

    monkeypatch.setattr("subshift_forge.sequences.retrieve_sequence", fake_retrieve)
    y = load_sequence("https://example.org/mu.txt")
    assert fetched == ["https://example.org/mu.txt"]
    np.testing.assert_array_equal(y.values, mobius(30).values)
