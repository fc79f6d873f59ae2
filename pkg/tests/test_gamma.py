import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import binom

from pkbp.gamma import (
    GammaTable,
    bound_b,
    bound_b_exact,
    concave_approx,
    gamma_of,
    gamma_values,
    get_table,
    is_concave,
)


def bound_from_binomial(n, gamma):
    # independent oracle: X ~ Bin(n, 1/2), B = (1 - mu) P(X = floor nu) + P(X > floor nu)
    nu = (gamma + n) / 2
    low = math.floor(nu)
    mu = nu - low
    return (1 - mu) * binom.pmf(low, n, 0.5) + binom.sf(low, n, 0.5)


def test_bound_b_small_case_is_176_over_1024():
    assert bound_b_exact(10, 4) == Fraction(176, 1024)
    assert bound_b(10, 4) == pytest.approx(176 / 1024, rel=1e-12)


@pytest.mark.parametrize("n", [1, 2, 7, 30, 60])
def test_bound_b_all_reserved_is_two_to_minus_n(n):
    assert bound_b_exact(n, n) == Fraction(1, 2**n)
    assert bound_b(n, n) == pytest.approx(2.0**-n, rel=1e-12)


def test_bound_b_zero_gamma_hand_value():
    # nu = 2, mu = 0: (C(4,2) + C(4,3) + C(4,4)) / 16
    assert bound_b_exact(4, 0) == Fraction(11, 16)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 400), st.data())
def test_bound_b_matches_binomial_oracle(n, data):
    gamma = data.draw(st.integers(0, n))
    expected = bound_from_binomial(n, gamma)
    assert bound_b(n, gamma) == pytest.approx(expected, rel=1e-9, abs=1e-300)
    assert float(bound_b_exact(n, gamma)) == pytest.approx(expected, rel=1e-9, abs=1e-300)


def test_bound_b_large_n_stays_finite():
    value = bound_b(5000, 200)
    assert 0.0 < value < 1.0
    assert value == pytest.approx(float(bound_b_exact(5000, 200)), rel=1e-10)


@pytest.mark.parametrize("n,gamma", [(0, 0), (3, 4), (3, -1)])
def test_bound_b_rejects_bad_arguments(n, gamma):
    with pytest.raises(ValueError):
        bound_b(n, gamma)


def brute_gamma(n, alpha):
    for g in range(n + 1):
        if bound_b_exact(n, g) <= Fraction(alpha):
            return g
    return n


@pytest.mark.parametrize("alpha", [0.01, 0.05, 0.1, 0.3])
def test_gamma_of_matches_linear_scan(alpha):
    values = gamma_values(alpha, 120)
    for n in range(1, 121):
        assert values[n] == brute_gamma(n, alpha) == gamma_of(n, alpha)


def test_gamma_of_boundary_is_inclusive():
    assert gamma_of(10, 176 / 1024) == 4
    assert gamma_of(10, math.nextafter(176 / 1024, 0)) == 5


def test_gamma_of_falls_back_to_n():
    # B(1, 1) = 1/2 > 0.05, so the only safe choice is to reserve the VM fully
    assert gamma_of(1, 0.05) == 1
    assert gamma_values(0.05, 8) == [0, 1, 2, 3, 4, 5, 6, 6, 6]


def test_gamma_of_bad_alpha():
    with pytest.raises(ValueError):
        gamma_of(5, 0.0)
    with pytest.raises(ValueError):
        gamma_of(5, 1.0)


def test_gamma_is_non_decreasing_and_sublinear():
    values = gamma_values(0.05, 300)
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert values[300] < 300 // 2


def perturbation_blocked(f, gamma, eps=Fraction(1, 64)):
    for n in range(len(f)):
        bumped = list(f)
        bumped[n] += eps
        if bumped[n] <= gamma[n] and is_concave(bumped):
            return False
    return True


def test_concave_approx_non_concave_table():
    # a pointwise concave minorant does not exist here; the LP optimum is all zeros
    assert concave_approx([0, 0, 2, 2]) == (0, 0, 0, 0)


def test_concave_approx_optimum_sum():
    f = concave_approx([0, 2, 2, 4])
    assert sum(f) == 6
    assert is_concave(f)
    assert all(a <= b for a, b in zip(f, [0, 2, 2, 4]))


def test_concave_approx_keeps_concave_input():
    g = [0, 1, 2, 2, 2, 2]
    assert list(concave_approx(g)) == g


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=14))
def test_concave_approx_properties(steps):
    gamma = [0]
    for s in steps:
        gamma.append(min(gamma[-1] + s, len(gamma)))
    f = concave_approx(gamma)
    assert all(0 <= v <= g for v, g in zip(f, gamma))
    assert is_concave(f)
    assert perturbation_blocked(f, gamma)


def test_table_lookup_and_range():
    table = get_table(0.05, 16)
    assert table(0) == 0 and table(10) == 7
    assert table.tilde(3) <= table(3)
    with pytest.raises(ValueError):
        table(17)
    rows = list(table.rows())
    assert rows[10][3] <= 0.05


def test_table_approximation_non_decreasing():
    table = get_table(0.05, 256)
    assert np.all(np.diff(table.gamma_tilde_f) >= 0)


def test_from_gamma_rejects_bad_tables():
    with pytest.raises(ValueError):
        GammaTable.from_gamma([1, 1])
    with pytest.raises(ValueError):
        GammaTable.from_gamma([0, 2])
