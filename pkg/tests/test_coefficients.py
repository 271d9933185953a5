import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sqglab.coefficients import (
    alpha,
    alpha_array,
    beta,
    beta_minus_paper,
    beta_symmetry_violations,
    coefficient_check_rows,
    gamma,
    gamma_row_sum,
    poisson_kernel,
)

from conftest import wavevectors


def test_alpha_examples():
    assert alpha((1, 0), (0, 1), (1, 1)) == 0.0
    assert alpha((1, 0), (2, 0), (3, 0)) == 0.0
    assert alpha((1, 0), (1, 1), (2, 1)) == pytest.approx((1 - math.sqrt(2)) / math.sqrt(5), abs=1e-15)
    assert alpha((1, 0), (1, 1), (2, 1)) == pytest.approx(-0.185242, abs=1e-6)


def test_alpha_rejects_bad_triples():
    with pytest.raises(ValueError):
        alpha((1, 0), (1, 1), (3, 1))
    with pytest.raises(ValueError):
        alpha((0, 0), (1, 1), (1, 1))


def test_beta_examples():
    assert beta((2, 0), (1, 0), 1.0) == 0.0
    assert beta((2, 2), (1, 1), 1.0) == 0.0  # |j| = |k - j|
    assert beta((2, 1), (1, 0), 1.0) == pytest.approx((math.sqrt(2) - 1) / 5, abs=1e-15)


def test_gamma_examples():
    assert gamma((2, 2), (1, 1), 1.0) == 0.0
    expected = 2 * ((math.sqrt(2) - 1) / 5) ** 2 / (5 * 2)
    assert gamma((2, 1), (1, 0), 1.0) == pytest.approx(expected, rel=1e-14)
    assert gamma((2, 1), (1, 0), 1.0) == pytest.approx(1.37259e-3, rel=1e-5)


def test_poisson_kernel_examples():
    assert poisson_kernel((1, 0), (1, 1), (2, 1), 1.0) == pytest.approx(0.0370484, abs=1e-7)
    assert poisson_kernel((1, 0), (0, 1), (1, 1), 1.0) == 0.0


@given(wavevectors(st, 64), wavevectors(st, 64))
def test_alpha_symmetric_and_sign_flip_exact(h1, h2):
    k = (h1[0] + h2[0], h1[1] + h2[1])
    if k == (0, 0):
        return
    a = alpha(h1, h2, k)
    assert a == alpha(h2, h1, k)
    assert a == alpha((-h1[0], -h1[1]), (-h2[0], -h2[1]), (-k[0], -k[1]))


@given(wavevectors(st, 10), wavevectors(st, 10), st.sampled_from([0.25, 0.5, 1.0, 1.6]))
def test_poisson_kernel_symmetric(j1, j2, d):
    k = (j1[0] + j2[0], j1[1] + j2[1])
    if k == (0, 0):
        return
    assert poisson_kernel(j1, j2, k, d) == poisson_kernel(j2, j1, k, d)


@given(wavevectors(st, 12), wavevectors(st, 12), st.floats(0.1, 2.0))
def test_gamma_nonnegative(k, j, d):
    if (k[0] - j[0], k[1] - j[1]) == (0, 0):
        return
    assert gamma(k, j, d) >= 0.0


def test_alpha_array_matches_scalar(rng):
    h1 = rng.integers(-20, 21, size=(500, 2))
    h2 = rng.integers(-20, 21, size=(500, 2))
    ok = (np.abs(h1).sum(1) > 0) & (np.abs(h2).sum(1) > 0) & (np.abs(h1 + h2).sum(1) > 0)
    h1, h2 = h1[ok], h2[ok]
    arr = alpha_array(h1, h2)
    ref = [alpha(a, b, a + b) for a, b in zip(h1, h2)]
    np.testing.assert_array_equal(arr, ref)


def test_beta_minus_matches_formula_with_negated_j(rng):
    for _ in range(200):
        k = tuple(rng.integers(-6, 7, 2))
        j = tuple(rng.integers(-6, 7, 2))
        if k == (0, 0) or j == (0, 0) or (k[0] + j[0], k[1] + j[1]) == (0, 0):
            continue
        assert beta(k, (-j[0], -j[1]), 1.0) == pytest.approx(beta_minus_paper(k, j, 1.0), abs=1e-15)


def test_beta_symmetry_is_reported_not_assumed():
    n_bad, n_checked, max_diff = beta_symmetry_violations((2, 1), 1.0, 8)
    assert n_checked > 0 and 0 <= n_bad <= n_checked and max_diff >= 0.0


def _direct_row_sum(k, d, J):
    total = []
    for jx in range(-J, J + 1):
        for jy in range(-J, J + 1):
            if (jx, jy) in ((0, 0), k) or jx * jx + jy * jy > J * J:
                continue
            total.append(gamma(k, (jx, jy), d))
    return math.fsum(total)


def test_gamma_row_sum_matches_direct_summation():
    for k in ((1, 0), (2, 1)):
        assert gamma_row_sum(k, 1.0, 24) == pytest.approx(_direct_row_sum(k, 1.0, 24), rel=1e-12)


def test_gamma_row_sum_positive_and_converged_in_J():
    s1 = gamma_row_sum((1, 0), 1.0, 200)
    assert s1 > 0 and math.isfinite(s1)
    for m in (1, 2, 4, 8):
        a = gamma_row_sum((m, 0), 1.0, 200)
        b = gamma_row_sum((m, 0), 1.0, 400)
        assert abs(b - a) / a < 0.01


def test_gamma_row_sum_bounded_relative_to_k4():
    # one-sided uniform bound: |k|^2 S(k) below twice its value at |k| = 4
    scaled = {m: m**2 * gamma_row_sum((m, 0), 1.0, 200) for m in (1, 2, 4, 8, 16)}
    assert max(scaled.values()) <= 2 * scaled[4]


def test_coefficient_check_rows_schema():
    rows = coefficient_check_rows([(1, 0), (2, 0)], [1.0], 20)
    assert [set(r) for r in rows] == [{"kx", "ky", "delta", "J", "row_sum", "row_sum_scaled"}] * 2
    assert rows[1]["row_sum_scaled"] == pytest.approx(4 * rows[1]["row_sum"])
