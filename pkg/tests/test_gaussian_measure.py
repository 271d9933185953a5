import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sqglab.gaussian_measure import (
    MeasureSampler,
    characteristic_functional,
    ibp_residual,
    l2_pair,
    mc_expectation,
    sample_rho,
    summarize,
)
from sqglab.lattice import band, make_field
from sqglab.malliavin import Polynomial


def _mode(values, N, k):
    return values[:, band(N).index(k)]


def test_mode_variance_unit_mode():
    v = MeasureSampler(2, 0).sample_batch(100_000)
    est = summarize(np.abs(_mode(v, 2, (1, 0))) ** 2)
    assert abs(est.mean - 1.0) < 0.01


def test_mode_variance_3_4():
    v = MeasureSampler(5, 1).sample_batch(50_000)
    est = summarize(np.abs(_mode(v, 5, (3, 4))) ** 2)
    assert est.z_score(1 / 25) <= 3


def test_modes_centered():
    v = MeasureSampler(4, 2).sample_batch(20_000)
    for i in range(band(4).H):
        assert summarize(v[:, i]).z_score(0) <= 4  # many modes; Bonferroni slack


def test_reality_and_component_variance():
    v = MeasureSampler(3, 3).sample_batch(40_000)
    b = band(3)
    assert np.array_equal(v[:, b.neg], v.conj())
    re = v[:, b.index((2, 1))].real
    # per-component variance |k|^-2 / 2
    assert abs(re.var() / (1 / 10) - 1) < 0.03


def test_cross_covariances_vanish():
    v = MeasureSampler(3, 4).sample_batch(40_000)
    b = band(3)
    a, c = v[:, b.index((1, 0))], v[:, b.index((1, 1))]
    assert summarize(a * c.conj()).z_score(0) <= 3
    assert summarize(a.real * a.imag).z_score(0) <= 3


def test_sampler_determinism():
    a = MeasureSampler(6, 42).sample_batch(10)
    b = MeasureSampler(6, 42).sample_batch(10)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, MeasureSampler(6, 43).sample_batch(10))
    assert not np.array_equal(a, MeasureSampler(6, 42).spawn(0).sample_batch(10))


def test_sample_rho_is_real_field():
    f = sample_rho(MeasureSampler(4, 9))
    assert f.is_real() and f.N == 4


def test_mc_expectation_examples():
    s = MeasureSampler(2, 5)
    const = mc_expectation(lambda f: 1.0, 100, s)
    assert (const.mean, const.std_error) == (1.0, 0.0)
    sq = mc_expectation(lambda f: abs(f[(1, 0)]) ** 2, 20_000, MeasureSampler(2, 6))
    assert sq.z_score(1.0) <= 3
    cross = mc_expectation(lambda f: f[(1, 0)] * f[(0, 1)], 20_000, MeasureSampler(2, 7))
    assert cross.z_score(0.0) <= 3


def test_mc_expectation_counts_nonfinite():
    n = [0]

    def F(f):
        n[0] += 1
        return math.nan if n[0] % 10 == 0 else 1.0

    with pytest.warns(RuntimeWarning):
        est = mc_expectation(F, 100, MeasureSampler(2, 0))
    assert est.n_nonfinite == 10 and est.n_used == 90


@pytest.mark.parametrize("k", [(1, 0), (2, 1)])
def test_ibp_linear(k):
    # F = psi_k: D_k F = 1 and |k|^2 E[psi_{-k} psi_k] = 1
    r = ibp_residual(Polynomial.mode(k), k, 20_000, MeasureSampler(3, 8))
    assert r.z_score(0) <= 3


def test_ibp_constant_and_independent_mode():
    s = MeasureSampler(3, 9)
    assert ibp_residual(Polynomial.constant(1.0), (1, 0), 5000, s).z_score(0) <= 3
    j = (2, 1)
    F = Polynomial.mode(j) * Polynomial.mode((-j[0], -j[1]))
    assert ibp_residual(F, (1, 0), 20_000, MeasureSampler(3, 10)).z_score(0) <= 3


def test_ibp_detects_wrong_weight():
    # weighting with |k|^1 instead of |k|^2 must fail at k=(2,1)
    N, k = 3, (2, 1)
    v = MeasureSampler(N, 11).sample_batch(20_000)
    b = band(N)
    lhs = np.ones(len(v))
    rhs = math.sqrt(5) * v[:, b.index((-2, -1))] * v[:, b.index(k)]
    assert summarize(lhs - rhs).z_score(0) > 10


def test_characteristic_functional():
    f = make_field([((1, 0), 0.7), ((1, 1), 0.4 - 0.3j), ((2, 1), 1.1)], 3)
    v = MeasureSampler(3, 12).sample_batch(40_000)
    est = summarize(np.exp(1j * l2_pair(f, v)))
    assert est.z_score(characteristic_functional(f)) <= 3


@given(st.integers(1, 6), st.integers(0, 2**63 - 1))
def test_samples_real_for_any_seed(N, seed):
    v = MeasureSampler(N, seed).sample_batch(3)
    assert np.array_equal(v[:, band(N).neg], v.conj())
