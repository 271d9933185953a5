import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sqglab.coefficients import alpha
from sqglab.gaussian_measure import MeasureSampler
from sqglab.lattice import band, make_field, project
from sqglab.nonlinearity import (
    b_component,
    eval_B,
    eval_B_bilinear,
    eval_B_unsymmetrized,
    h1_pairing,
    h1_pairing_batch,
    jacobian_entry,
    l2_pairing,
    nonlinearity_batch,
    ordered_pair_count,
    state_divergence,
)

THREE_MODE = [((1, 0), 1), ((1, 1), 1)]


def test_single_mode_pair_gives_zero():
    f = make_field([((2, 1), 0.3 + 0.4j)], 4)
    assert not np.any(eval_B(f).field.values)


def test_three_mode_examples():
    f = make_field(THREE_MODE, 3)
    B = eval_B(f).field
    assert B[(2, 1)] == pytest.approx(2 * alpha((1, 0), (1, 1), (2, 1)), abs=1e-15)
    assert B[(2, 1)] == pytest.approx(-0.370484, abs=1e-6)
    assert B[(0, 1)] == pytest.approx(2 * (math.sqrt(2) - 1), abs=1e-15)


def test_pair_count_reported():
    res = eval_B(make_field(THREE_MODE, 3))
    assert res.pair_count == ordered_pair_count(3) > 0


def test_matches_enumeration_oracle():
    f = MeasureSampler(5, 0).sample()
    B = eval_B(f).field
    b = band(5)
    for i in range(b.K):
        assert B.values[i] == pytest.approx(b_component(f.values, 5, tuple(b.modes[i])), abs=1e-13)


def test_symmetrization_matches_raw_kernel():
    # symmetrising -(h1^perp.h2)|h2| over (h1, h2) yields alpha / 2, so the
    # raw-kernel sum is exactly half of the alpha-weighted B
    f = MeasureSampler(5, 1).sample()
    np.testing.assert_allclose(2 * eval_B_unsymmetrized(f).values, eval_B(f).field.values, atol=1e-12, rtol=0)


def test_output_is_real_field():
    f = MeasureSampler(8, 2).sample()
    assert eval_B(f).field.is_real()


@pytest.mark.parametrize("M", [2, 4, 6])
def test_truncation_consistency(M):
    f = MeasureSampler(8, 3).sample()
    lhs = eval_B(f, M).field
    rhs = project(eval_B(project(f, M), 8).field, M)
    np.testing.assert_allclose(lhs.values, rhs.values, atol=1e-14)


def test_bilinear_polarisation():
    f, g = MeasureSampler(4, 4).sample(), MeasureSampler(4, 5).sample()
    Bfg = eval_B_bilinear(f, g)
    np.testing.assert_allclose(eval_B_bilinear(f, f).values, eval_B(f).field.values, atol=1e-13)
    np.testing.assert_allclose(Bfg.values, eval_B_bilinear(g, f).values, atol=1e-14)


def test_h1_pairing_examples():
    assert h1_pairing(make_field([], 4)) == 0.0
    assert abs(h1_pairing(make_field(THREE_MODE, 3))) <= 1e-12
    f = MeasureSampler(8, 6).sample()
    val, scale = h1_pairing(f, return_scale=True)
    assert abs(val) < 1e-10 * scale


@pytest.mark.parametrize("N", [4, 8, 16])
def test_h1_orthogonality_on_samples(N):
    pair, scale = h1_pairing_batch(MeasureSampler(N, 7).sample_batch(100), N)
    assert np.all(np.abs(pair) <= 1e-10 * scale)


def test_h1_pairing_detects_broken_kernel():
    # the L2 pairing of the same B is not structurally zero
    f = MeasureSampler(8, 6).sample()
    _, scale = h1_pairing(f, return_scale=True)
    assert abs(l2_pairing(f)) > 1e-6 * scale / 64


def test_l2_pairing_trivial_cases():
    assert l2_pairing(make_field([], 3)) == 0.0
    assert l2_pairing(make_field([((1, 2), 1 - 1j)], 3)) == 0.0


def test_state_divergence_zero_and_fd():
    f = MeasureSampler(4, 8).sample()
    assert state_divergence(f, (1, 0), 4) == 0
    h = 1e-6
    for k in [(1, 0), (2, 1), (0, 3)]:
        i = band(4).index(k)
        vp, vm = f.values.copy(), f.values.copy()
        vp[i] += h
        vm[i] -= h
        fd = (b_component(vp, 4, k) - b_component(vm, 4, k)) / (2 * h)
        assert abs(fd) < 1e-6
    assert sum(state_divergence(f, tuple(k), 4) for k in band(4).modes) == 0


def test_jacobian_entry_matches_fd():
    f = MeasureSampler(4, 9).sample()
    k, h = (2, 1), (1, 0)
    i = band(4).index(h)
    eps = 1e-6
    vp, vm = f.values.copy(), f.values.copy()
    vp[i] += eps
    vm[i] -= eps
    fd = (b_component(vp, 4, k) - b_component(vm, 4, k)) / (2 * eps)
    assert jacobian_entry(f, k, h) == pytest.approx(fd, abs=1e-8)


@given(st.integers(0, 2**32 - 1), st.integers(2, 7))
def test_h1_orthogonality_property(seed, N):
    pair, scale = h1_pairing_batch(MeasureSampler(N, seed).sample_batch(4), N)
    assert np.all(np.abs(pair) <= 1e-10 * np.maximum(scale, 1e-300))


def test_band_one_has_no_interaction():
    v = MeasureSampler(1, 0).sample_batch(5)
    assert not np.any(nonlinearity_batch(v, 1))
