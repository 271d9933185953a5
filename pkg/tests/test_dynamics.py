import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sqglab.dynamics import (
    BlowUpError,
    DriftAccumulator,
    DriftDifference,
    ExponentialEuler,
    MartingalePath,
    TrajectoryRecord,
    accumulate_G,
    accumulate_G_tilde,
    coupled_run,
    default_dt,
    dynkin_martingale,
    martingale_rate,
    quadratic_variation,
    replay,
    simulate,
    simulate_with_retry,
    step,
    twin_simulate,
)
from sqglab.gaussian_measure import MeasureSampler, summarize
from sqglab.lattice import band, make_field
from sqglab.nonlinearity import pair_table
from sqglab.presets import GeneratorPreset

SPDE1 = GeneratorPreset.spde(1.0)
GEN1 = GeneratorPreset.generator(1.0)


@pytest.mark.parametrize("delta", [0.25, 0.5, 1.0, 1.6])
def test_presets_preserve_rho(delta):
    for p in (GeneratorPreset.spde(delta), GeneratorPreset.generator(delta)):
        assert 2 * p.b - p.a == pytest.approx(-2)


def test_step_pure_decay():
    f = make_field([((1, 0), 0.5 - 0.25j)], 3)
    out = step(f, 0.01, SPDE1, B_on=False)
    assert out[(1, 0)] == pytest.approx(math.exp(-0.01) * (0.5 - 0.25j), rel=1e-15)


def test_step_zero_stays_zero():
    z = make_field([], 4)
    assert not np.any(step(z, 0.01, SPDE1, B_on=True).values)


def test_step_rejects_bad_dt():
    with pytest.raises(ValueError):
        step(make_field([], 2), 0.0, SPDE1, B_on=False)


def test_step_noise_variance_and_reality():
    N, dt = 3, 0.05
    integ = ExponentialEuler(N, dt, SPDE1, B_on=False)
    b = band(N)
    lam = b.norms[: b.H] ** SPDE1.a
    target = b.norms[: b.H] ** (2 * SPDE1.b) * (1 - np.exp(-2 * lam * dt)) / lam
    # E|eta_k|^2 = 2 sigma^2 over both components
    np.testing.assert_allclose(2 * integ.sigma**2, target, rtol=1e-14)
    xi = np.random.default_rng(0).standard_normal((1, b.H, 2))
    eta = integ.noise(xi)[0]
    assert np.array_equal(eta[b.neg], eta.conj())


def test_step_matches_ensemble_advance():
    f = MeasureSampler(4, 0).sample()
    xi = np.random.default_rng(1).standard_normal((band(4).H, 2))
    a = step(f, 1e-3, SPDE1, True, noise=xi)
    b_ = ExponentialEuler(4, 1e-3, SPDE1).advance(f.values[None], xi[None])[0]
    assert np.array_equal(a.values, b_)


@pytest.mark.parametrize("preset", [SPDE1, GEN1])
def test_ou_stationarity_b_off(preset):
    N, n = 3, 2000
    rec = simulate(N, 1.0, 1e-3, 10.0 if preset is SPDE1 else 1.0, preset, n_paths=n, seed=3, B_on=False, stride=10_000, record_noise=False)
    b = band(N)
    last = rec.states[:, -1]
    for i in range(b.H):
        assert summarize(np.abs(last[:, i]) ** 2).z_score(1 / b.norm2[i]) <= 3.5


def test_simulate_completes_and_bounded():
    rec = simulate(8, 1.0, 1e-3, 1.0, "spde", n_paths=4, seed=0, stride=100, record_noise=False)
    assert np.all(np.isfinite(rec.l2_sq)) and rec.l2_sq.max() < 1e3
    assert rec.times[0] == 0 and rec.times[-1] == pytest.approx(1.0)


def test_band_one_is_pure_ou():
    assert len(pair_table(1)) == 0
    a = simulate(1, 1.0, 1e-2, 0.5, "spde", n_paths=3, seed=2, B_on=True)
    b_ = simulate(1, 1.0, 1e-2, 0.5, "spde", n_paths=3, seed=2, B_on=False)
    assert np.array_equal(a.states, b_.states)


def test_determinism_and_replay():
    a = simulate(6, 1.0, 1e-3, 0.05, "spde", n_paths=3, seed=11)
    b_ = simulate(6, 1.0, 1e-3, 0.05, "spde", n_paths=3, seed=11)
    assert a.states.tobytes() == b_.states.tobytes()
    r = replay(a)
    assert r.states.tobytes() == a.states.tobytes()
    a2 = simulate(6, 1.0, 1e-3, 0.05, "spde", n_paths=3, seed=11, scheme="etd2")
    assert replay(a2).states.tobytes() == a2.states.tobytes()


def test_member_streams_independent_of_batch():
    full = simulate(5, 1.0, 1e-3, 0.02, "spde", n_paths=6, seed=4)
    part = simulate(5, 1.0, 1e-3, 0.02, "spde", seed=4, members=[3, 4, 5])
    assert part.states.tobytes() == full.states[3:].tobytes()


def test_T_must_be_grid_multiple():
    with pytest.raises(ValueError):
        simulate(4, 1.0, 3e-3, 0.01, "spde")


def test_default_dt_policy():
    for N in (4, 8, 16):
        for p in (SPDE1, GEN1):
            dt = default_dt(N, p)
            assert 0 < dt <= min(0.1, 0.5 / (N**2 * N ** max(p.a - 2, 0)))


def test_blow_up_detected_and_retry():
    with pytest.raises(BlowUpError):
        simulate(4, 1.0, 1e-3, 0.002, "spde", initial=np.nan * np.ones(band(4).K))
    rec = simulate_with_retry(N=4, delta=1.0, dt=2e-3, T=0.004, preset="spde", n_paths=2, seed=0)
    assert np.all(np.isfinite(rec.l2_sq))


def _synthetic(values_per_time, dt, N, B_on=True, preset=SPDE1):
    states = np.stack(values_per_time, axis=1)[:, :, : band(N).H]
    nt = states.shape[1]
    return TrajectoryRecord(N, 1.0, preset, dt, B_on, 0, np.arange(nt) * dt, states[:, 0], states=states)


def test_accumulate_G_constant_path_exact():
    f = MeasureSampler(5, 5).sample()
    traj = _synthetic([f.values[None]] * 11, 0.1, 5)
    G = accumulate_G(traj, 4)
    B = pair_table(4).apply(f.values[band(5).embed_indices(band(4))])
    np.testing.assert_allclose(G.data[0, -1], 1.0 * B, rtol=1e-13)
    assert not np.any(G.data[:, 0])


def test_accumulate_G_zero_when_b_off():
    rec = simulate(4, 1.0, 1e-3, 0.01, "spde", n_paths=2, B_on=False)
    assert not np.any(accumulate_G(rec).data)


def test_accumulate_G_second_order():
    # smooth synthetic path psi(t) = cos(t) f + sin(t) g
    f, g = MeasureSampler(4, 6).sample(), MeasureSampler(4, 7).sample()
    errs = []
    for n in (8, 16, 32, 64):
        t = np.linspace(0, 1, n + 1)
        vals = [(math.cos(s) * f.values + math.sin(s) * g.values)[None] for s in t]
        G = accumulate_G(_synthetic(vals, 1.0 / n, 4)).data[0, -1]
        errs.append(G)
    d1 = np.abs(errs[1] - errs[0]).max()
    d2 = np.abs(errs[2] - errs[1]).max()
    d3 = np.abs(errs[3] - errs[2]).max()
    assert 3.5 < d1 / d2 < 4.5 and 3.5 < d2 / d3 < 4.5


def test_accumulate_G_tilde_constant_closed_form():
    f = MeasureSampler(5, 8).sample()
    n, dt = 50, 0.02
    traj = _synthetic([f.values[None]] * (n + 1), dt, 5)
    Gt = accumulate_G_tilde(traj, 5, rate_exponent=2.0).data[0, -1]
    b = band(5)
    r = b.norms[: b.H] ** 2
    B = pair_table(5).apply(f.values)
    np.testing.assert_allclose(Gt, B * (1 - np.exp(-r * 1.0)) / r, rtol=1e-12, atol=1e-15)
    # boundary layer: high modes approach B / r
    hi = b.norm2[: b.H] >= 16
    np.testing.assert_allclose(Gt[hi], (B / r)[hi], rtol=1e-6, atol=1e-15)


def test_accumulate_G_tilde_zero_path():
    z = np.zeros((1, band(3).K), dtype=np.complex128)
    assert not np.any(accumulate_G_tilde(_synthetic([z] * 5, 0.1, 3), rate_exponent=2.0).data)


def test_streaming_accumulator_matches_record():
    rec = simulate(6, 1.0, 1e-3, 0.02, "spde", n_paths=3, seed=9)
    acc = DriftAccumulator(6, 4, 1e-3, "G")
    acct = DriftAccumulator(6, 4, 1e-3, "G~", rate_exponent=2.0)
    simulate(6, 1.0, 1e-3, 0.02, "spde", n_paths=3, seed=9, observers=[acc, acct], record_states=False)
    np.testing.assert_allclose(acc.G, accumulate_G(rec, 4).data[:, -1], rtol=0, atol=1e-13)
    np.testing.assert_allclose(acct.G, accumulate_G_tilde(rec, 4, rate_exponent=2.0).data[:, -1], rtol=0, atol=1e-13)


def test_drift_difference_zero_at_M_equals_N():
    d = DriftDifference(5, 5, 1e-3)
    simulate(5, 1.0, 1e-3, 0.01, "spde", n_paths=2, observers=[d], record_states=False)
    assert not np.any(d.sup)


def test_qv_linear_path_vanishes():
    qs = []
    for k in range(4, 10):
        t = np.linspace(0, 1, 2**k + 1)
        qs.append(quadratic_variation(MartingalePath(t, 3 * t))[0][1])
    # QV of c t on a mesh h is c^2 h
    np.testing.assert_allclose(qs, [9 * 2.0**-k for k in range(4, 10)], rtol=1e-12)


def test_qv_brownian():
    rng = np.random.default_rng(0)
    w = np.concatenate([np.zeros((100, 1)), np.cumsum(rng.standard_normal((100, 10_000)) * 1e-2, axis=1)], axis=1)
    q = quadratic_variation(w)[0][1]
    assert abs(q.mean() - 1) < 0.05
    levels = quadratic_variation(w, 3)
    assert [f for f, _ in levels] == [1, 2, 4]


def test_dynkin_martingale_b_off():
    phi = make_field([((1, 0), 1.0)], 4)
    rec = simulate(4, 1.0, 1e-3, 0.5, "spde", n_paths=200, seed=1, B_on=False)
    M = dynkin_martingale(rec, phi)
    assert np.all(M.values[:, 0] == 0)
    assert summarize(M.values[:, -1]).z_score(0) <= 3
    qv = quadratic_variation(M)[0][1] / (martingale_rate(phi, rec.preset) * 0.5)
    assert abs(qv.mean() - 1) < 0.05


def test_martingale_rate_formula():
    phi = make_field([((1, 0), 1.0), ((2, 1), 0.5j)], 3)
    p = GeneratorPreset.spde(1.6)
    # full band: both k and -k carry |phi_k|^2
    expected = 2 * (2 * 1.0 + 2 * 0.25 * 5 ** (1.6 - 1))
    assert martingale_rate(phi, p) == pytest.approx(expected)


def test_twin_examples():
    rN, rM, d = twin_simulate(6, 6, 1.6, 1e-3, 0.01, "spde", n_paths=2, seed=3)
    assert not np.any(d.sup_norm)
    rN, rM, d = twin_simulate(8, 4, 1.6, 1e-3, 0.01, "spde", n_paths=2, seed=3, B_on=False)
    assert not np.any(d.data)
    # coupled run agrees with the record-based twin run
    vN, finals, diffs = coupled_run(8, [4], 1.6, 1e-3, 0.01, GeneratorPreset.spde(1.6), 2, 3, s=0.95)
    _, _, d2 = twin_simulate(8, 4, 1.6, 1e-3, 0.01, "spde", n_paths=2, seed=3, s=0.95)
    np.testing.assert_allclose(diffs[4].sup_norm, d2.sup_norm, rtol=1e-12)


def test_twin_contraction_decreasing():
    _, _, diffs = coupled_run(16, [4, 8, 12], 1.6, 2e-4, 0.02, GeneratorPreset.spde(1.6), 20, 0, s=0.95)
    sups = [np.mean(diffs[M].sup_norm ** 4) ** 0.25 for M in (4, 8, 12)]
    assert sups[0] > sups[1] > sups[2]


def test_etd2_better_drift_quadrature():
    # against a fine Euler reference the two-stage scheme is closer on the same grid
    zero = np.zeros((1000, 1, band(6).H, 2))
    base = dict(N=6, delta=1.0, T=0.01, preset="generator", n_paths=1, seed=0, record_noise=False)
    fine = simulate(dt=1e-5, noise=zero, **base)
    e1 = simulate(dt=1e-3, noise=zero[:10], **base)
    e2 = simulate(dt=1e-3, noise=zero[:10], scheme="etd2", **base)
    err1 = np.abs(e1.states[0, -1] - fine.states[0, -1]).max()
    err2 = np.abs(e2.states[0, -1] - fine.states[0, -1]).max()
    assert err2 < err1


def test_energy_stationary_b_on():
    rec = simulate(8, 1.0, 1e-3, 1.0, "spde", n_paths=200, seed=5, stride=20, record_noise=False, record_states=False)
    t = rec.times - rec.times.mean()
    slopes = (rec.l2_sq - rec.l2_sq.mean(1, keepdims=True)) @ t / (t @ t)
    assert abs(slopes.mean()) <= 3 * slopes.std(ddof=1) / math.sqrt(len(slopes))


@given(st.floats(1e-4, 0.5), st.sampled_from([0.25, 1.0, 1.6]))
def test_noise_sigma_positive_finite(dt, delta):
    integ = ExponentialEuler(6, dt, GeneratorPreset.spde(delta), B_on=False)
    assert np.all(np.isfinite(integ.sigma)) and np.all(integ.sigma > 0)
    assert np.all(integ.decay < 1) and np.all(integ.decay > 0)
