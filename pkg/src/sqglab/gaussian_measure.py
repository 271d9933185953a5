"""Sampling the Gaussian invariant measure rho and Monte-Carlo checks of its identities.

Convention: for every canonical ``k`` the real and imaginary parts of
``psi_k`` are independent centred normals of variance ``|k|^-2 / 2``, so that
``E|psi_k|^2 = |k|^-2``; ``psi_{-k} = conj(psi_k)``.

Random streams use numpy's ``PCG64`` bit generator and its ziggurat normal
sampler. A sampler seeded with ``seed`` draws from
``SeedSequence(seed)``; worker/member ``i`` uses
``SeedSequence(seed, spawn_key=(i,))``. Draw order per field is canonical
mode order, real part before imaginary part.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .lattice import SpectralField, band


def make_rng(seed: int, key=None) -> np.random.Generator:
    """Deterministic generator for ``seed`` and optional spawn key tuple."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(key) if key is not None else ())
    return np.random.Generator(np.random.PCG64(ss))


def field_scale(N: int):
    """Per-component standard deviation ``|k|^-1 / sqrt(2)`` on the canonical half."""
    b = band(N)
    return 1.0 / (b.norms[: b.H] * math.sqrt(2.0))


class MeasureSampler:
    """Seeded stream of independent draws from rho on ``band(N)``."""

    def __init__(self, N: int, seed: int = 0, key=()):
        self.N = int(N)
        self.seed = int(seed)
        self.key = tuple(key)
        self.rng = make_rng(self.seed, self.key)
        self._scale = field_scale(self.N)

    def spawn(self, i: int) -> "MeasureSampler":
        """Independent child stream number ``i``."""
        return MeasureSampler(self.N, self.seed, self.key + (int(i),))

    def sample_batch(self, n: int):
        """``(n, K)`` array of coefficient vectors."""
        z = self.rng.standard_normal((int(n), band(self.N).H, 2))
        half = (z[..., 0] + 1j * z[..., 1]) * self._scale
        return np.concatenate([half, half.conj()], axis=1)

    def sample(self) -> SpectralField:
        return SpectralField(self.N, self.sample_batch(1)[0])


def sample_rho(sampler: MeasureSampler) -> SpectralField:
    return sampler.sample()


@dataclass(frozen=True)
class MCEstimate:
    mean: complex
    std_error: float
    n_used: int
    n_nonfinite: int = 0

    def __iter__(self):
        # allows ``mean, se = mc_expectation(...)``
        return iter((self.mean, self.std_error))

    def z_score(self, target: complex = 0.0) -> float:
        d = abs(self.mean - target)
        if self.std_error == 0:
            return 0.0 if d == 0 else math.inf
        return d / self.std_error


def summarize(values) -> MCEstimate:
    """Mean and standard error of a 1-D sample, dropping non-finite entries."""
    x = np.asarray(values)
    ok = np.isfinite(x)
    bad = int(x.size - ok.sum())
    if bad:
        warnings.warn(f"{bad} non-finite sample values excluded", RuntimeWarning, stacklevel=2)
    x = x[ok]
    n = x.size
    if n < 2:
        raise ValueError("need at least two finite samples")
    mean = x.mean()
    if np.iscomplexobj(x):
        var = x.real.var(ddof=1) + x.imag.var(ddof=1)
        mean = complex(mean)
    else:
        var = x.var(ddof=1)
        mean = float(mean)
    return MCEstimate(mean, math.sqrt(var / n), n, bad)


def mc_expectation(F, n_samples: int, sampler: MeasureSampler, vectorized: bool = False) -> MCEstimate:
    """Monte-Carlo mean and standard error of ``F`` under rho.

    ``F`` maps a :class:`SpectralField` to a number, or, with
    ``vectorized=True``, an ``(n, K)`` array to ``n`` numbers.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    values = sampler.sample_batch(n_samples)
    if vectorized:
        out = np.asarray(F(values))
    else:
        out = np.array([F(SpectralField(sampler.N, v)) for v in values])
    if not np.iscomplexobj(out) and np.all(np.isreal(out)):
        out = out.astype(np.float64)
    return summarize(out)


def ibp_residual(F, k, n_samples: int, sampler: MeasureSampler) -> MCEstimate:
    """Estimate ``E[D_k F] - |k|^2 E[psi_{-k} F]`` from one set of samples.

    ``F`` is any object with ``evaluate_batch(values, N)`` and
    ``derivative(k)`` (e.g. :class:`sqglab.malliavin.Polynomial`).
    """
    N = sampler.N
    b = band(N)
    k = (int(k[0]), int(k[1]))
    values = sampler.sample_batch(n_samples)
    lhs = F.derivative(k).evaluate_batch(values, N)
    mk = b.index((-k[0], -k[1]))
    rhs = (k[0] ** 2 + k[1] ** 2) * values[:, mk] * F.evaluate_batch(values, N)
    return summarize(np.asarray(lhs - rhs, dtype=np.complex128))


def l2_pair(f: SpectralField, values):
    """``<f, psi> = sum_k f_k psi_{-k}`` row-wise (real for real f, psi)."""
    b = band(f.N)
    v = np.atleast_2d(values)
    return np.sum(f.values * v[:, b.neg], axis=1).real


def characteristic_functional(f: SpectralField) -> float:
    """``E exp(i <f, psi>)`` for the L2 pairing: ``exp(-1/2 sum_k |f_k|^2 |k|^-2)``."""
    b = f.band
    s = math.fsum((np.abs(f.values) ** 2 / b.norm2).tolist())
    return math.exp(-0.5 * s)
