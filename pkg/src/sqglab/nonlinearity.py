"""Truncated quadratic nonlinearity B^N by direct convolution over mode pairs."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .coefficients import alpha, alpha_array, alpha_unsymmetrized
from .kernels import PairTable
from .lattice import SpectralField, band


@dataclass(frozen=True)
class NonlinearityResult:
    field: SpectralField
    pair_count: int


@lru_cache(maxsize=16)
def pair_table(N: int) -> PairTable:
    """Unordered pairs ``{h1, h2}`` with ``h1 + h2 = k`` for canonical ``k``.

    Coefficients are ``2 alpha`` (both orderings folded); pairs with
    ``alpha == 0`` exactly are dropped.
    """
    b = band(N)
    H, K = b.H, b.K
    k = b.modes[:H]
    h1 = b.modes
    diff = k[:, None, :] - h1[None, :, :]
    i2 = b.lookup(diff[..., 0], diff[..., 1])
    out = np.broadcast_to(np.arange(H)[:, None], (H, K))
    i1 = np.broadcast_to(np.arange(K)[None, :], (H, K))
    keep = (i2 >= 0) & (i1 < i2)
    out, i1, i2 = out[keep], i1[keep], i2[keep]
    coef = 2.0 * alpha_array(b.modes[i1], b.modes[i2])
    nz = coef != 0.0
    return PairTable(out[nz], i1[nz], i2[nz], coef[nz], H)


@lru_cache(maxsize=None)
def ordered_pair_count(N: int) -> int:
    """Number of ordered ``(h1, h2)`` in the band with ``h1 + h2`` in the band."""
    b = band(N)
    s = b.modes[:, None, :] + b.modes[None, :, :]
    n2 = (s**2).sum(-1)
    return int(((n2 > 0) & (n2 <= N * N)).sum())


def nonlinearity_batch(values, N: int):
    """B^N row-wise for coefficient arrays ``(n, K)`` on ``band(N)``."""
    half = pair_table(N).apply(values)
    return np.concatenate([half, half.conj()], axis=-1)


def _restrict(psi: SpectralField, N: int):
    if psi.N == N:
        return psi.values
    b = band(N)
    if psi.N > N:
        return psi.values[band(psi.N).embed_indices(b)]
    out = np.zeros(b.K, dtype=np.complex128)
    out[b.embed_indices(band(psi.N))] = psi.values
    return out


def eval_B(psi: SpectralField, N: int | None = None) -> NonlinearityResult:
    """B^N(psi) = Pi_N B(Pi_N psi, Pi_N psi)."""
    N = psi.N if N is None else int(N)
    v = nonlinearity_batch(_restrict(psi, N)[None, :], N)[0]
    return NonlinearityResult(SpectralField(N, v), ordered_pair_count(N))


def eval_B_bilinear(f: SpectralField, g: SpectralField, N: int | None = None) -> SpectralField:
    """Polarised form ``B(f, g) = (B(f+g) - B(f) - B(g)) / 2``."""
    N = f.N if N is None else int(N)
    a = _restrict(f, N)
    c = _restrict(g, N)
    rows = nonlinearity_batch(np.stack([a + c, a, c]), N)
    return SpectralField(N, 0.5 * (rows[0] - rows[1] - rows[2]))


def b_component(values, N: int, k, symmetrized: bool = True) -> complex:
    """One component ``B_k`` by explicit ordered-pair enumeration.

    Works on arbitrary (not necessarily real) coordinate vectors; used as
    an oracle and for finite differences.
    """
    b = band(N)
    k = (int(k[0]), int(k[1]))
    h1 = b.modes
    h2 = np.array(k) - h1
    i2 = b.lookup(h2[:, 0], h2[:, 1])
    total = 0j
    for i in np.flatnonzero(i2 >= 0):
        a1 = tuple(int(x) for x in h1[i])
        a2 = tuple(int(x) for x in h2[i])
        w = alpha(a1, a2, k) if symmetrized else alpha_unsymmetrized(a1, a2, k)
        total += w * values[i] * values[i2[i]]
    return total


def eval_B_unsymmetrized(psi: SpectralField, N: int | None = None) -> SpectralField:
    """B^N from the raw kernel ``-|k|^{-1}(h1^perp.h2)|h2|`` (oracle, slow)."""
    N = psi.N if N is None else int(N)
    v = _restrict(psi, N)
    b = band(N)
    half = np.array([b_component(v, N, b.modes[i], symmetrized=False) for i in range(b.H)])
    return SpectralField.from_half(N, half)


def h1_pairing(psi: SpectralField, N: int | None = None, return_scale: bool = False):
    """``sum_k |k|^2 B_k(psi) psi_{-k}``; identically zero for real psi."""
    N = psi.N if N is None else int(N)
    v = _restrict(psi, N)
    b = band(N)
    B = nonlinearity_batch(v[None, :], N)[0]
    terms = b.norm2 * B * v[b.neg]
    val = math.fsum(terms.real.tolist())
    if return_scale:
        return val, float(np.sum(b.norm2 * np.abs(B) * np.abs(v)))
    return val


def l2_pairing(psi: SpectralField, N: int | None = None) -> float:
    """``sum_k B_k(psi) psi_{-k}``; reported, not assumed to vanish."""
    N = psi.N if N is None else int(N)
    v = _restrict(psi, N)
    B = nonlinearity_batch(v[None, :], N)[0]
    return math.fsum((B * v[band(N).neg]).real.tolist())


def h1_pairing_batch(values, N: int):
    b = band(N)
    B = nonlinearity_batch(values, N)
    pair = np.sum(b.norm2 * B * values[:, b.neg], axis=1).real
    scale = np.sum(b.norm2 * np.abs(B) * np.abs(values), axis=1)
    return pair, scale


def jacobian_entry(psi: SpectralField, k, h, N: int | None = None) -> complex:
    """``dB_k / d psi_h`` with ``psi_h`` and ``psi_{-h}`` independent."""
    N = psi.N if N is None else int(N)
    v = _restrict(psi, N)
    b = band(N)
    k = (int(k[0]), int(k[1]))
    h = (int(h[0]), int(h[1]))
    partner = (k[0] - h[0], k[1] - h[1])
    if partner == (0, 0) or not b.contains(partner) or not b.contains(h):
        return 0j
    # alpha is symmetric, so both orderings contribute equally
    return 2.0 * alpha(h, partner, k) * v[b.index(partner)]


def state_divergence(psi: SpectralField, k, N: int | None = None) -> complex:
    """``dB_k / d psi_k``; the partner of ``k`` in ``k = h1 + h2`` is the mean mode."""
    N = psi.N if N is None else int(N)
    if not band(N).contains(k):
        raise ValueError(f"{k} outside band N={N}")
    return jacobian_entry(psi, k, k, N)
