"""Closed-form coefficient algebra for the SQG nonlinearity and its Poisson inverse.

All formulas take integer wavevectors and evaluate in double precision; the
integer parts (cross products, squared norms) are exact.
"""
from __future__ import annotations

import math

import numpy as np


def _vec(k):
    return int(k[0]), int(k[1])


def _norm(k):
    return math.sqrt(k[0] * k[0] + k[1] * k[1])


def perp_dot(a, b) -> int:
    """``a^perp . b`` with ``a^perp = (-a_y, a_x)``."""
    return -a[1] * b[0] + a[0] * b[1]


def alpha(h1, h2, k) -> float:
    """Symmetrised convolution weight ``|k|^{-1} (h1^perp.h2)(|h1| - |h2|)``."""
    h1, h2, k = _vec(h1), _vec(h2), _vec(k)
    if h1 == (0, 0) or h2 == (0, 0) or k == (0, 0):
        raise ValueError("zero wavevector in alpha")
    if h1[0] + h2[0] != k[0] or h1[1] + h2[1] != k[1]:
        raise ValueError(f"h1 + h2 != k: {h1} + {h2} != {k}")
    return perp_dot(h1, h2) * (_norm(h1) - _norm(h2)) / _norm(k)


def alpha_unsymmetrized(h1, h2, k) -> float:
    """Raw weight ``-|k|^{-1} (h1^perp.h2) |h2|`` before symmetrising in (h1, h2)."""
    h1, h2, k = _vec(h1), _vec(h2), _vec(k)
    return -perp_dot(h1, h2) * _norm(h2) / _norm(k)


def beta(k, j, delta: float) -> float:
    """``(j^perp.(k-j))(|k-j| - |j|) / (|j|^{2+2d} + |k-j|^{2+2d})``."""
    k, j = _vec(k), _vec(j)
    kj = (k[0] - j[0], k[1] - j[1])
    if j == (0, 0) or kj == (0, 0):
        raise ValueError("beta needs j != 0 and k - j != 0")
    e = 2.0 + 2.0 * delta
    nj, nkj = _norm(j), _norm(kj)
    return perp_dot(j, kj) * (nkj - nj) / (nj**e + nkj**e)


def beta_minus_paper(k, j, delta: float) -> float:
    """Second coefficient of the gradient of H written out directly.

    ``(j^perp.(-k-j))(|k+j| - |j|) / (|j|^{2+2d} + |k+j|^{2+2d})``; this is
    what ``beta(k, -j)`` must reproduce.
    """
    k, j = _vec(k), _vec(j)
    mkj = (-k[0] - j[0], -k[1] - j[1])
    e = 2.0 + 2.0 * delta
    nj, nkj = _norm(j), _norm(mkj)
    return perp_dot(j, mkj) * (nkj - nj) / (nj**e + nkj**e)


def gamma(k, j, delta: float) -> float:
    """``2 |j|^{2d} beta(k, j)^2 / (|k|^2 |k-j|^2)``."""
    k, j = _vec(k), _vec(j)
    b = beta(k, j, delta)
    kj2 = (k[0] - j[0]) ** 2 + (k[1] - j[1]) ** 2
    k2 = k[0] ** 2 + k[1] ** 2
    return 2.0 * _norm(j) ** (2 * delta) * b * b / (k2 * kj2)


def poisson_kernel(j1, j2, k, delta: float) -> float:
    """Coefficient of ``psi_{j1} psi_{j2}`` in the k-th component of H."""
    j1, j2 = _vec(j1), _vec(j2)
    e = 2.0 + 2.0 * delta
    return -alpha(j1, j2, k) / (_norm(j1) ** e + _norm(j2) ** e)


# -- vectorised forms -------------------------------------------------------


def alpha_array(h1, h2):
    """``alpha(h1, h2, h1 + h2)`` for integer arrays of shape ``(..., 2)``."""
    h1 = np.asarray(h1, dtype=np.int64)
    h2 = np.asarray(h2, dtype=np.int64)
    k = h1 + h2
    cross = -h1[..., 1] * h2[..., 0] + h1[..., 0] * h2[..., 1]
    n1 = np.sqrt((h1**2).sum(-1).astype(np.float64))
    n2 = np.sqrt((h2**2).sum(-1).astype(np.float64))
    nk = np.sqrt((k**2).sum(-1).astype(np.float64))
    return cross * (n1 - n2) / nk


def beta_array(k, j, delta: float):
    k = np.asarray(k, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    kj = k - j
    cross = -j[..., 1] * kj[..., 0] + j[..., 0] * kj[..., 1]
    nj = np.sqrt((j**2).sum(-1).astype(np.float64))
    nkj = np.sqrt((kj**2).sum(-1).astype(np.float64))
    e = 2.0 + 2.0 * delta
    return cross * (nkj - nj) / (nj**e + nkj**e)


def gamma_array(k, j, delta: float):
    k = np.asarray(k, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    b = beta_array(k, j, delta)
    kj2 = ((k - j) ** 2).sum(-1).astype(np.float64)
    k2 = (k**2).sum(-1).astype(np.float64)
    nj = np.sqrt((j**2).sum(-1).astype(np.float64))
    return 2.0 * nj ** (2 * delta) * b * b / (k2 * kj2)


def _disc(J):
    r = np.arange(-J, J + 1)
    x, y = np.meshgrid(r, r, indexing="ij")
    pts = np.stack([x.ravel(), y.ravel()], axis=1)
    n2 = (pts**2).sum(1)
    return pts[(n2 > 0) & (n2 <= J * J)]


def gamma_row_sum(k, delta: float, J: int) -> float:
    """``sum_{0 < |j| <= J, j != k} gamma(k, j, delta)`` by direct summation."""
    k = _vec(k)
    if k == (0, 0):
        raise ValueError("k must be nonzero")
    j = _disc(int(J))
    j = j[(j[:, 0] != k[0]) | (j[:, 1] != k[1])]
    g = gamma_array(np.broadcast_to(np.array(k), j.shape), j, delta)
    return math.fsum(np.sort(g).tolist())


def beta_symmetry_violations(k, delta: float, J: int, rtol: float = 1e-12):
    """Count ``j`` in ``0 < |j| <= J`` with ``beta(k, -j) != beta(k, j)``.

    Returns ``(n_violations, n_checked, max_abs_difference)``. Pairs where
    ``k - j`` or ``k + j`` vanish are skipped.
    """
    k = np.array(_vec(k))
    j = _disc(int(J))
    ok = np.any(j != k, axis=1) & np.any(j != -k, axis=1)
    j = j[ok]
    kk = np.broadcast_to(k, j.shape)
    bp = beta_array(kk, j, delta)
    bm = beta_array(kk, -j, delta)
    diff = np.abs(bp - bm)
    bad = diff > rtol * np.maximum(np.abs(bp), np.abs(bm)) + 1e-300
    return int(bad.sum()), int(j.shape[0]), float(diff.max(initial=0.0))


def coefficient_check_rows(modes, deltas, J: int):
    """Rows ``(kx, ky, delta, J, row_sum, row_sum_scaled)`` for the CSV export."""
    rows = []
    for d in deltas:
        for k in modes:
            s = gamma_row_sum(k, d, J)
            rows.append(
                {
                    "kx": int(k[0]),
                    "ky": int(k[1]),
                    "delta": float(d),
                    "J": int(J),
                    "row_sum": s,
                    "row_sum_scaled": s * _norm(k) ** (2 * d),
                }
            )
    return rows
