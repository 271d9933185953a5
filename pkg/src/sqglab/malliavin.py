"""Calculus on cylindrical functions: gradient, generators, energy form, Poisson inverse.

Coordinates ``psi_k`` and ``psi_{-k}`` are treated as independent complex
variables, so ``D_k`` is the Wirtinger derivative with respect to ``psi_k``.
With preset exponents ``(a, b)`` the linear generator reads

    L0 phi = sum_k ( -|k|^a psi_k D_k phi + |k|^{2b} D_k D_{-k} phi ),

and the full truncated generator adds ``sum_k B_k(psi) D_k phi``, the
directional derivative of ``phi`` along the nonlinear vector field.
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .coefficients import alpha, alpha_array, beta_array, gamma_array
from .gaussian_measure import MeasureSampler
from .kernels import PairTable
from .lattice import SpectralField, band
from .nonlinearity import nonlinearity_batch
from .presets import GeneratorPreset

# -- general polynomials ------------------------------------------------------


def _key(modes):
    return tuple(sorted((int(m[0]), int(m[1])) for m in modes))


def _n2(k):
    return k[0] * k[0] + k[1] * k[1]


@lru_cache(maxsize=65536)
def _wick_monomial(mono) -> float:
    if not mono:
        return 1.0
    if len(mono) % 2:
        return 0.0
    first, rest = mono[0], mono[1:]
    total = 0.0
    target = (-first[0], -first[1])
    for i, m in enumerate(rest):
        if m == target:
            total += _wick_monomial(rest[:i] + rest[i + 1 :]) / _n2(first)
    return total


class Polynomial:
    """Finite polynomial in the coordinates ``psi_k``.

    Terms map a sorted tuple of wavevectors (a multiset) to a complex
    coefficient; the empty tuple is the constant term.
    """

    def __init__(self, terms=None):
        self.terms = {}
        for mono, c in (terms or {}).items():
            c = complex(c)
            if c != 0:
                self.terms[_key(mono)] = self.terms.get(_key(mono), 0j) + c
        self.terms = {m: c for m, c in self.terms.items() if c != 0}

    @classmethod
    def constant(cls, c) -> "Polynomial":
        return cls({(): c})

    @classmethod
    def mode(cls, k) -> "Polynomial":
        if tuple(k) == (0, 0):
            raise ValueError("zero wavevector")
        return cls({((int(k[0]), int(k[1])),): 1.0})

    @classmethod
    def monomial(cls, modes, c=1.0) -> "Polynomial":
        return cls({_key(modes): c})

    def __repr__(self):
        return f"Polynomial({len(self.terms)} terms, degree {self.degree})"

    @property
    def degree(self) -> int:
        return max((len(m) for m in self.terms), default=0)

    def modes(self):
        return sorted({k for m in self.terms for k in m})

    def _combine(self, other, sign):
        other = other if isinstance(other, Polynomial) else Polynomial.constant(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0j) + sign * c
        return Polynomial(out)

    def __add__(self, other):
        return self._combine(other, 1)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, -1)

    def __neg__(self):
        return Polynomial({m: -c for m, c in self.terms.items()})

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return Polynomial({m: c * other for m, c in self.terms.items()})
        out = defaultdict(complex)
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                out[_key(m1 + m2)] += c1 * c2
        return Polynomial(out)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.terms == other.terms

    def conj(self) -> "Polynomial":
        """Coefficientwise conjugate with ``psi_k -> psi_{-k}`` (value conjugate on real fields)."""
        return Polynomial({tuple((-a, -b) for a, b in m): c.conjugate() for m, c in self.terms.items()})

    def real_part(self) -> "Polynomial":
        return (self + self.conj()) * 0.5

    def derivative(self, k) -> "Polynomial":
        k = (int(k[0]), int(k[1]))
        out = defaultdict(complex)
        for m, c in self.terms.items():
            n = m.count(k)
            if n:
                i = m.index(k)
                out[m[:i] + m[i + 1 :]] += n * c
        return Polynomial(out)

    def evaluate_batch(self, values, N: int):
        """Values on an ``(n, K)`` coefficient array of ``band(N)``."""
        b = band(N)
        v = np.atleast_2d(values)
        out = np.zeros(v.shape[0], dtype=np.complex128)
        for m, c in self.terms.items():
            term = np.full(v.shape[0], c, dtype=np.complex128)
            for k in m:
                if not b.contains(k):
                    term = 0.0
                    break
                term = term * v[:, b.index(k)]
            out += term
        return out

    def evaluate(self, psi: SpectralField) -> complex:
        return complex(self.evaluate_batch(psi.values[None, :], psi.N)[0])

    def wick_expectation(self) -> complex:
        """Exact mean under rho via Isserlis pairings ``E psi_a psi_b = |a|^-2 [b = -a]``."""
        return complex(math.fsum(c.real * _wick_monomial(m) for m, c in self.terms.items())) + 1j * math.fsum(
            c.imag * _wick_monomial(m) for m, c in self.terms.items()
        )


def _preset(delta, preset):
    return GeneratorPreset.generator(delta) if preset is None else preset


def poly_L0(P: Polynomial, N: int, preset: GeneratorPreset, drift_sign: float = -1.0) -> Polynomial:
    """Symbolic ``L0 P`` with the sum over ``|k| <= N``."""
    out = defaultdict(complex)
    for m, c in P.terms.items():
        cnt = Counter(m)
        rate = 0.0
        for k, n in cnt.items():
            if _n2(k) <= N * N:
                rate += n * math.sqrt(_n2(k)) ** preset.a
        if rate:
            out[m] += drift_sign * rate * c
        for k, n in cnt.items():
            mk = (-k[0], -k[1])
            nm = cnt.get(mk, 0)
            if nm and _n2(k) <= N * N:
                rest = list(m)
                rest.remove(k)
                rest.remove(mk)
                out[_key(rest)] += n * nm * math.sqrt(_n2(k)) ** (2 * preset.b) * c
    return Polynomial(out)


def poly_B(k, N: int) -> Polynomial:
    """``B_k`` as a polynomial over ordered pairs in ``band(N)``."""
    k = (int(k[0]), int(k[1]))
    b = band(N)
    out = defaultdict(complex)
    if not b.contains(k):
        return Polynomial()
    for h1 in b.modes:
        h1 = (int(h1[0]), int(h1[1]))
        h2 = (k[0] - h1[0], k[1] - h1[1])
        if h2 == (0, 0) or not b.contains(h2):
            continue
        w = alpha(h1, h2, k)
        if w:
            out[_key((h1, h2))] += w
    return Polynomial(out)


def poly_LN(P: Polynomial, N: int, preset: GeneratorPreset, variant: str = "l2", drift_sign: float = -1.0) -> Polynomial:
    """Symbolic ``L_N P``; ``variant='h1_literal'`` uses ``sum |k|^2 B_k D_{-k} P`` instead."""
    out = poly_L0(P, N, preset, drift_sign)
    for k in P.modes():
        if _n2(k) > N * N:
            continue
        if variant == "l2":
            out = out + poly_B(k, N) * P.derivative(k)
        elif variant == "h1_literal":
            mk = (-k[0], -k[1])
            out = out + poly_B(mk, N) * P.derivative(k) * _n2(k)
        else:
            raise ValueError(f"unknown variant {variant!r}")
    return out


def poly_generator_batch(
    P: Polynomial, values, N: int, preset: GeneratorPreset, nonlinear=True, variant="l2", drift_sign=-1.0
):
    """``L_N P`` (or ``L0 P``) evaluated row-wise on ``(n, K)`` samples."""
    b = band(N)
    v = np.atleast_2d(values)
    out = poly_L0(P, N, preset, drift_sign).evaluate_batch(v, N)
    if not nonlinear:
        return out
    B = nonlinearity_batch(v, N)
    for k in P.modes():
        if not b.contains(k):
            continue
        dP = P.derivative(k).evaluate_batch(v, N)
        if variant == "l2":
            out = out + B[:, b.index(k)] * dP
        elif variant == "h1_literal":
            out = out + _n2(k) * B[:, b.index((-k[0], -k[1]))] * dP
        else:
            raise ValueError(f"unknown variant {variant!r}")
    return out


# -- quadratic forms ---------------------------------------------------------


class CylindricalQuadratic:
    """``phi(psi) = constant + sum_{(j1, j2)} c(j1, j2) psi_{j1} psi_{j2}`` over ordered pairs.

    Storage is symmetric: ``c(j1, j2) == c(j2, j1)``.
    """

    def __init__(self, coeffs=None, constant=0.0):
        self.coeffs = {}
        for (j1, j2), c in (coeffs or {}).items():
            j1 = (int(j1[0]), int(j1[1]))
            j2 = (int(j2[0]), int(j2[1]))
            if j1 == (0, 0) or j2 == (0, 0):
                raise ValueError("zero wavevector in quadratic form")
            self.coeffs[(j1, j2)] = complex(c)
        for (j1, j2), c in self.coeffs.items():
            if self.coeffs.get((j2, j1)) != c:
                raise ValueError(f"asymmetric storage at {(j1, j2)}")
        self.constant = complex(constant)

    @classmethod
    def from_products(cls, products, constant=0.0) -> "CylindricalQuadratic":
        """Build from ``[(j1, j2, c), ...]`` meaning ``c psi_{j1} psi_{j2}``, symmetrising."""
        acc = defaultdict(complex)
        for j1, j2, c in products:
            j1 = (int(j1[0]), int(j1[1]))
            j2 = (int(j2[0]), int(j2[1]))
            acc[(j1, j2)] += 0.5 * c
            acc[(j2, j1)] += 0.5 * c
        return cls(acc, constant)

    def support(self):
        return sorted({j for pair in self.coeffs for j in pair})

    def to_polynomial(self) -> Polynomial:
        terms = defaultdict(complex)
        terms[()] += self.constant
        for (j1, j2), c in self.coeffs.items():
            terms[_key((j1, j2))] += c
        return Polynomial(terms)

    def arrays(self, N: int):
        """Index arrays ``(i1, i2, c)`` into ``band(N)``; pairs outside the band are dropped."""
        b = band(N)
        rows = [
            (b.index(j1), b.index(j2), c)
            for (j1, j2), c in self.coeffs.items()
            if b.contains(j1) and b.contains(j2)
        ]
        if not rows:
            return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.complex128)
        i1, i2, c = zip(*rows)
        return np.array(i1), np.array(i2), np.array(c, dtype=np.complex128)

    def evaluate_batch(self, values, N: int):
        v = np.atleast_2d(values)
        i1, i2, c = self.arrays(N)
        return self.constant + (v[:, i1] * v[:, i2]) @ c

    def gradient_batch(self, values, N: int):
        """``(n, K)`` array of ``D_k phi = 2 sum_j c(k, j) psi_j``."""
        v = np.atleast_2d(values)
        i1, i2, c = self.arrays(N)
        g = np.zeros(v.shape, dtype=np.complex128)
        for t in range(i1.size):
            g[:, i1[t]] += 2.0 * c[t] * v[:, i2[t]]
        return g

    def second_order(self, N: int):
        """``D_k D_{-k} phi = 2 c(k, -k)`` for every mode of ``band(N)``."""
        b = band(N)
        i1, i2, c = self.arrays(N)
        out = np.zeros(b.K, dtype=np.complex128)
        hit = i2 == b.neg[i1]
        np.add.at(out, i1[hit], 2.0 * c[hit])
        return out


def _values(psi, N):
    if isinstance(psi, SpectralField):
        if psi.N != N:
            from .nonlinearity import _restrict

            return _restrict(psi, N)[None, :]
        return psi.values[None, :]
    return np.atleast_2d(psi)


def grad(phi: CylindricalQuadratic, psi: SpectralField, k) -> complex:
    """``D_k phi`` at ``psi``."""
    k = (int(k[0]), int(k[1]))
    total = 0j
    for (j1, j2), c in phi.coeffs.items():
        if j1 == k:
            total += 2.0 * c * psi[j2]
    return total


def apply_L0(phi, psi, delta: float, N: int, preset: GeneratorPreset | None = None, drift_sign: float = -1.0):
    """Linear generator on a quadratic form; scalar for a field, array for ``(n, K)`` input."""
    preset = _preset(delta, preset)
    b = band(N)
    v = _values(psi, N)
    g = phi.gradient_batch(v, N)
    out = drift_sign * (g * v) @ preset.rates(b.norms) + phi.second_order(N) @ preset.diffusion(b.norms)
    return complex(out[0]) if isinstance(psi, SpectralField) else out


def apply_LN(
    phi, psi, delta: float, N: int, preset: GeneratorPreset | None = None, variant: str = "l2", drift_sign: float = -1.0
):
    """``L0 phi + sum_k B_k D_k phi``.

    ``variant='h1_literal'`` pairs ``|k|^2 B_k`` with ``D_{-k} phi`` instead;
    that form is not measure preserving and exists for fault injection.
    """
    b = band(N)
    v = _values(psi, N)
    out = np.atleast_1d(apply_L0(phi, v, delta, N, preset, drift_sign))
    g = phi.gradient_batch(v, N)
    B = nonlinearity_batch(v, N)
    if variant == "l2":
        out = out + np.sum(B * g, axis=1)
    elif variant == "h1_literal":
        out = out + np.sum(b.norm2 * B * g[:, b.neg], axis=1)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return complex(out[0]) if isinstance(psi, SpectralField) else out


def energy_form(phi, psi, delta: float, N: int | None = None):
    """``1/2 sum_k |k|^{2 delta} |D_k phi|^2``."""
    N = psi.N if isinstance(psi, SpectralField) and N is None else N
    b = band(N)
    g = phi.gradient_batch(_values(psi, N), N)
    out = 0.5 * (np.abs(g) ** 2) @ b.norms ** (2 * delta)
    return float(out[0]) if isinstance(psi, SpectralField) else out


def carre_du_champ(P: Polynomial, values, N: int, preset: GeneratorPreset):
    """``L0(P^2) - 2 P L0 P`` evaluated row-wise (equals ``4 E(P)`` for real ``P``)."""
    lhs = poly_L0(P * P, N, preset).evaluate_batch(values, N)
    return lhs - 2.0 * P.evaluate_batch(values, N) * poly_L0(P, N, preset).evaluate_batch(values, N)


# -- Poisson inverse ---------------------------------------------------------


class PoissonDrift:
    """Closed-form ``H^N`` with ``L0 H^N = B^N`` under the generator preset.

    ``H_k`` carries ``poisson_kernel(j1, j2, k)`` on every ordered pair
    ``j1 + j2 = k`` inside the band. Per-mode quadratic forms are built on
    demand; whole-band evaluation goes through flat index arrays.
    """

    def __init__(self, N: int, delta: float):
        self.N = int(N)
        self.delta = float(delta)
        b = band(self.N)
        H, K = b.H, b.K
        diff = b.modes[:H, None, :] - b.modes[None, :, :]
        i2 = b.lookup(diff[..., 0], diff[..., 1])
        out = np.broadcast_to(np.arange(H)[:, None], (H, K))
        i1 = np.broadcast_to(np.arange(K)[None, :], (H, K))
        keep = i2 >= 0
        out, i1, i2 = out[keep], i1[keep], i2[keep]
        e = 2.0 + 2.0 * self.delta
        c = -alpha_array(b.modes[i1], b.modes[i2]) / (b.norms[i1] ** e + b.norms[i2] ** e)
        nz = c != 0.0
        # ordered pairs, both orderings present, sorted by output mode
        self.out, self.i1, self.i2, self.c = out[nz], i1[nz], i2[nz], c[nz]
        self._table = None
        self._cache = {}

    @property
    def table(self) -> PairTable:
        if self._table is None:
            self._table = PairTable(self.out, self.i1, self.i2, self.c, band(self.N).H)
        return self._table

    def component(self, k) -> CylindricalQuadratic:
        """``H_k`` as a quadratic form (any ``k`` in the band, either half)."""
        k = (int(k[0]), int(k[1]))
        if k in self._cache:
            return self._cache[k]
        b = band(self.N)
        idx = b.index(k)
        sign = 1
        if idx >= b.H:
            idx, sign = idx - b.H, -1
        sel = self.out == idx
        coeffs = {}
        for a1, a2, c in zip(self.i1[sel], self.i2[sel], self.c[sel]):
            j1 = tuple(int(x) * sign for x in b.modes[a1])
            j2 = tuple(int(x) * sign for x in b.modes[a2])
            coeffs[(j1, j2)] = c
        q = CylindricalQuadratic(coeffs)
        self._cache[k] = q
        return q

    def __getitem__(self, k):
        return self.component(k)

    def real_part(self, k, sign: str = "+") -> CylindricalQuadratic:
        """``H_k^+ = Re H_k`` or ``H_k^- = Im H_k`` as quadratic forms."""
        hk = self.component(k)
        hm = self.component((-k[0], -k[1]))
        acc = defaultdict(complex)
        w = 0.5 if sign == "+" else -0.5j
        for key, c in hk.coeffs.items():
            acc[key] += w * c
        for key, c in hm.coeffs.items():
            acc[key] += (0.5 if sign == "+" else 0.5j) * c
        return CylindricalQuadratic(acc)

    def evaluate_batch(self, values):
        """``H^N(psi)`` on ``(n, K)`` samples, full band."""
        half = self.table.apply(values)
        return np.concatenate([half, half.conj()], axis=-1)

    def second_order_count(self) -> int:
        """Number of stored ``(j, -j)`` pairs; zero by construction."""
        return int(np.sum(self.i2 == band(self.N).neg[self.i1]))

    def L0_batch(self, values, preset: GeneratorPreset | None = None):
        """``L0 H_k`` for every canonical ``k`` via the generic quadratic-form rule."""
        preset = _preset(self.delta, preset)
        b = band(self.N)
        v = np.atleast_2d(values)
        lam = preset.rates(b.norms)
        # D_j H_k = 2 sum c(j, i) psi_i, paired with -|j|^a psi_j
        tab = PairTable(self.out, self.i1, self.i2, -2.0 * lam[self.i1] * self.c, b.H)
        drift = tab.apply(v)
        so = np.zeros(b.H)
        hit = self.i2 == b.neg[self.i1]
        np.add.at(so, self.out[hit], 2.0 * self.c[hit] * preset.diffusion(b.norms)[self.i1[hit]])
        return drift + so


@lru_cache(maxsize=8)
def build_H(N: int, delta: float) -> PoissonDrift:
    return PoissonDrift(N, delta)


def verify_generator_identity(N: int, delta: float, psi) -> float:
    """``max_k |L0 H_k - B_k| / (1 + |B_k|)`` over the band (and over rows for arrays)."""
    H = build_H(int(N), float(delta))
    v = _values(psi, N)
    lhs = H.L0_batch(v)
    rhs = nonlinearity_batch(v, N)[:, : band(N).H]
    return float(np.max(np.abs(lhs - rhs) / (1.0 + np.abs(rhs)), initial=0.0))


# -- energy of H_k through the beta representation ---------------------------


@lru_cache(maxsize=256)
def _beta_stencil(k, delta, N):
    b = band(N)
    kk = np.array(k)
    j = b.modes
    ia = b.lookup(kk[0] - j[:, 0], kk[1] - j[:, 1])
    ib = b.lookup(-kk[0] - j[:, 0], -kk[1] - j[:, 1])
    kb = np.broadcast_to(kk, j.shape)
    # the partner index is -1 where k - j (or -k - j) is zero or out of band
    ca = np.where(ia >= 0, beta_array(kb, j, delta), 0.0)
    cb = np.where(ib >= 0, beta_array(kb, -j, delta), 0.0)
    return ia, ib, ca, cb


def dH_mode_batch(k, sign: str, values, delta: float, N: int, M: int | None = None):
    """``D_j H_k^{+/-}`` for all ``j`` in the band, shape ``(n, K)``.

    ``(beta(k, j) psi_{k-j} +/- beta(k, -j) psi_{-k-j}) / (|k| i^{0/1})``.
    With ``M`` the contribution of ``H^M`` is subtracted.
    """
    k = (int(k[0]), int(k[1]))
    v = np.atleast_2d(values)
    nk = math.sqrt(_n2(k))
    ia, ib, ca, cb = _beta_stencil(k, float(delta), int(N))
    if M is not None:
        b = band(N)
        inM = b.norm2 <= M * M
        inA = np.where(ia >= 0, b.norm2[np.maximum(ia, 0)] <= M * M, False)
        inB = np.where(ib >= 0, b.norm2[np.maximum(ib, 0)] <= M * M, False)
        ca = np.where(inM & inA, 0.0, ca)
        cb = np.where(inM & inB, 0.0, cb)
    a = ca * np.where(ia >= 0, v[:, np.maximum(ia, 0)], 0.0)
    c = cb * np.where(ib >= 0, v[:, np.maximum(ib, 0)], 0.0)
    if sign == "+":
        return (a + c) / nk
    if sign == "-":
        return (a - c) / (1j * nk)
    raise ValueError("sign must be '+' or '-'")


def energy_H_mode(k, sign: str, psi, delta: float, N: int, M: int | None = None):
    """``E^delta(H_k^{+/-})(psi) = 1/2 sum_j |j|^{2 delta} |D_j H_k^{+/-}|^2``."""
    if not band(N).contains(k):
        raise ValueError(f"{k} outside band N={N}")
    d = dH_mode_batch(k, sign, _values(psi, N), delta, N, M)
    out = 0.5 * (np.abs(d) ** 2) @ band(N).norms ** (2 * delta)
    return float(out[0]) if isinstance(psi, SpectralField) else out


def gamma_bound(k, psi, delta: float, N: int):
    """``sum_j gamma(k, j) |psi_{k-j}|^2 |k-j|^2`` over the band."""
    b = band(N)
    kk = np.array([int(k[0]), int(k[1])])
    j = b.modes
    ia = b.lookup(kk[0] - j[:, 0], kk[1] - j[:, 1])
    ok = ia >= 0
    g = np.zeros(b.K)
    g[ok] = gamma_array(np.broadcast_to(kk, j[ok].shape), j[ok], delta)
    v = _values(psi, N)
    amp = np.where(ok, np.abs(v[:, np.maximum(ia, 0)]) ** 2 * b.norm2[np.maximum(ia, 0)], 0.0)
    out = amp @ g
    return float(out[0]) if isinstance(psi, SpectralField) else out


@dataclass(frozen=True)
class ExpMomentResult:
    estimate: float
    std_error: float
    diverged: bool
    top_share: float
    n_samples: int


def exp_moment_from_exponents(x) -> ExpMomentResult:
    """Mean of ``exp(x)`` with a heavy-tail flag.

    Diverged means overflow, or the top 0.1% of samples carrying more than
    half of the sum.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    with np.errstate(over="ignore"):
        w = np.exp(x)
    if not np.all(np.isfinite(w)):
        return ExpMomentResult(math.inf, math.inf, True, 1.0, n)
    top = max(1, int(math.ceil(0.001 * n)))
    s = np.sort(w)
    share = float(s[-top:].sum() / s.sum())
    return ExpMomentResult(float(w.mean()), float(w.std(ddof=1) / math.sqrt(n)), share > 0.5, share, n)


def exp_moment(
    k,
    delta: float,
    lam: float,
    N: int,
    n_samples: int,
    sampler: MeasureSampler,
    sign: str = "+",
    M: int | None = None,
) -> ExpMomentResult:
    """MC estimate of ``E exp(lam |k|^{2 delta} E(H_k^{+/-}))``.

    With ``M < N`` the form is built from ``H^N - H^M`` and the weight is
    ``lam M^{2 delta}``.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if lam == 0:
        return ExpMomentResult(1.0, 0.0, False, 0.0, int(n_samples))
    values = sampler.sample_batch(n_samples)
    e = energy_H_mode(k, sign, values, delta, N, M)
    scale = (M if M is not None else math.sqrt(_n2(k))) ** (2 * delta)
    return exp_moment_from_exponents(lam * scale * e)
