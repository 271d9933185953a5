"""Integer frequency lattice and truncated real spectral fields.

A band of truncation ``N`` holds every ``k`` in Z^2 with ``0 < |k| <= N``.
Modes are stored in a fixed order: the canonical half first (``kx > 0`` or
``kx == 0, ky > 0``), sorted by ``(|k|^2, kx, ky)``, then their negatives in
the same order. Two consequences used throughout the package:

* ``neg[i] == (i + H) % K`` with ``H = K // 2``;
* the canonical half of band ``M`` is a prefix of the canonical half of any
  band ``N >= M``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, NamedTuple

import numpy as np


class WaveVector(NamedTuple):
    x: int
    y: int

    @property
    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y)

    def __neg__(self):
        return WaveVector(-self.x, -self.y)


def is_canonical(k) -> bool:
    """Half-lattice representative rule: ``kx > 0`` or ``kx == 0 and ky > 0``."""
    kx, ky = k
    return kx > 0 or (kx == 0 and ky > 0)


def _check_nonzero(k):
    if k[0] == 0 and k[1] == 0:
        raise ValueError("wavevector (0, 0) is excluded (mean-zero fields)")


class Band:
    """Mode table for the Euclidean ball ``0 < |k| <= N``."""

    def __init__(self, N: int):
        if int(N) != N or N < 1:
            raise ValueError(f"truncation must be a positive integer, got {N!r}")
        N = int(N)
        self.N = N
        r = np.arange(-N, N + 1)
        kx, ky = np.meshgrid(r, r, indexing="ij")
        kx = kx.ravel()
        ky = ky.ravel()
        n2 = kx * kx + ky * ky
        keep = (n2 > 0) & (n2 <= N * N) & ((kx > 0) | ((kx == 0) & (ky > 0)))
        canon = np.stack([kx[keep], ky[keep]], axis=1)
        order = np.lexsort((canon[:, 1], canon[:, 0], (canon**2).sum(1)))
        canon = canon[order]
        self.H = canon.shape[0]
        self.K = 2 * self.H
        self.modes = np.concatenate([canon, -canon]).astype(np.int64)
        self.modes.setflags(write=False)
        self.norm2 = (self.modes**2).sum(1)
        self.norms = np.sqrt(self.norm2.astype(np.float64))
        self.neg = (np.arange(self.K) + self.H) % self.K
        grid = np.full((2 * N + 1, 2 * N + 1), -1, dtype=np.int64)
        grid[self.modes[:, 0] + N, self.modes[:, 1] + N] = np.arange(self.K)
        self._grid = grid
        for a in (self.norm2, self.norms, self.neg, self._grid):
            a.setflags(write=False)

    def __repr__(self):
        return f"Band(N={self.N}, K={self.K})"

    def index(self, k) -> int:
        """Position of ``k`` in the mode table; ``KeyError`` if outside."""
        kx, ky = int(k[0]), int(k[1])
        if abs(kx) > self.N or abs(ky) > self.N:
            raise KeyError(k)
        i = self._grid[kx + self.N, ky + self.N]
        if i < 0:
            raise KeyError(k)
        return int(i)

    def lookup(self, kx, ky):
        """Vectorised index lookup, ``-1`` where outside the band."""
        kx = np.asarray(kx)
        ky = np.asarray(ky)
        inside = (np.abs(kx) <= self.N) & (np.abs(ky) <= self.N)
        out = np.full(np.broadcast(kx, ky).shape, -1, dtype=np.int64)
        cx = np.where(inside, kx + self.N, 0)
        cy = np.where(inside, ky + self.N, 0)
        out[...] = np.where(inside, self._grid[cx, cy], -1)
        return out

    def contains(self, k) -> bool:
        return k[0] * k[0] + k[1] * k[1] <= self.N * self.N and tuple(k) != (0, 0)

    def embed_indices(self, other: "Band"):
        """Indices in ``self`` of every mode of the smaller band ``other``."""
        idx = self.lookup(other.modes[:, 0], other.modes[:, 1])
        if np.any(idx < 0):
            raise ValueError("band is not contained in this band")
        return idx

    def full_from_half(self, half):
        """Conjugate-complete canonical values ``(..., H)`` to ``(..., K)``."""
        half = np.asarray(half, dtype=np.complex128)
        return np.concatenate([half, half.conj()], axis=-1)


@lru_cache(maxsize=None)
def band(N: int) -> Band:
    return Band(N)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Real field given by its Fourier coefficients on ``band(N)``.

    ``values`` is read-only, ordered like ``band(N).modes`` and satisfies
    ``values[neg[i]] == conj(values[i])`` exactly.
    """

    N: int
    values: np.ndarray

    def __post_init__(self):
        b = band(self.N)
        v = np.array(self.values, dtype=np.complex128)
        if v.shape != (b.K,):
            raise ValueError(f"expected {b.K} coefficients for N={self.N}, got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_half(cls, N: int, half) -> "SpectralField":
        return cls(N, band(N).full_from_half(half))

    @classmethod
    def zeros(cls, N: int) -> "SpectralField":
        return cls(N, np.zeros(band(N).K, dtype=np.complex128))

    @property
    def truncation(self) -> int:
        return self.N

    @property
    def band(self) -> Band:
        return band(self.N)

    @property
    def half(self) -> np.ndarray:
        return self.values[: self.band.H]

    @property
    def coeffs(self) -> dict:
        """Nonzero coefficients keyed by :class:`WaveVector`."""
        b = self.band
        nz = np.flatnonzero(self.values)
        return {WaveVector(int(b.modes[i, 0]), int(b.modes[i, 1])): complex(self.values[i]) for i in nz}

    def __getitem__(self, k) -> complex:
        b = self.band
        if not b.contains(k):
            return 0j
        return complex(self.values[b.index(k)])

    def __eq__(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        return self.N == other.N and np.array_equal(self.values, other.values)

    def __add__(self, other):
        _same_band(self, other)
        return SpectralField(self.N, self.values + other.values)

    def __sub__(self, other):
        _same_band(self, other)
        return SpectralField(self.N, self.values - other.values)

    def __mul__(self, c):
        if isinstance(c, complex) and c.imag != 0:
            raise TypeError("only real scalars preserve the reality constraint")
        return SpectralField(self.N, self.values * float(np.real(c)))

    __rmul__ = __mul__

    def is_real(self) -> bool:
        b = self.band
        return bool(np.array_equal(self.values[b.neg], self.values.conj()))

    def to_json(self) -> str:
        return json.dumps(field_to_dict(self))

    @classmethod
    def from_json(cls, text: str) -> "SpectralField":
        return field_from_dict(json.loads(text))


def _same_band(f, g):
    if f.N != g.N:
        raise ValueError(f"fields on different bands: N={f.N} vs N={g.N}")


def make_field(entries: Iterable, N: int) -> SpectralField:
    """Build a real field from ``(k, amplitude)`` pairs, completing ``-k``.

    Entries on ``k`` and ``-k`` may both be given only if they are conjugate.
    """
    b = band(N)
    values = np.zeros(b.K, dtype=np.complex128)
    seen = np.zeros(b.K, dtype=bool)
    for k, c in entries:
        k = (int(k[0]), int(k[1]))
        _check_nonzero(k)
        if k[0] ** 2 + k[1] ** 2 > N * N:
            raise ValueError(f"wavevector {k} lies outside the band |k| <= {N}")
        c = complex(c)
        i = b.index(k)
        j = b.neg[i]
        if seen[i] and values[i] != c:
            raise ValueError(f"conflicting amplitudes for {k}")
        values[i] = c
        values[j] = c.conjugate()
        seen[i] = seen[j] = True
    return SpectralField(N, values)


def project(f: SpectralField, M: int) -> SpectralField:
    """Galerkin projection onto ``|k| <= M``."""
    if int(M) != M or M < 1:
        raise ValueError(f"projection level must be a positive integer, got {M!r}")
    M = int(M)
    if M >= f.N:
        return f
    idx = band(f.N).embed_indices(band(M))
    return SpectralField(M, f.values[idx])


def fl_norm(f: SpectralField, p: float, s: float) -> float:
    """Fourier-Lebesgue norm ``(sum |k|^{ps} |f_k|^p)^{1/p}`` (sup for p=inf)."""
    if p < 1:
        raise ValueError("p must be >= 1")
    b = f.band
    amp = np.abs(f.values)
    nz = amp > 0
    if not np.any(nz):
        return 0.0
    if math.isinf(p):
        return float(np.max(b.norms[nz] ** s * amp[nz]))
    terms = b.norms[nz] ** (p * s) * amp[nz] ** p
    return math.fsum(terms.tolist()) ** (1.0 / p)


def fl_norm_batch(values, N: int, p: float, s: float):
    """Row-wise :func:`fl_norm` for an ``(n, K)`` coefficient array."""
    b = band(N)
    amp = np.abs(np.atleast_2d(values))
    if math.isinf(p):
        return np.max(b.norms**s * amp, axis=1)
    return np.sum(b.norms ** (p * s) * amp**p, axis=1) ** (1.0 / p)


def derived_fields(f: SpectralField):
    """Return ``theta = |D| psi`` and ``u = (-d_y psi, d_x psi)``."""
    b = f.band
    theta = SpectralField(f.N, b.norms * f.values)
    u1 = SpectralField(f.N, -1j * b.modes[:, 1] * f.values)
    u2 = SpectralField(f.N, 1j * b.modes[:, 0] * f.values)
    return theta, (u1, u2)


def field_to_dict(f: SpectralField) -> dict:
    b = f.band
    half = f.half
    rows = [
        [int(b.modes[i, 0]), int(b.modes[i, 1]), float(half[i].real), float(half[i].imag)]
        for i in np.flatnonzero(half)
    ]
    return {"N": int(f.N), "coeffs": rows}


def field_from_dict(d: dict) -> SpectralField:
    entries = [((kx, ky), complex(re, im)) for kx, ky, re, im in d["coeffs"]]
    return make_field(entries, int(d["N"]))
