"""Hot loops: sparse pair convolution over an ensemble of spectral states.

Every kernel has a numba body and a numpy body with the same contract; which
one runs is fixed at import time by :mod:`sqglab._jit`.
"""
import numpy as np
import scipy.sparse as sp

from ._jit import USE_NUMBA, njit

# rows per numpy chunk, keeps the (rows x pairs) product buffer near 64 MB
_CHUNK_BYTES = 64 * 2**20


# Ensemble arrays are passed transposed, (modes, members), so the innermost
# loop runs over members with unit stride and vectorises.


@njit(cache=True)
def _pair_sum_nb(aT, bT, out_idx, i1, i2, coef, n_out):
    n = aT.shape[1]
    out = np.zeros((n_out, n), dtype=np.complex128)
    for t in range(coef.shape[0]):
        o = out_idx[t]
        c = coef[t]
        x = i1[t]
        y = i2[t]
        for e in range(n):
            out[o, e] += c * (aT[x, e] * bT[y, e])
    return out


@njit(cache=True)
def _weighted_abs_conv_nb(xT, yT, out_idx, i1, i2, w, n_out):
    n = xT.shape[1]
    out = np.zeros((n_out, n))
    for t in range(w.shape[0]):
        o = out_idx[t]
        c = w[t]
        x = i1[t]
        y = i2[t]
        for e in range(n):
            out[o, e] += c * (xT[x, e] * yT[y, e])
    return out


class PairTable:
    """Sparse bilinear map ``out[o] = sum_t coef[t] a[i1[t]] b[i2[t]]``.

    ``out_idx`` must be sorted so the numpy path can build one CSR matrix.
    """

    def __init__(self, out_idx, i1, i2, coef, n_out):
        self.out_idx = np.ascontiguousarray(out_idx, dtype=np.int64)
        self.i1 = np.ascontiguousarray(i1, dtype=np.int64)
        self.i2 = np.ascontiguousarray(i2, dtype=np.int64)
        self.coef = np.ascontiguousarray(coef)
        self.n_out = int(n_out)
        self._coef_c = self.coef.astype(np.complex128)
        self._reduce = None

    def __len__(self):
        return self.coef.shape[0]

    @property
    def reduce_matrix(self):
        if self._reduce is None:
            p = len(self)
            self._reduce = sp.csr_matrix(
                (self.coef, (self.out_idx, np.arange(p))), shape=(self.n_out, p)
            )
        return self._reduce

    def apply(self, a, b=None):
        """Evaluate the map row-wise on ``(n, K)`` arrays (1-D accepted)."""
        squeeze = np.ndim(a) == 1
        a = np.atleast_2d(np.asarray(a, dtype=np.complex128))
        b = a if b is None else np.atleast_2d(np.asarray(b, dtype=np.complex128))
        if USE_NUMBA:
            aT = np.ascontiguousarray(a.T)
            bT = aT if b is a else np.ascontiguousarray(b.T)
            out = _pair_sum_nb(aT, bT, self.out_idx, self.i1, self.i2, self._coef_c, self.n_out).T
        else:
            out = self._apply_np(a, b)
        return out[0] if squeeze else out

    def _apply_np(self, a, b):
        n = a.shape[0]
        out = np.empty((n, self.n_out), dtype=np.complex128)
        rows = max(1, _CHUNK_BYTES // (16 * max(len(self), 1)))
        red = self.reduce_matrix
        for s in range(0, n, rows):
            prod = a[s : s + rows, self.i1] * b[s : s + rows, self.i2]
            out[s : s + rows] = (red @ prod.T).T
        return out

    def apply_abs(self, x, y):
        """Real variant for nonnegative weights and real inputs."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        w = self.coef.real.astype(np.float64)
        if USE_NUMBA:
            xT = np.ascontiguousarray(x.T)
            yT = np.ascontiguousarray(y.T)
            return _weighted_abs_conv_nb(xT, yT, self.out_idx, self.i1, self.i2, w, self.n_out).T
        red = sp.csr_matrix((w, (self.out_idx, np.arange(len(self)))), shape=(self.n_out, len(self)))
        return np.asarray((red @ (x[:, self.i1] * y[:, self.i2]).T).T)


def phi1(z):
    """(1 - e^{-z}) / z, continuous at 0."""
    z = np.asarray(z, dtype=np.float64)
    out = np.ones_like(z)
    nz = z > 0
    out[nz] = -np.expm1(-z[nz]) / z[nz]
    return out


def phi2(z):
    """(e^{-z} - 1 + z) / z^2, continuous at 0 (value 1/2)."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    small = z < 1e-3
    zs = z[small]
    out[small] = 0.5 - zs / 6.0 + zs * zs / 24.0
    zl = z[~small]
    out[~small] = (np.expm1(-zl) + zl) / (zl * zl)
    return out
