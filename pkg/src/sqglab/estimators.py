"""Ensemble statistics: moment norms of sup-in-time paths, log-log scaling fits,
Hölder exponents and stationarity tests.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dynamics import DriftPath, MartingalePath, TrajectoryRecord
from .lattice import band

MIN_MEMBERS = 30


@dataclass(frozen=True)
class EnsembleStatistic:
    """``(mean |x|^p)^{1/p}`` over ``sample_values`` with a jackknife error bar."""

    label: str
    sample_values: tuple
    p: float
    estimate: float
    std_error: float


@dataclass(frozen=True)
class ScalingFit:
    """Least squares ``log y = slope log x + intercept``; ``residual`` is the RMS misfit."""

    abscissae: tuple
    ordinates: tuple
    slope: float
    intercept: float
    residual: float
    slope_std_error: float = field(default=math.nan)

    def predict(self, x):
        return np.exp(self.intercept) * np.asarray(x, dtype=np.float64) ** self.slope


def _sup_abs(path):
    """Per-member ``sup_t |path|`` for the accepted path types."""
    if isinstance(path, MartingalePath):
        v = np.asarray(path.values)
    elif isinstance(path, DriftPath):
        v = np.asarray(path.data)
    else:
        v = np.asarray(path)
    if v.ndim == 0:
        return np.abs(v).reshape(1)
    if v.ndim == 1:
        # an ensemble of scalars
        return np.abs(v)
    return np.abs(v).reshape(v.shape[0], -1).max(axis=1)


def moment_norm(x, q: float) -> float:
    """``(mean |x|^q)^{1/q}``, scaled by the max to avoid overflow."""
    a = np.abs(np.asarray(x, dtype=np.float64))
    m = float(a.max(initial=0.0))
    if m == 0.0:
        return 0.0
    return m * float(np.mean((a / m) ** q)) ** (1.0 / q)


def jackknife_moment_norm(x, q: float):
    """Moment norm and its leave-one-out jackknife standard error."""
    a = np.abs(np.asarray(x, dtype=np.float64))
    n = a.size
    est = moment_norm(a, q)
    if n < 2 or est == 0.0:
        return est, 0.0
    m = a.max()
    w = (a / m) ** q
    loo = m * ((w.sum() - w) / (n - 1)) ** (1.0 / q)
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return est, se


def lp_sup_norm(paths, p: float = 2, label: str = "") -> EnsembleStatistic:
    """``L^{2p}`` ensemble norm of ``sup_t |path|``.

    ``paths`` is a :class:`MartingalePath`, a :class:`DriftPath`, an
    array whose leading axis is the member, or a sequence of per-member
    arrays. Fewer than 30 members triggers a warning.
    """
    if isinstance(paths, (MartingalePath, DriftPath, np.ndarray)):
        sups = _sup_abs(paths)
    else:
        sups = np.array([float(np.max(np.abs(np.asarray(x)), initial=0.0)) for x in paths])
    if sups.size < MIN_MEMBERS:
        warnings.warn(f"only {sups.size} ensemble members (< {MIN_MEMBERS}); error bars are wide", RuntimeWarning, stacklevel=2)
    est, se = jackknife_moment_norm(sups, 2 * p)
    return EnsembleStatistic(label, tuple(float(v) for v in sups), float(p), est, se)


def fit_scaling(points) -> ScalingFit:
    """Log-log least squares through ``(x, y)`` pairs (at least 3, all positive)."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise ValueError("fit_scaling needs at least 3 points")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if not (np.all(x > 0) and np.all(y > 0) and np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("fit_scaling needs finite positive abscissae and ordinates")
    lx, ly = np.log(x), np.log(y)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = ly - (slope * lx + intercept)
    n = lx.size
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    se = math.sqrt(float(res @ res) / (n - 2) / sxx) if n > 2 and sxx > 0 else math.nan
    return ScalingFit(tuple(x), tuple(y), float(slope), float(intercept), float(math.sqrt(np.mean(res**2))), se)


def holder_exponent(path, lags, dt: float | None = None) -> ScalingFit:
    """Fit ``E|G(t + l) - G(t)|`` against ``l``; the slope estimates the Hölder exponent.

    ``path`` is a :class:`DriftPath` component, :class:`MartingalePath` or
    an array with time on the last axis (leading axes are members). Lags
    are in grid steps; ``dt`` converts them to time (taken from the path
    when it carries ``times``).
    """
    if isinstance(path, (MartingalePath, DriftPath)):
        times = np.asarray(path.times)
        v = np.asarray(path.values if isinstance(path, MartingalePath) else path.data)
        if dt is None and times.size > 1:
            dt = float(times[1] - times[0])
        if isinstance(path, DriftPath):
            # (members, n_times, H) -> time last
            v = np.moveaxis(v, 1, -1)
    else:
        v = np.asarray(path)
    dt = 1.0 if dt is None else float(dt)
    n_t = v.shape[-1]
    pts = []
    for lag in lags:
        lag = int(lag)
        if not 0 < lag < n_t:
            raise ValueError(f"lag {lag} outside the path length {n_t}")
        inc = np.abs(v[..., lag:] - v[..., :-lag])
        pts.append((lag * dt, float(inc.mean())))
    return fit_scaling(pts)


@dataclass(frozen=True)
class StationarityResult:
    """Slope of ``E|psi_k(t)|^2`` in ``t`` with its standard error, and the KS check."""

    variance_drift: float
    drift_std_error: float
    ks_statistic: float
    ks_critical: float
    n_members: int

    @property
    def drift_z(self) -> float:
        if self.drift_std_error == 0:
            return 0.0 if self.variance_drift == 0 else math.inf
        return abs(self.variance_drift) / self.drift_std_error

    def __iter__(self):
        return iter((self.variance_drift, self.ks_statistic))

    def passed(self, z: float = 3.0) -> bool:
        return self.drift_z <= z and self.ks_statistic < self.ks_critical


def ks_critical(n: int, m: int | None = None, alpha: float = 0.01) -> float:
    """Asymptotic two-sample KS critical value (1.628 at the 1% level)."""
    m = n if m is None else m
    c = math.sqrt(-0.5 * math.log(alpha / 2.0))
    return c * math.sqrt((n + m) / (n * m))


def _mode_series(traj, k):
    """Member-by-time complex series of mode ``k`` from a record or an array."""
    if isinstance(traj, TrajectoryRecord):
        b = band(traj.N)
        i = b.index(tuple(k))
        times = np.asarray(traj.times)
        if i < b.H:
            return times, traj.states[:, :, i]
        return times, np.conj(traj.states[:, :, b.neg[i]])
    times, series = traj
    return np.asarray(times, dtype=np.float64), np.asarray(series)


def stationarity_test(traj_ensemble, k) -> StationarityResult:
    """Variance drift and KS statistic for mode ``k``.

    ``traj_ensemble`` is a :class:`TrajectoryRecord` or a ``(times,
    series)`` pair with ``series`` of shape ``(members, n_times)``. The
    drift is the OLS slope of ``|psi_k(t)|^2`` on ``t`` averaged over
    members, with an across-member standard error. The KS statistic
    compares the pooled real and imaginary parts at ``t = 0`` and ``t = T``.
    """
    times, z = _mode_series(traj_ensemble, k)
    n = z.shape[0]
    if n < 2 or times.size < 2:
        raise ValueError("need at least two members and two times")
    y = np.abs(z) ** 2
    tc = times - times.mean()
    slopes = (y - y.mean(axis=1, keepdims=True)) @ tc / float(tc @ tc)
    drift = float(slopes.mean())
    se = float(slopes.std(ddof=1) / math.sqrt(n))
    a = np.concatenate([z[:, 0].real, z[:, 0].imag]) if np.iscomplexobj(z) else z[:, 0]
    b = np.concatenate([z[:, -1].real, z[:, -1].imag]) if np.iscomplexobj(z) else z[:, -1]
    ks = float(stats.ks_2samp(a, b).statistic)
    return StationarityResult(drift, se, ks, ks_critical(a.size, b.size), n)


__all__ = [
    "EnsembleStatistic",
    "ScalingFit",
    "StationarityResult",
    "fit_scaling",
    "holder_exponent",
    "jackknife_moment_norm",
    "ks_critical",
    "lp_sup_norm",
    "moment_norm",
    "stationarity_test",
]
