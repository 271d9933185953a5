"""Exponential-Euler integration of the truncated stochastic system and path statistics.

Per canonical mode ``k`` with rate ``lam = |k|^a`` one step reads

    v_k <- exp(-lam dt) v_k + phi1(lam dt) dt B_k(v) + eta_k,

with ``eta_k = sigma_k (xi_1 + i xi_2)``, ``xi`` standard normals and
``sigma_k^2 = |k|^{2b} (1 - exp(-2 lam dt)) / (2 lam)``; the stationary law
of the linear part is ``E|v_k|^2 = |k|^-2``.

Randomness: ensemble member ``i`` draws its initial field from
``SeedSequence(seed, spawn_key=(i, 0))`` and its noise from
``SeedSequence(seed, spawn_key=(i, 1))`` (PCG64, ziggurat normals), one
``(H, 2)`` block of standard normals per step in canonical mode order. Since
the canonical half of a smaller band is a prefix of the larger one, twin runs
share the first ``H_M`` columns of every block and nothing else.
"""
from __future__ import annotations

import logging
import math
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np

from .gaussian_measure import field_scale, make_rng
from .kernels import PairTable, phi1, phi2
from .lattice import SpectralField, band
from .nonlinearity import pair_table
from .presets import GeneratorPreset

log = logging.getLogger(__name__)

__all__ = [
    "BlowUpError",
    "GeneratorPreset",
    "ExponentialEuler",
    "NoiseSource",
    "TrajectoryRecord",
    "DriftPath",
    "MartingalePath",
    "DriftAccumulator",
    "DriftDifference",
    "PairingRecorder",
    "default_dt",
    "step",
    "simulate",
    "simulate_with_retry",
    "replay",
    "accumulate_G",
    "accumulate_G_tilde",
    "quadratic_variation",
    "dynkin_martingale",
    "martingale_rate",
    "twin_simulate",
    "coupled_run",
]


class BlowUpError(FloatingPointError):
    """Non-finite state; ``step`` is the index of the offending step."""

    def __init__(self, step: int, t: float):
        super().__init__(f"non-finite state at step {step} (t={t:.6g})")
        self.step = step
        self.t = t


def default_dt(N: int, preset: GeneratorPreset) -> float:
    """``min(0.1, 0.5 / (N^2 max_k |k|^{a-2}))``."""
    top = float(N) ** (preset.a - 2.0) if preset.a >= 2.0 else 1.0
    return min(0.1, 0.5 / (N * N * top))


def _lift(half):
    return np.concatenate([half, half.conj()], axis=-1)


SCHEMES = ("euler", "etd2")


class ExponentialEuler:
    """Precomputed per-mode factors for one ``(N, dt, preset)``.

    ``scheme="euler"`` weights the left-point drift by ``dt phi_1(z)``.
    ``scheme="etd2"`` adds a predictor-corrector stage (weights
    ``dt (phi_1 - phi_2)`` and ``dt phi_2``), so the drift quadrature
    matches the trapezoid rule to second order at twice the cost.
    """

    def __init__(self, N: int, dt: float, preset: GeneratorPreset, B_on: bool = True, scheme: str = "euler"):
        if not dt > 0:
            raise ValueError("dt must be positive")
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r} (expected one of {SCHEMES})")
        self.scheme = scheme
        self.N = int(N)
        self.dt = float(dt)
        self.preset = preset
        self.B_on = bool(B_on)
        b = band(self.N)
        lam = preset.rates(b.norms)
        z = lam * self.dt
        self.lam = lam
        self.decay = np.exp(-z)
        self.wB = phi1(z) * self.dt
        self.w1 = phi2(z) * self.dt
        self.w0 = self.wB - self.w1
        h = b.norms[: b.H]
        self.sigma = h**preset.b * np.sqrt(-np.expm1(-2.0 * z[: b.H]) / (2.0 * lam[: b.H]))

    def noise(self, xi):
        """Full-band increments from standard draws ``(..., H, 2)``."""
        return _lift(self.sigma * (xi[..., 0] + 1j * xi[..., 1]))

    def drift(self, values):
        """Canonical ``B_N`` rows, or ``None`` when the nonlinearity is off."""
        if not self.B_on:
            return None
        return pair_table(self.N).apply(values)

    def advance(self, values, xi, B_half=None):
        out = self.decay * values
        if xi is not None:
            out = out + self.noise(xi)
        if self.B_on:
            if B_half is None:
                B_half = pair_table(self.N).apply(values)
            B = _lift(B_half)
            if self.scheme == "etd2":
                B_pred = _lift(pair_table(self.N).apply(out + self.wB * B))
                return out + self.w0 * B + self.w1 * B_pred
            out = out + self.wB * B
        return out


def step(state: SpectralField, dt: float, preset: GeneratorPreset, B_on: bool, noise=None, delta=None, N=None, scheme="euler"):
    """One exponential-Euler step of a single field.

    ``noise`` holds standard normal draws of shape ``(H, 2)`` (``None``: no
    noise). ``delta`` is accepted for signature symmetry; the preset
    already carries the exponents.
    """
    N = state.N if N is None else int(N)
    if N != state.N:
        raise ValueError("state truncation and N differ")
    integ = ExponentialEuler(N, dt, preset, B_on, scheme)
    xi = None if noise is None else np.asarray(noise, dtype=np.float64)[None]
    return SpectralField(N, integ.advance(state.values[None, :], xi)[0])


class NoiseSource:
    """Per-member standard normal blocks, drawn ahead in chunks of steps."""

    def __init__(self, seed: int, members, H: int, block: int = 256):
        self.members = list(members)
        self.rngs = [make_rng(seed, (int(i), 1)) for i in self.members]
        self.H = int(H)
        self.block = int(block)
        self._buf = None
        self._pos = 0

    def next(self):
        if self._buf is None or self._pos == self._buf.shape[1]:
            self._buf = np.stack([r.standard_normal((self.block, self.H, 2)) for r in self.rngs])
            self._pos = 0
        out = self._buf[:, self._pos]
        self._pos += 1
        return out


def initial_from_rho(seed: int, members, N: int):
    """rho-distributed initial fields, one per member (stream ``(i, 0)``)."""
    b = band(N)
    sc = field_scale(N)
    rows = []
    for i in members:
        z = make_rng(seed, (int(i), 0)).standard_normal((b.H, 2))
        rows.append((z[:, 0] + 1j * z[:, 1]) * sc)
    return _lift(np.array(rows).reshape(len(rows), b.H))


def _initial(initial, seed, members, N):
    b = band(N)
    n = len(members)
    if initial is None or (isinstance(initial, str) and initial == "rho"):
        return initial_from_rho(seed, members, N)
    if isinstance(initial, str) and initial == "zero":
        return np.zeros((n, b.K), dtype=np.complex128)
    if isinstance(initial, SpectralField):
        if initial.N != N:
            raise ValueError("initial field truncation differs from N")
        return np.repeat(initial.values[None, :], n, axis=0)
    v = np.array(initial, dtype=np.complex128)
    if v.ndim == 1:
        v = np.repeat(v[None, :], n, axis=0)
    if v.shape != (n, b.K):
        raise ValueError(f"initial array must have shape ({n}, {b.K})")
    return v


@dataclass
class TrajectoryRecord:
    """Ensemble trajectory on ``band(N)``.

    ``states`` has shape ``(members, n_records, H)`` (canonical halves),
    ``noise`` has shape ``(n_steps, members, H, 2)`` of standard draws.
    """

    N: int
    delta: float
    preset: GeneratorPreset
    dt: float
    B_on: bool
    seed: int
    times: np.ndarray
    initial: np.ndarray
    states: np.ndarray | None = None
    noise: np.ndarray | None = None
    l2_sq: np.ndarray | None = None
    stride: int = 1
    members: list = field(default_factory=list)
    scheme: str = "euler"

    @property
    def n_steps(self) -> int:
        return int(round(self.times[-1] / self.dt)) if len(self.times) else 0

    def field(self, member: int, i: int) -> SpectralField:
        return SpectralField.from_half(self.N, self.states[member, i])

    def fields(self, member: int = 0):
        return [self.field(member, i) for i in range(self.states.shape[1])]

    def full(self):
        """States as full-band arrays ``(members, n_records, K)``."""
        return _lift(self.states)


@dataclass
class DriftPath:
    """Accumulated drift on ``band(M)``: ``values`` is ``(members, n_times, H_M)``."""

    M: int
    times: np.ndarray
    data: np.ndarray

    def values(self, member: int = 0):
        return [SpectralField.from_half(self.M, self.data[member, i]) for i in range(self.data.shape[1])]


@dataclass
class MartingalePath:
    times: np.ndarray
    values: np.ndarray  # (members, n_times) or (n_times,)


def _n_steps(T, dt):
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return n


def _check_finite(values, k, dt):
    if not np.all(np.isfinite(values)):
        raise BlowUpError(k, k * dt)


def simulate(
    N: int,
    delta: float,
    dt: float | None,
    T: float,
    preset: GeneratorPreset | str = "spde",
    n_paths: int = 1,
    seed: int = 0,
    B_on: bool = True,
    initial=None,
    stride: int = 1,
    record_states: bool = True,
    record_noise: bool = True,
    observers=(),
    members=None,
    noise=None,
    scheme: str = "euler",
) -> TrajectoryRecord:
    """Integrate ``n_paths`` independent members on ``[0, T]``.

    ``observers`` are called as ``obs.observe(step, t, values, B_half)`` at
    every grid point including ``t = 0``; ``B_half`` is the canonical
    ``B_N`` of ``values`` (``None`` with the nonlinearity off). ``noise``
    overrides the random stream with stored draws (replay).
    """
    if isinstance(preset, str):
        preset = GeneratorPreset.named(preset, delta)
    dt = default_dt(N, preset) if dt is None else float(dt)
    n_steps = _n_steps(T, dt)
    members = list(range(n_paths)) if members is None else list(members)
    b = band(N)
    integ = ExponentialEuler(N, dt, preset, B_on, scheme)
    v = _initial(initial, seed, members, N)
    src = None if noise is not None else NoiseSource(seed, members, b.H)
    rec_idx = list(range(0, n_steps + 1, stride))
    if rec_idx[-1] != n_steps:
        rec_idx.append(n_steps)
    times = np.array(rec_idx, dtype=np.float64) * dt
    states = np.empty((len(members), len(rec_idx), b.H), dtype=np.complex128) if record_states else None
    l2 = np.empty((len(members), len(rec_idx)))
    xi_store = np.empty((n_steps, len(members), b.H, 2)) if record_noise else None
    r = 0
    Bh = integ.drift(v)
    for k in range(n_steps + 1):
        if k == rec_idx[r]:
            if states is not None:
                states[:, r] = v[:, : b.H]
            l2[:, r] = 2.0 * np.sum(np.abs(v[:, : b.H]) ** 2, axis=1)
            r += 1
        for obs in observers:
            obs.observe(k, k * dt, v, Bh)
        if k == n_steps:
            break
        xi = noise[k] if noise is not None else src.next()
        if xi_store is not None:
            xi_store[k] = xi
        v = integ.advance(v, xi, Bh)
        _check_finite(v, k + 1, dt)
        Bh = integ.drift(v)
    return TrajectoryRecord(
        N=N,
        delta=float(delta),
        preset=preset,
        dt=dt,
        B_on=bool(B_on),
        seed=int(seed),
        times=times,
        initial=_initial(initial, seed, members, N),
        states=states,
        noise=xi_store,
        l2_sq=l2,
        stride=stride,
        members=members,
        scheme=scheme,
    )


def simulate_with_retry(observer_factory=None, max_halvings: int = 4, **kwargs) -> TrajectoryRecord:
    """:func:`simulate`, halving ``dt`` after a blow-up (logged).

    ``observer_factory()`` must return fresh observers for each attempt.
    """
    dt = kwargs.pop("dt", None)
    preset = kwargs.get("preset", "spde")
    if isinstance(preset, str):
        preset = GeneratorPreset.named(preset, kwargs["delta"])
        kwargs["preset"] = preset
    dt = default_dt(kwargs["N"], preset) if dt is None else dt
    for attempt in range(max_halvings + 1):
        obs = observer_factory() if observer_factory else ()
        try:
            rec = simulate(dt=dt, observers=obs, **kwargs)
            rec.observers = obs
            return rec
        except BlowUpError as exc:
            if attempt == max_halvings:
                raise
            log.warning("blow-up at step %d with dt=%g; retrying with dt=%g", exc.step, dt, dt / 2)
            dt /= 2
    raise AssertionError("unreachable")


def replay(rec: TrajectoryRecord) -> TrajectoryRecord:
    """Re-integrate from the stored initial data and noise draws."""
    if rec.noise is None:
        raise ValueError("record carries no noise draws")
    return simulate(
        rec.N,
        rec.delta,
        rec.dt,
        rec.times[-1],
        rec.preset,
        n_paths=len(rec.members),
        seed=rec.seed,
        B_on=rec.B_on,
        initial=rec.initial,
        stride=rec.stride,
        record_noise=False,
        members=rec.members,
        scheme=rec.scheme,
        noise=rec.noise,
    )


# -- drift accumulators --------------------------------------------------------


class DriftAccumulator:
    """Streaming ``G_M`` (trapezoid) or ``G~_M`` (exponential product-trapezoid).

    ``G~`` uses ``G~ <- e^{-r dt} G~ + w0 B(t) + w1 B(t + dt)`` with
    ``w1 = dt phi2(r dt)``, ``w0 = dt phi1(r dt) - w1``, exact for
    piecewise-linear ``B``; ``r = |k|^rate_exponent``.
    """

    def __init__(self, N, M, dt, kind="G", rate_exponent=None, series_modes=None, checkpoints=()):
        self.N, self.M, self.dt = int(N), int(M), float(dt)
        if self.M > self.N:
            raise ValueError("M must not exceed N")
        self.kind = kind
        bm = band(self.M)
        self.idx = band(self.N).embed_indices(bm) if self.M < self.N else None
        if kind == "G~":
            if rate_exponent is None:
                raise ValueError("G~ needs a rate exponent")
            z = bm.norms[: bm.H] ** rate_exponent * self.dt
            self.e = np.exp(-z)
            self.w1 = self.dt * phi2(z)
            self.w0 = self.dt * phi1(z) - self.w1
        elif kind != "G":
            raise ValueError("kind must be 'G' or 'G~'")
        self.series_modes = None if series_modes is None else [bm.index(k) for k in series_modes]
        self.series = []
        self.checkpoints = set(int(c) for c in checkpoints)
        self.sup_at = {}
        self.G = None
        self.sup = None
        self._prev = None

    def _drift(self, values, B_half):
        if B_half is None:
            return np.zeros((values.shape[0], band(self.M).H), dtype=np.complex128)
        if self.idx is None:
            return B_half
        return pair_table(self.M).apply(values[:, self.idx])

    def observe(self, k, t, values, B_half):
        Bm = self._drift(values, B_half)
        if k == 0:
            self.G = np.zeros_like(Bm)
            self.sup = np.zeros(Bm.shape)
        elif self.kind == "G":
            self.G = self.G + 0.5 * self.dt * (self._prev + Bm)
        else:
            self.G = self.e * self.G + self.w0 * self._prev + self.w1 * Bm
        self._prev = Bm
        np.maximum(self.sup, np.abs(self.G), out=self.sup)
        if self.series_modes is not None:
            self.series.append(self.G[:, self.series_modes].copy())
        if k in self.checkpoints:
            self.sup_at[k] = self.sup.copy()

    def series_array(self):
        """``(members, n_times, n_modes)`` time series of the tracked modes."""
        return np.stack(self.series, axis=1)


class DriftDifference:
    """Running ``G_N - G_M`` over all of ``band(N)`` with its sup in time."""

    def __init__(self, N, M, dt):
        self.N, self.M, self.dt = int(N), int(M), float(dt)
        self.H_M = band(self.M).H
        self.idx = band(self.N).embed_indices(band(self.M))
        self.D = None
        self.sup = None
        self._prev = None

    def observe(self, k, t, values, B_half):
        if B_half is None:
            d = np.zeros((values.shape[0], band(self.N).H), dtype=np.complex128)
        else:
            d = B_half.copy()
            if self.M < self.N:
                d[:, : self.H_M] -= pair_table(self.M).apply(values[:, self.idx])
            else:
                d[:] = 0
        if k == 0:
            self.D = np.zeros_like(d)
            self.sup = np.zeros(d.shape)
        else:
            self.D = self.D + 0.5 * self.dt * (self._prev + d)
        self._prev = d
        np.maximum(self.sup, np.abs(self.D), out=self.sup)


class PairingRecorder:
    """Per-step pairings with a real test field ``phi``.

    Records ``<psi, phi>``, ``<-|D|^a psi, phi>`` and ``<B_N(psi), phi>``
    with ``<f, g> = sum_k f_k g_{-k}``.
    """

    def __init__(self, phi: SpectralField, preset: GeneratorPreset):
        b = phi.band
        self.N = phi.N
        self.w = phi.values[b.neg]
        self.lam = preset.rates(b.norms)
        self.x, self.lin, self.drift = [], [], []

    def observe(self, k, t, values, B_half):
        self.x.append(np.sum(values * self.w, axis=1).real)
        self.lin.append(-np.sum(self.lam * values * self.w, axis=1).real)
        if B_half is None:
            self.drift.append(np.zeros(values.shape[0]))
        else:
            self.drift.append(np.sum(_lift(B_half) * self.w, axis=1).real)

    def arrays(self):
        return (np.stack(self.x, 1), np.stack(self.lin, 1), np.stack(self.drift, 1))


def _cumtrapz(y, dt):
    out = np.zeros_like(y)
    out[..., 1:] = np.cumsum(0.5 * dt * (y[..., 1:] + y[..., :-1]), axis=-1)
    return out


def dynkin_from_pairings(x, lin, drift, dt):
    """``M_t = <psi_t - psi_0, phi> - int <-|D|^a psi, phi> - <G_N(t), phi>`` and the drift path."""
    G = _cumtrapz(drift, dt)
    M = (x - x[..., :1]) - _cumtrapz(lin, dt) - G
    return M, G


# -- trajectory-level API ------------------------------------------------------


def _record_full(traj: TrajectoryRecord):
    if traj.states is None:
        raise ValueError("trajectory has no stored states")
    return _lift(traj.states)


def _record_dt(traj):
    return traj.dt * traj.stride


def accumulate_G(traj: TrajectoryRecord, M: int | None = None) -> DriftPath:
    """Trapezoid integral of ``B_M`` along the stored states (zero if the nonlinearity is off)."""
    M = traj.N if M is None else int(M)
    if M > traj.N:
        raise ValueError("M must not exceed the trajectory truncation")
    full = _record_full(traj)
    n, nt, _ = full.shape
    H = band(M).H
    if not traj.B_on:
        return DriftPath(M, traj.times.copy(), np.zeros((n, nt, H), dtype=np.complex128))
    idx = band(traj.N).embed_indices(band(M))
    B = pair_table(M).apply(full[:, :, idx].reshape(n * nt, -1)).reshape(n, nt, H)
    G = np.zeros_like(B)
    G[:, 1:] = np.cumsum(0.5 * np.diff(traj.times)[None, :, None] * (B[:, 1:] + B[:, :-1]), axis=1)
    return DriftPath(M, traj.times.copy(), G)


def accumulate_G_tilde(traj: TrajectoryRecord, M: int | None = None, delta=None, rate_exponent=None) -> DriftPath:
    """Semigroup-convolved drift ``int_0^t e^{-|k|^r (t - s)} B_M(psi_s) ds``.

    ``rate_exponent`` defaults to the trajectory preset's drift exponent.
    """
    M = traj.N if M is None else int(M)
    r = traj.preset.a if rate_exponent is None else rate_exponent
    G = accumulate_G(traj, M)
    n, nt, H = G.data.shape
    out = np.zeros_like(G.data)
    if not traj.B_on:
        return DriftPath(M, G.times, out)
    full = _record_full(traj)
    idx = band(traj.N).embed_indices(band(M))
    B = pair_table(M).apply(full[:, :, idx].reshape(n * nt, -1)).reshape(n, nt, H)
    return DriftPath(M, G.times, semigroup_convolve(B, np.diff(G.times), band(M).norms[:H] ** r))


def semigroup_convolve(B, dts, rates):
    """Product-trapezoid recursion for ``int e^{-rate (t - s)} B(s) ds`` on a grid."""
    n, nt, H = B.shape
    out = np.zeros_like(B)
    for i in range(1, nt):
        z = rates * dts[i - 1]
        w1 = dts[i - 1] * phi2(z)
        w0 = dts[i - 1] * phi1(z) - w1
        out[:, i] = np.exp(-z) * out[:, i - 1] + w0 * B[:, i - 1] + w1 * B[:, i]
    return out


def quadratic_variation(path, mesh_levels: int = 1):
    """Realised QV at the finest mesh and at ``mesh_levels - 1`` successive coarsenings.

    ``path`` is a :class:`MartingalePath` or an array whose last axis is
    time on a uniform grid. Returns a list ``[(mesh_factor, qv), ...]``
    starting at the finest mesh; ``qv`` has the leading shape of the input.
    """
    values = path.values if isinstance(path, MartingalePath) else np.asarray(path)
    out = []
    for lvl in range(int(mesh_levels)):
        f = 2**lvl
        sub = values[..., ::f]
        out.append((f, np.sum(np.diff(sub, axis=-1) ** 2, axis=-1)))
    return out


def dynkin_martingale(traj: TrajectoryRecord, phi: SpectralField, preset: GeneratorPreset | None = None) -> MartingalePath:
    """Forward martingale of the stored trajectory tested against ``phi``."""
    preset = traj.preset if preset is None else preset
    full = _record_full(traj)
    rec = PairingRecorder(phi if phi.N == traj.N else _embed(phi, traj.N), preset)
    n, nt, _ = full.shape
    for i in range(nt):
        Bh = pair_table(traj.N).apply(full[:, i]) if traj.B_on else None
        rec.observe(i, traj.times[i], full[:, i], Bh)
    M, _ = dynkin_from_pairings(*rec.arrays(), _record_dt(traj))
    return MartingalePath(traj.times.copy(), M)


def _embed(phi: SpectralField, N: int) -> SpectralField:
    if phi.N > N:
        raise ValueError("test field lies outside the trajectory band")
    v = np.zeros(band(N).K, dtype=np.complex128)
    v[band(N).embed_indices(phi.band)] = phi.values
    return SpectralField(N, v)


def martingale_rate(phi: SpectralField, preset: GeneratorPreset) -> float:
    """Analytic QV rate ``2 sum_k |k|^{2b} |phi_k|^2`` (sum over the full band)."""
    b = phi.band
    return 2.0 * math.fsum((preset.diffusion(b.norms) * np.abs(phi.values) ** 2).tolist())


# -- twin runs -----------------------------------------------------------------


@dataclass
class DifferencePath:
    """``Pi_M (psi^N - psi^M)``: ``data`` is ``(members, n_times, H_M)`` or ``None``."""

    M: int
    s: float
    times: np.ndarray
    sup_norm: np.ndarray
    data: np.ndarray | None = None


class _DiffTracker:
    def __init__(self, N, M, s, record):
        self.M, self.s = M, s
        self.H = band(M).H
        self.w = band(M).norms[: self.H] ** s
        self.sup = None
        self.record = record
        self.data = []

    def update(self, vN, vM):
        d = vN[:, : self.H] - vM[:, : self.H]
        val = np.max(self.w * np.abs(d), axis=1)
        self.sup = val if self.sup is None else np.maximum(self.sup, val)
        if self.record:
            self.data.append(d.copy())


def coupled_run(
    N: int,
    Ms,
    delta: float,
    dt: float,
    T: float,
    preset: GeneratorPreset,
    n_paths: int,
    seed: int,
    B_on: bool = True,
    initial=None,
    s: float = 0.0,
    observers_N=(),
    observers_M=None,
    record: bool = False,
    members=None,
    pair_observers=(),
    scheme: str = "euler",
):
    """Advance ``psi^N`` and ``psi^M`` for each ``M`` in ``Ms`` on common noise.

    ``pair_observers`` are called as ``obs.observe_pair(step, t, vN, vMs)``
    with ``vMs`` mapping each ``M`` to its current state.
    Returns ``(final_N, finals_M, diffs)`` where ``diffs[M]`` is a
    :class:`DifferencePath` with the sup in time of ``FL^{inf, s}``.
    """
    members = list(range(n_paths)) if members is None else list(members)
    Ms = [int(m) for m in Ms]
    if any(m > N for m in Ms):
        raise ValueError("twin truncation must satisfy M <= N")
    observers_M = observers_M or {}
    n_steps = _n_steps(T, dt)
    bN = band(N)
    vN = _initial(initial, seed, members, N)
    systems = {}
    for m in Ms:
        Hm = band(m).H
        systems[m] = [ExponentialEuler(m, dt, preset, B_on, scheme), _lift(vN[:, :Hm]), _DiffTracker(N, m, s, record)]
    integ = ExponentialEuler(N, dt, preset, B_on, scheme)
    src = NoiseSource(seed, members, bN.H)
    Bh = integ.drift(vN)
    BM = {m: systems[m][0].drift(systems[m][1]) for m in Ms}
    for k in range(n_steps + 1):
        for obs in observers_N:
            obs.observe(k, k * dt, vN, Bh)
        for m in Ms:
            systems[m][2].update(vN, systems[m][1])
            for obs in observers_M.get(m, ()):
                obs.observe(k, k * dt, systems[m][1], BM[m])
        for obs in pair_observers:
            obs.observe_pair(k, k * dt, vN, {m: systems[m][1] for m in Ms})
        if k == n_steps:
            break
        xi = src.next()
        vN = integ.advance(vN, xi, Bh)
        _check_finite(vN, k + 1, dt)
        Bh = integ.drift(vN)
        for m in Ms:
            sysm = systems[m]
            Hm = band(m).H
            sysm[1] = sysm[0].advance(sysm[1], xi[:, :Hm], BM[m])
            _check_finite(sysm[1], k + 1, dt)
            BM[m] = sysm[0].drift(sysm[1])
    times = np.arange(n_steps + 1) * dt
    diffs = {}
    for m in Ms:
        tr = systems[m][2]
        data = np.stack(tr.data, axis=1) if record else None
        diffs[m] = DifferencePath(m, s, times, tr.sup, data)
    return vN, {m: systems[m][1] for m in Ms}, diffs


def twin_simulate(N: int, M: int, delta: float, dt: float, T: float, preset="spde", n_paths=1, seed=0, B_on=True, initial=None, s=None):
    """Twin trajectories at truncations ``N`` and ``M`` on common noise.

    Returns ``(record_N, record_M, difference)``; the records hold every
    step. ``s`` defaults to ``2 delta - 3 delta eps`` with ``eps = 0.05``.
    """
    if isinstance(preset, str):
        preset = GeneratorPreset.named(preset, delta)
    if M > N:
        raise ValueError("M must not exceed N")
    s = 2 * delta - 3 * delta * 0.05 if s is None else s
    members = list(range(n_paths))
    vN0 = _initial(initial, seed, members, N)
    recN = simulate(N, delta, dt, T, preset, n_paths, seed, B_on, initial=vN0, members=members)
    HM = band(M).H
    recM = simulate(
        M,
        delta,
        dt,
        T,
        preset,
        n_paths,
        seed,
        B_on,
        initial=_lift(vN0[:, :HM]),
        members=members,
        noise=recN.noise[:, :, :HM],
    )
    recM.noise = recN.noise[:, :, :HM]
    d = recN.states[:, :, :HM] - recM.states
    w = band(M).norms[:HM] ** s
    sup = np.max(w * np.abs(d), axis=(1, 2))
    return recN, recM, DifferencePath(M, s, recN.times.copy(), sup, d)


@lru_cache(maxsize=None)
def _inner_sum_table(M: int, s: float) -> PairTable:
    """Ordered pairs ``h + g = k`` inside ``band(M)`` with weight ``|g|^{1-s}``."""
    b = band(M)
    H, K = b.H, b.K
    diff = b.modes[:H, None, :] - b.modes[None, :, :]
    i2 = b.lookup(diff[..., 0], diff[..., 1])
    out = np.broadcast_to(np.arange(H)[:, None], (H, K))
    i1 = np.broadcast_to(np.arange(K)[None, :], (H, K))
    keep = i2 >= 0
    out, i1, i2 = out[keep], i1[keep], i2[keep]
    return PairTable(out, i1, i2, b.norms[i2] ** (1.0 - s), H)


class InnerSumTracker:
    """Empirical contraction functional of a twin pair ``(psi^N, psi^M)`` on ``band(M)``.

    ``S_k = sum_{h + g = k} |h| |g|^{1-s} (|psi^N_h| + |psi^M_h|)`` is
    convolved in time with ``e^{-|k|^a (t - tau)}`` (product trapezoid),
    and ``I = sup_k |k|^s sup_t J_k`` per member.
    """

    def __init__(self, N: int, M: int, dt: float, preset: GeneratorPreset, s: float):
        self.N, self.M, self.s = int(N), int(M), float(s)
        bm = band(self.M)
        self.H = bm.H
        self.idx = band(self.N).embed_indices(bm)
        self.table = _inner_sum_table(self.M, self.s)
        self.norms = bm.norms
        z = preset.rates(bm.norms[: self.H]) * float(dt)
        self.e = np.exp(-z)
        self.w1 = float(dt) * phi2(z)
        self.w0 = float(dt) * phi1(z) - self.w1
        self.J = None
        self.sup = None
        self._prev = None

    def _S(self, vN, vM):
        x = self.norms * (np.abs(vN[:, self.idx]) + np.abs(vM))
        return self.table.apply_abs(x, np.ones_like(x))

    def observe_pair(self, k, t, vN, vMs):
        S = self._S(vN, vMs[self.M])
        if k == 0:
            self.J = np.zeros_like(S)
            self.sup = np.zeros_like(S)
        else:
            self.J = self.e * self.J + self.w0 * self._prev + self.w1 * S
        self._prev = S
        np.maximum(self.sup, self.J, out=self.sup)

    @property
    def statistic(self):
        """Per-member ``sup_k |k|^s sup_t J_k``."""
        return np.max(self.norms[: self.H] ** self.s * self.sup, axis=1)


class SemigroupDriftDifference:
    """``sup_t |int e^{-|k|^a (t - tau)} (B_N - B_M)(psi^N) dtau|`` on ``band(M)``."""

    def __init__(self, N: int, M: int, dt: float, preset: GeneratorPreset):
        self.N, self.M = int(N), int(M)
        bm = band(self.M)
        self.H = bm.H
        self.idx = band(self.N).embed_indices(bm)
        z = preset.rates(bm.norms[: self.H]) * float(dt)
        self.e = np.exp(-z)
        self.w1 = float(dt) * phi2(z)
        self.w0 = float(dt) * phi1(z) - self.w1
        self.G = None
        self.sup = None
        self._prev = None

    def observe(self, k, t, values, B_half):
        if B_half is None or self.M == self.N:
            d = np.zeros((values.shape[0], self.H), dtype=np.complex128)
        else:
            d = B_half[:, : self.H] - pair_table(self.M).apply(values[:, self.idx])
        if k == 0:
            self.G = np.zeros_like(d)
            self.sup = np.zeros(d.shape)
        else:
            self.G = self.e * self.G + self.w0 * self._prev + self.w1 * d
        self._prev = d
        np.maximum(self.sup, np.abs(self.G), out=self.sup)

    def weighted_sup(self, s: float):
        """Per-member ``sup_k |k|^s sup_t |.|``."""
        return np.max(band(self.M).norms[: self.H] ** s * self.sup, axis=1)


def fl_sup_in_time(data, M, s):
    """``sup_t ||d(t)||_{FL^{inf, s}}`` per member for ``(members, n_times, H_M)``."""
    w = band(M).norms[: band(M).H] ** s
    return np.max(w * np.abs(data), axis=(1, 2))


def ensemble_l2_energy(values):
    """``||v||_{L2}^2 = sum_k |v_k|^2`` per row of full-band arrays."""
    return np.sum(np.abs(values) ** 2, axis=-1)


__all__ += ["InnerSumTracker", "SemigroupDriftDifference", "SCHEMES", "DifferencePath", "fl_sup_in_time", "semigroup_convolve", "dynkin_from_pairings", "initial_from_rho"]
