"""Experiment runners: configuration, ensemble execution, pass/fail checks and persistence.

Every runner maps an :class:`ExperimentConfig` to an :class:`ExperimentReport`.
Reports are deterministic functions of the config (the seed included); the
wall-clock runtime is stored separately so that ``report.json`` and every
CSV are byte-identical across re-runs.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _jit
from .coefficients import alpha, beta_symmetry_violations, gamma, gamma_row_sum
from .dynamics import (
    BlowUpError,
    DriftAccumulator,
    DriftDifference,
    ExponentialEuler,
    InnerSumTracker,
    PairingRecorder,
    SemigroupDriftDifference,
    _cumtrapz,
    coupled_run,
    default_dt,
    dynkin_from_pairings,
    martingale_rate,
    quadratic_variation,
    simulate,
    simulate_with_retry,
)
from .estimators import fit_scaling, holder_exponent, jackknife_moment_norm, stationarity_test
from .gaussian_measure import MeasureSampler, make_rng, summarize
from .lattice import SpectralField, band, field_to_dict, make_field
from .malliavin import (
    Polynomial,
    energy_H_mode,
    exp_moment_from_exponents,
    poly_generator_batch,
    verify_generator_identity,
)
from .nonlinearity import b_component, h1_pairing_batch, l2_pairing, state_divergence
from .presets import GeneratorPreset

EPS0 = 1.0
NOISE_ARCHIVE_CAP_MB = 64.0

_FIELDS = ("delta", "epsilon", "N", "M", "dt", "T", "ensembles", "p", "lambda", "preset", "seed")


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Run parameters. ``extras`` holds experiment-specific knobs (see README)."""

    delta: float = 1.0
    epsilon: float = 0.05
    N: int = 8
    M: int | None = None
    dt: float | None = None
    T: float = 1.0
    ensembles: int = 200
    p: int = 2
    lam: float | None = None
    preset: str = "spde"
    seed: int = 0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not 0 < self.epsilon < EPS0:
            raise ValueError(f"epsilon must lie in (0, {EPS0})")
        if int(self.N) < 1:
            raise ValueError("N must be >= 1")
        if self.M is not None and not 1 <= int(self.M) < int(self.N):
            raise ValueError("M must satisfy 1 <= M < N")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if int(self.ensembles) < 1:
            raise ValueError("ensembles must be >= 1")
        if int(self.p) < 1:
            raise ValueError("p must be >= 1")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        GeneratorPreset.named(self.preset, self.delta)
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    # derived regularity scales
    @property
    def s(self) -> float:
        d, e = self.delta, self.epsilon
        return min(-e, 2 * d - 1 - 3 * d * e)

    @property
    def s_psi(self) -> float:
        return self.s + 1.0

    @property
    def generator_preset(self) -> GeneratorPreset:
        return GeneratorPreset.named(self.preset, self.delta)

    def extra(self, name, default=None):
        return self.extras.get(name, default)

    def to_dict(self) -> dict:
        d = {
            "delta": float(self.delta),
            "epsilon": float(self.epsilon),
            "N": int(self.N),
            "M": None if self.M is None else int(self.M),
            "dt": None if self.dt is None else float(self.dt),
            "T": float(self.T),
            "ensembles": int(self.ensembles),
            "p": int(self.p),
            "lambda": None if self.lam is None else float(self.lam),
            "preset": self.preset,
            "seed": int(self.seed),
            "extras": _jsonable(self.extras),
        }
        return d

    @property
    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        extras = dict(data.pop("extras", {}) or {})
        unknown = set(data) - set(_FIELDS)
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}; put experiment knobs under [extras]")
        kw = {("lam" if k == "lambda" else k): v for k, v in data.items()}
        for key in ("N", "M", "ensembles", "p", "seed"):
            if kw.get(key) is not None:
                kw[key] = int(kw[key])
        return cls(extras=extras, **kw)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def load_config(path) -> ExperimentConfig:
    """Read a TOML or JSON config file."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".json":
        data = json.loads(raw)
    else:
        try:
            import tomllib
        except ImportError:  # Python < 3.11
            import tomli as tomllib
        data = tomllib.loads(raw.decode())
    return ExperimentConfig.from_mapping(data)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in sorted(x.items(), key=lambda kv: str(kv[0]))}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def _modes(raw, default):
    return [tuple(int(c) for c in k) for k in (default if raw is None else raw)]


# -- reports -----------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    value: float | None = None
    threshold: float | str | None = None
    detail: str = ""


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)

    def add(self, *row):
        if len(row) != len(self.columns):
            raise ValueError("row length does not match the columns")
        self.rows.append(tuple(row))


@dataclass
class ExperimentReport:
    experiment: str
    config: ExperimentConfig
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    runtime: float = 0.0
    exploratory: bool = False
    archive: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def config_hash(self) -> str:
        return self.config.config_hash

    def check(self, name, passed, value=None, threshold=None, detail=""):
        self.checks.append(Check(name, bool(passed), value, threshold, detail))

    def to_json(self) -> dict:
        return {
            "experiment": self.experiment,
            "config": self.config.to_dict(),
            "config_hash": self.config_hash,
            "seed": int(self.config.seed),
            "exploratory": self.exploratory,
            "passed": self.passed,
            "checks": [_jsonable(dataclasses.asdict(c)) for c in self.checks],
            "tables": sorted(self.tables),
            "diagnostics": _jsonable(self.diagnostics),
        }

    def csv_text(self, name: str) -> str:
        t = self.tables[name]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["config_hash", "seed", *t.columns])
        for row in t.rows:
            w.writerow([self.config_hash, int(self.config.seed), *(_cell(v) for v in row)])
        return buf.getvalue()

    def write(self, out_dir) -> list:
        """Write CSVs, ``report.json``, ``runtime.json`` and the noise archive."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name in sorted(self.tables):
            p = out / f"{self.experiment}_{name}.csv"
            p.write_text(self.csv_text(name))
            written.append(p)
        p = out / "report.json"
        p.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        written.append(p)
        p = out / "runtime.json"
        p.write_text(json.dumps({"runtime_seconds": self.runtime, "workers": _jit.workers()}, indent=2) + "\n")
        written.append(p)
        for name, text in sorted(self.artifacts.items()):
            p = out / name
            p.write_text(text)
            written.append(p)
        p = out / "noise_archive.npz"
        write_noise_archive(p, self)
        written.append(p)
        return written

    def summary_lines(self):
        tag = "EXPLORATORY" if self.exploratory else ("PASS" if self.passed else "FAIL")
        lines = [f"[{tag}] {self.experiment} config={self.config_hash} seed={self.config.seed}"]
        for c in self.checks:
            lines.append(f"  {'pass' if c.passed else 'FAIL'}  {c.name}: value={_fmt(c.value)} threshold={_fmt(c.threshold)} {c.detail}".rstrip())
        return lines


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


# -- noise archive -------------------------------------------------------------


def write_noise_archive(path, report: ExperimentReport):
    """Stream description plus stored draws when they fit under the size cap.

    Member ``i`` of any simulation in this package draws its initial field
    from ``SeedSequence(seed, spawn_key=(i, 0))`` and its noise from
    ``(i, 1)``; Monte-Carlo samplers use ``SeedSequence(seed, key)`` with
    the key listed in ``streams``. The draws are therefore replayable from
    the metadata alone; arrays are included for direct replay.
    """
    meta = {
        "experiment": report.experiment,
        "config": report.config.to_dict(),
        "config_hash": report.config_hash,
        "bit_generator": "PCG64",
        "normal_sampler": "numpy ziggurat (Generator.standard_normal)",
        "member_streams": "SeedSequence(seed, spawn_key=(member, 0)) initial; (member, 1) noise",
        "streams": _jsonable(report.archive.get("streams", {})),
    }
    arrays = {k: v for k, v in report.archive.items() if isinstance(v, np.ndarray)}
    np.savez(path, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_noise_archive(path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        out = {k: z[k] for k in z.files}
    out["meta"] = json.loads(str(out["meta"]))
    return out


def replay_archive(path):
    """Re-integrate the trajectory stored by ``sqglab simulate``."""
    data = load_noise_archive(path)
    cfg = ExperimentConfig.from_mapping(data["meta"]["config"])
    if "noise" not in data:
        raise ValueError("archive holds no noise draws (size cap exceeded); re-run from the seed")
    preset = cfg.generator_preset
    dt = float(data["dt"])
    return simulate(
        cfg.N,
        cfg.delta,
        dt,
        cfg.T,
        preset,
        n_paths=int(data["noise"].shape[1]),
        seed=cfg.seed,
        B_on=bool(cfg.extra("B_on", True)),
        initial=data["initial"],
        stride=int(data["stride"]),
        record_noise=False,
        noise=data["noise"],
        scheme=str(cfg.extra("scheme", "euler")),
    )


# -- ensemble parallelism ------------------------------------------------------


def member_chunks(members, n_chunks):
    members = list(members)
    n_chunks = max(1, min(int(n_chunks), len(members)))
    bounds = np.linspace(0, len(members), n_chunks + 1).round().astype(int)
    return [members[bounds[i] : bounds[i + 1]] for i in range(n_chunks)]


def map_members(fn, members, workers=None, **kwargs):
    """Run ``fn(chunk, **kwargs)`` over contiguous member chunks.

    With one worker the call is direct; otherwise chunks run in a process
    pool. Results come back in member order, and each member's output
    depends only on its own random streams, so merged results do not
    depend on the worker count.
    """
    members = list(members)
    w = _jit.workers() if workers is None else max(1, int(workers))
    if w == 1 or len(members) < 2:
        return [fn(members, **kwargs)]
    chunks = member_chunks(members, w)
    ctx = multiprocessing.get_context("fork") if "fork" in multiprocessing.get_all_start_methods() else None
    with ProcessPoolExecutor(max_workers=len(chunks), mp_context=ctx) as ex:
        futures = [ex.submit(fn, c, **kwargs) for c in chunks]
        return [f.result() for f in futures]


def _merge(results, key):
    return np.concatenate([r[key] for r in results], axis=0)


def _steps(T, dt):
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return n


def _dt(cfg: ExperimentConfig, preset: GeneratorPreset) -> float:
    if cfg.dt is not None:
        return float(cfg.dt)
    # largest dt = T / 2^j below the default policy, so T is a grid point
    d = default_dt(cfg.N, preset)
    j = max(0, math.ceil(math.log2(cfg.T / d)))
    return cfg.T / 2**j


# -- coeff-check ---------------------------------------------------------------


def _random_triples(rng, n, hmax):
    out = []
    while len(out) < n:
        h = rng.integers(-hmax, hmax + 1, size=(4 * n, 4))
        for a, b, c, d in h:
            if len(out) == n:
                break
            if (a, b) == (0, 0) or (c, d) == (0, 0) or (a + c, b + d) == (0, 0):
                continue
            if a * a + b * b > hmax * hmax or c * c + d * d > hmax * hmax:
                continue
            out.append(((int(a), int(b)), (int(c), int(d))))
    return out


def run_coeff_check(cfg: ExperimentConfig) -> ExperimentReport:
    t0 = time.perf_counter()
    rep = ExperimentReport("coeff-check", cfg)
    n_tri = int(cfg.extra("n_triples", 10_000))
    hmax = int(cfg.extra("hmax", 64))
    deltas = [float(d) for d in cfg.extra("deltas", [0.25, 0.5, 1.0, 1.6])]
    kmax = int(cfg.extra("kmax", 16))
    J = int(cfg.extra("J", 200))
    ratio_max = float(cfg.extra("ratio_max", 4.0))

    rng = make_rng(cfg.seed, (0,))
    sym_bad = flip_bad = neg_gamma = 0
    for h1, h2 in _random_triples(rng, n_tri, hmax):
        k = (h1[0] + h2[0], h1[1] + h2[1])
        a = alpha(h1, h2, k)
        sym_bad += a != alpha(h2, h1, k)
        flip_bad += a != alpha((-h1[0], -h1[1]), (-h2[0], -h2[1]), (-k[0], -k[1]))
        if h2 != (0, 0) and k != h1:
            neg_gamma += gamma(k, h1, deltas[0]) < 0
    rep.check("alpha_symmetry", sym_bad == 0, sym_bad, 0, f"violations over {n_tri} triples, |h| <= {hmax}")
    rep.check("alpha_sign_flip", flip_bad == 0, flip_bad, 0, f"violations over {n_tri} triples")
    rep.check("gamma_nonnegative", neg_gamma == 0, neg_gamma, 0)

    rows = Table(["kx", "ky", "delta", "J", "row_sum", "row_sum_scaled"])
    beta_rows = Table(["kx", "ky", "delta", "J", "n_violations", "n_checked", "max_abs_difference"])
    for d in deltas:
        scaled = []
        for m in range(1, kmax + 1):
            s = gamma_row_sum((m, 0), d, J)
            scaled.append(s * m ** (2 * d))
            rows.add(m, 0, d, J, s, scaled[-1])
        ratio = max(scaled) / min(scaled)
        rep.check(f"gamma_row_sum_bounded delta={d}", ratio <= ratio_max, ratio, ratio_max, "max/min of |k|^{2d} row sum over |k| = 1..%d" % kmax)
        for k in ((1, 0), (2, 1), (3, 4)):
            nb, nc, md = beta_symmetry_violations(k, d, int(cfg.extra("beta_J", 32)))
            beta_rows.add(k[0], k[1], d, int(cfg.extra("beta_J", 32)), nb, nc, md)
    rep.tables["gamma_row_sums"] = rows
    rep.tables["beta_symmetry"] = beta_rows
    rep.diagnostics["beta_symmetry_note"] = "pointwise beta(k,-j) == beta(k,j) is reported, not asserted"
    rep.archive["streams"] = {"triples": {"seed": cfg.seed, "key": [0]}}
    rep.runtime = time.perf_counter() - t0
    return rep


# -- sample ----------------------------------------------------------------------


def run_sample(cfg: ExperimentConfig) -> ExperimentReport:
    t0 = time.perf_counter()
    rep = ExperimentReport("sample", cfg)
    sampler = MeasureSampler(cfg.N, cfg.seed)
    values = sampler.sample_batch(cfg.ensembles)
    lines = [json.dumps(field_to_dict(SpectralField(cfg.N, v)), separators=(",", ":")) for v in values]
    rep.artifacts["samples.jsonl"] = "\n".join(lines) + "\n"
    b = band(cfg.N)
    t = Table(["kx", "ky", "mean_abs2", "std_error", "target"])
    for i in range(b.H):
        est = summarize(np.abs(values[:, i]) ** 2) if cfg.ensembles > 1 else None
        t.add(int(b.modes[i, 0]), int(b.modes[i, 1]), est.mean if est else float(abs(values[0, i]) ** 2), est.std_error if est else math.nan, 1.0 / b.norm2[i])
    rep.tables["mode_variance"] = t
    rep.archive["streams"] = {"sampler": {"seed": cfg.seed, "key": []}}
    rep.runtime = time.perf_counter() - t0
    return rep


# -- simulate --------------------------------------------------------------------


def run_simulate(cfg: ExperimentConfig) -> ExperimentReport:
    t0 = time.perf_counter()
    rep = ExperimentReport("simulate", cfg)
    preset = cfg.generator_preset
    dt = _dt(cfg, preset)
    n_steps = _steps(cfg.T, dt)
    stride = int(cfg.extra("stride", max(1, n_steps // 100)))
    B_on = bool(cfg.extra("B_on", True))
    scheme = str(cfg.extra("scheme", "euler"))
    b = band(cfg.N)
    cap = float(cfg.extra("noise_archive_max_mb", NOISE_ARCHIVE_CAP_MB))
    store_noise = n_steps * cfg.ensembles * b.H * 2 * 8 <= cap * 2**20
    try:
        rec = simulate_with_retry(
            N=cfg.N,
            delta=cfg.delta,
            dt=dt,
            T=cfg.T,
            preset=preset,
            n_paths=cfg.ensembles,
            seed=cfg.seed,
            B_on=B_on,
            stride=stride,
            record_noise=store_noise,
            scheme=scheme,
            max_halvings=int(cfg.extra("max_halvings", 4)),
        )
    except BlowUpError as exc:
        rep.check("finite_trajectory", False, exc.step, None, str(exc))
        rep.runtime = time.perf_counter() - t0
        return rep
    rep.check("finite_trajectory", True, None, None, f"dt={rec.dt!r}")
    l2 = rec.l2_sq
    t = Table(["t", "mean_l2_sq", "std_error", "max_l2_sq"])
    for i, tt in enumerate(rec.times):
        col = l2[:, i]
        se = col.std(ddof=1) / math.sqrt(col.size) if col.size > 1 else math.nan
        t.add(float(tt), float(col.mean()), float(se), float(col.max()))
    rep.tables["energy"] = t
    target = float(np.sum(1.0 / b.norm2))
    rep.diagnostics["stationary_mean_l2_sq"] = target
    # the slope test treats snapshots as independent; small ensembles only get the diagnostic
    if cfg.ensembles >= int(cfg.extra("min_stationarity_ensembles", 30)) and len(rec.times) > 2:
        st = stationarity_test((rec.times, np.sqrt(l2)), None)
        rep.check("energy_stationary", st.drift_z <= 3.0, st.drift_z, 3.0, "z-score of the slope of E||v||^2 in t")
    lines = []
    for m in range(len(rec.members)):
        for i, tt in enumerate(rec.times):
            lines.append(json.dumps({"member": int(rec.members[m]), "t": float(tt), "field": field_to_dict(rec.field(m, i))}, separators=(",", ":")))
    rep.artifacts["trajectory.jsonl"] = "\n".join(lines) + "\n"
    rep.archive.update(
        {
            "streams": {"members": [int(m) for m in rec.members], "seed": cfg.seed},
            "initial": rec.initial,
            "dt": np.array(rec.dt),
            "stride": np.array(stride),
        }
    )
    if rec.noise is not None:
        rep.archive["noise"] = rec.noise
    else:
        rep.diagnostics["noise_archive"] = f"draws omitted (over {cap} MB); regenerate from the member streams"
    rep.runtime = time.perf_counter() - t0
    return rep


# -- generator-check -------------------------------------------------------------


def _fd_state_divergence(v, N, k, h=1e-6):
    b = band(N)
    i = b.index(k)
    vp, vm = v.copy(), v.copy()
    vp[i] += h
    vm[i] -= h
    return (b_component(vp, N, k) - b_component(vm, N, k)) / (2 * h)


def run_generator_check(cfg: ExperimentConfig) -> ExperimentReport:
    t0 = time.perf_counter()
    rep = ExperimentReport("generator-check", cfg)
    n = int(cfg.extra("n_samples", 100))
    Ns_pair = [int(x) for x in cfg.extra("pairing_Ns", [4, 8, 16])]
    Ns_id = [int(x) for x in cfg.extra("identity_Ns", [4, 8])]
    deltas = [float(d) for d in cfg.extra("deltas", [0.25, 1.0, 1.6])]
    fd_modes = _modes(cfg.extra("fd_modes"), [(1, 0), (1, 1), (2, 1)])
    streams = {}

    pt = Table(["N", "sample", "h1_pairing", "scale", "relative", "l2_pairing"])
    dv = Table(["N", "kx", "ky", "max_abs_state_divergence", "max_abs_fd"])
    worst_rel = 0.0
    worst_div = worst_fd = 0.0
    for N in Ns_pair:
        key = (1, N)
        streams[f"pairing_N{N}"] = {"seed": cfg.seed, "key": list(key)}
        values = MeasureSampler(N, cfg.seed, key).sample_batch(n)
        pair, scale = h1_pairing_batch(values, N)
        rel = np.abs(pair) / np.where(scale > 0, scale, 1.0)
        worst_rel = max(worst_rel, float(rel.max()))
        for i in range(n):
            l2 = l2_pairing(SpectralField(N, values[i]), N)
            pt.add(N, i, float(pair[i]), float(scale[i]), float(rel[i]), l2)
        for k in fd_modes:
            if not band(N).contains(k):
                continue
            sd = max(abs(state_divergence(SpectralField(N, values[i]), k, N)) for i in range(n))
            fd = max(abs(_fd_state_divergence(values[i], N, k)) for i in range(min(n, int(cfg.extra("fd_samples", 10)))))
            worst_div, worst_fd = max(worst_div, sd), max(worst_fd, fd)
            dv.add(N, k[0], k[1], float(sd), float(fd))
    rep.check("h1_pairing_relative", worst_rel <= 1e-10, worst_rel, 1e-10)
    rep.check("state_divergence_zero", worst_div == 0.0, worst_div, 0.0)
    rep.check("state_divergence_fd", worst_fd <= 1e-6, worst_fd, 1e-6)

    it = Table(["N", "delta", "n_samples", "max_residual"])
    worst_id = 0.0
    for N in Ns_id:
        key = (2, N)
        streams[f"identity_N{N}"] = {"seed": cfg.seed, "key": list(key)}
        values = MeasureSampler(N, cfg.seed, key).sample_batch(n)
        for d in deltas:
            r = verify_generator_identity(N, d, values)
            worst_id = max(worst_id, r)
            it.add(N, d, n, r)
    rep.check("generator_identity", worst_id <= 1e-8, worst_id, 1e-8, "max |L0 H_k - B_k| / (1 + |B_k|)")
    rep.tables["pairings"] = pt
    rep.tables["state_divergence"] = dv
    rep.tables["generator_identity"] = it
    rep.archive["streams"] = streams
    rep.runtime = time.perf_counter() - t0
    return rep


# -- exp-moment ------------------------------------------------------------------


def run_exp_moment(cfg: ExperimentConfig) -> ExperimentReport:
    t0 = time.perf_counter()
    rep = ExperimentReport("exp-moment", cfg)
    N, d = cfg.N, cfg.delta
    lams = [float(x) for x in cfg.extra("lambdas", list(np.logspace(-3, -1, 5)))] if cfg.lam is None else [float(cfg.lam)]
    ks = _modes(cfg.extra("modes"), [(m, 0) for m in range(1, int(cfg.extra("kmax", 8)) + 1)])
    signs = list(cfg.extra("signs", ["+", "-"]))
    Mdiff = int(cfg.extra("M_diff", cfg.M if cfg.M is not None else N // 2))
    ratio_max = float(cfg.extra("ratio_max", 2.0))
    values = MeasureSampler(N, cfg.seed, (3,)).sample_batch(cfg.ensembles)
    energies = {}
    for k in ks:
        for sg in signs:
            energies[(k, sg, None)] = energy_H_mode(k, sg, values, d, N)
            energies[(k, sg, Mdiff)] = energy_H_mode(k, sg, values, d, N, Mdiff)
    t = Table(["kx", "ky", "sign", "delta", "N", "M", "lambda", "estimate", "stderr", "diverged", "top_share"])
    good = []
    for lam in lams:
        ests, ok = [], True
        diff_ok = True
        for k in ks:
            for sg in signs:
                for M in (None, Mdiff):
                    scale = (M if M is not None else math.hypot(*k)) ** (2 * d)
                    r = exp_moment_from_exponents(lam * scale * energies[(k, sg, M)])
                    t.add(k[0], k[1], sg, d, N, N if M is None else M, lam, r.estimate, r.std_error, r.diverged, r.top_share)
                    finite = math.isfinite(r.estimate) and not r.diverged
                    if M is None:
                        ok &= finite
                        ests.append(r.estimate)
                    else:
                        diff_ok &= finite
        ratio = max(ests) / min(ests) if ok else math.inf
        if ok and ratio < ratio_max:
            good.append((lam, ratio, diff_ok))
    rep.tables["estimates"] = t
    best = max(good) if good else None
    rep.check(
        "uniform_in_k",
        best is not None,
        None if best is None else best[1],
        ratio_max,
        "no lambda in the grid" if best is None else f"largest admissible lambda={best[0]!r}",
    )
    rep.check("difference_finite", best is not None and best[2], None if best is None else best[0], None, f"M={Mdiff}")
    rep.archive["streams"] = {"sampler": {"seed": cfg.seed, "key": [3]}}
    rep.runtime = time.perf_counter() - t0
    return rep


# -- invariance -----------------------------------------------------------------------


def invariance_battery():
    """Ten real test functions: six quadratics and four cubics."""
    m = Polynomial.mode

    def re(*ks):
        P = m(ks[0])
        for k in ks[1:]:
            P = P * m(k)
        return P.real_part()

    def im(*ks):
        P = m(ks[0])
        for k in ks[1:]:
            P = P * m(k)
        return (P * Polynomial.constant(-1j)).real_part()

    def sq(k):
        return m(k) * m((-k[0], -k[1]))

    return [
        ("|psi_(1,0)|^2", sq((1, 0))),
        ("|psi_(1,1)|^2", sq((1, 1))),
        ("|psi_(2,1)|^2", sq((2, 1))),
        ("Re psi_(1,0) psi_(0,1)", re((1, 0), (0, 1))),
        ("Re psi_(1,0) psi_(-1,1)", re((1, 0), (-1, 1))),
        ("Im psi_(2,1) psi_(-1,0)", im((2, 1), (-1, 0))),
        ("Re psi_(1,0) psi_(1,1) psi_(-2,-1)", re((1, 0), (1, 1), (-2, -1))),
        ("Re psi_(2,0) psi_(0,1) psi_(-2,-1)", re((2, 0), (0, 1), (-2, -1))),
        ("Re psi_(1,0) psi_(1,1) psi_(2,1)", re((1, 0), (1, 1), (2, 1))),
        ("Re psi_(2,1) psi_(1,-1) psi_(3,0)", re((2, 1), (1, -1), (3, 0))),
    ]


FAULTS = {"none": ("l2", -1.0), "sign_flip": ("l2", 1.0), "h1_literal": ("h1_literal", -1.0)}


def invariance_z_scores(battery, N, preset, n_samples, seed, fault="none", key=(4,)):
    """MC z-scores of ``E_rho[L_N phi]`` for each ``(label, phi)``."""
    variant, sign = FAULTS[fault]
    values = MeasureSampler(N, seed, key).sample_batch(n_samples)
    out = []
    for label, P in battery:
        x = poly_generator_batch(P, values, N, preset, nonlinear=True, variant=variant, drift_sign=sign)
        est = summarize(np.real(x))
        out.append((label, est.mean, est.std_error, est.z_score(0.0), est.n_nonfinite))
    return out


def _stationarity_worker(members, N, delta, dt, T, preset, seed, stride, modes, scheme):
    rec = simulate(N, delta, dt, T, preset, seed=seed, members=members, stride=stride, record_noise=False, scheme=scheme)
    b = band(N)
    return {"times": rec.times[None, :], "series": np.stack([rec.states[:, :, b.index(k)] for k in modes], axis=0).transpose(1, 0, 2)}


def run_invariance(cfg: ExperimentConfig) -> ExperimentReport:
    t0 = time.perf_counter()
    rep = ExperimentReport("invariance", cfg)
    preset = cfg.generator_preset
    fault = str(cfg.extra("fault", "none"))
    if fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; expected one of {sorted(FAULTS)}")
    n = int(cfg.ensembles)
    zmax = float(cfg.extra("z_max", 3.0))
    t = Table(["function", "mean", "std_error", "z", "n_nonfinite"])
    worst = 0.0
    nonfinite = 0
    for label, mean, se, z, bad in invariance_z_scores(invariance_battery(), cfg.N, preset, n, cfg.seed, fault):
        t.add(label, mean, se, z, bad)
        worst = max(worst, z)
        nonfinite += bad
    rep.tables["battery"] = t
    rep.check("battery_z", worst <= zmax and nonfinite == 0, worst, zmax, f"fault={fault}")
    streams = {"battery": {"seed": cfg.seed, "key": [4]}}

    if bool(cfg.extra("dynamic", True)):
        dyn_preset = GeneratorPreset.named(str(cfg.extra("dyn_preset", "spde")), cfg.delta)
        dyn_n = int(cfg.extra("dyn_ensembles", 200))
        dt = float(cfg.extra("dyn_dt", cfg.dt if cfg.dt is not None else 1e-3))
        n_steps = _steps(cfg.T, dt)
        stride = max(1, n_steps // int(cfg.extra("dyn_points", 100)))
        modes = _modes(cfg.extra("dyn_modes"), [(1, 0), (1, 1), (2, 1), (3, 0)])
        modes = [k for k in modes if band(cfg.N).contains(k)]
        res = map_members(
            _stationarity_worker,
            range(dyn_n),
            N=cfg.N,
            delta=cfg.delta,
            dt=dt,
            T=cfg.T,
            preset=dyn_preset,
            seed=cfg.seed,
            stride=stride,
            modes=modes,
            scheme=str(cfg.extra("scheme", "euler")),
        )
        times = res[0]["times"][0]
        series = _merge(res, "series")
        st_t = Table(["kx", "ky", "variance_drift", "drift_std_error", "drift_z", "ks_statistic", "ks_critical"])
        zd = 0.0
        for j, k in enumerate(modes):
            st = stationarity_test((times, series[:, j, :]), k)
            st_t.add(k[0], k[1], st.variance_drift, st.drift_std_error, st.drift_z, st.ks_statistic, st.ks_critical)
            zd = max(zd, st.drift_z)
        rep.tables["stationarity"] = st_t
        rep.check("dynamic_stationarity", zd <= zmax, zd, zmax, f"preset={dyn_preset.name}, ensembles={dyn_n}, T={cfg.T}")
        streams["dynamics"] = {"seed": cfg.seed, "members": dyn_n}
    rep.archive["streams"] = streams
    rep.runtime = time.perf_counter() - t0
    return rep


# -- Ito-trick scaling ----------------------------------------------------------------


def _ito_worker(members, N, delta, dt, T_max, preset, seed, B_on, ks, checkpoints, tilde_rate):
    b = band(N)
    idx = [b.index(k) for k in ks]
    G = DriftAccumulator(N, N, dt, "G", checkpoints=checkpoints)
    Gt = DriftAccumulator(N, N, dt, "G~", rate_exponent=tilde_rate, checkpoints=checkpoints)
    simulate(N, delta, dt, T_max, preset, seed=seed, members=members, B_on=B_on, record_states=False, record_noise=False, observers=[G, Gt])
    cps = sorted(checkpoints)
    return {
        "G": np.stack([G.sup_at[c][:, idx] for c in cps], axis=1),
        "Gt": np.stack([Gt.sup_at[c][:, idx] for c in cps], axis=1),
    }


def run_ito_scaling(cfg: ExperimentConfig) -> ExperimentReport:
    t0 = time.perf_counter()
    rep = ExperimentReport("ito-scaling", cfg)
    preset = cfg.generator_preset
    d = cfg.delta
    Ts = sorted(float(x) for x in cfg.extra("Ts", [0.25, 0.5, 1.0, 2.0]))
    k_fixed = tuple(int(c) for c in cfg.extra("k_fixed", (4, 0)))
    sweep = _modes(cfg.extra("sweep_modes"), [(1, 0), (2, 0), (3, 0), (4, 0), (6, 0), (8, 0)])
    T_sweep = float(cfg.extra("T_sweep", Ts[-1]))
    band_lo, band_hi = (float(x) for x in cfg.extra("slope_band", [0.4, 0.6]))
    B_on = bool(cfg.extra("B_on", True))
    ks = sorted(set(sweep) | {k_fixed}, key=lambda k: (k[0] ** 2 + k[1] ** 2, k))
    ks = [k for k in ks if band(cfg.N).contains(k)]
    if cfg.ensembles < 200:
        rep.diagnostics["warning"] = "fewer than 200 ensemble members"
    T_max = max(Ts + [T_sweep])
    dt = float(cfg.dt) if cfg.dt is not None else _dt(cfg.replace(T=T_max), preset)
    all_T = sorted(set(Ts + [T_sweep]))
    cps = [_steps(T, dt) for T in all_T]
    res = map_members(
        _ito_worker,
        range(cfg.ensembles),
        N=cfg.N,
        delta=d,
        dt=dt,
        T_max=T_max,
        preset=preset,
        seed=cfg.seed,
        B_on=B_on,
        ks=ks,
        checkpoints=cps,
        tilde_rate=2 * d,
    )
    Gs, Gts = _merge(res, "G"), _merge(res, "Gt")
    p = cfg.p
    tab = Table(["kx", "ky", "T", "norm", "std_error", "norm_tilde", "std_error_tilde", "tilde_envelope"])
    norms = {}
    for ti, T in enumerate(all_T):
        for j, k in enumerate(ks):
            g, gse = jackknife_moment_norm(Gs[:, ti, j], 2 * p)
            gt, gtse = jackknife_moment_norm(Gts[:, ti, j], 2 * p)
            lam = math.hypot(*k) ** (2 * d)
            tab.add(k[0], k[1], T, g, gse, gt, gtse, -math.expm1(-lam * T) / (2 * lam))
            norms[(k, T)] = (g, gse)
    rep.tables["norms"] = tab
    rep.diagnostics["dt"] = dt
    if not B_on:
        zero = all(v[0] == 0.0 for v in norms.values())
        rep.check("B_off_zero", zero, max(v[0] for v in norms.values()), 0.0)
    else:
        fit = fit_scaling([(T, norms[(k_fixed, T)][0]) for T in Ts])
        rep.check(f"T_slope k={k_fixed}", band_lo <= fit.slope <= band_hi, fit.slope, f"[{band_lo}, {band_hi}]", f"fit residual {fit.residual:.3g}")
        anchor = min(sweep, key=lambda k: k[0] ** 2 + k[1] ** 2)
        C = norms[(anchor, T_sweep)][0] * math.hypot(*anchor) ** d
        sw = Table(["kx", "ky", "norm", "envelope", "ratio"])
        worst = 0.0
        for k in sweep:
            if k not in ks:
                continue
            env = C * math.hypot(*k) ** (-d)
            r = norms[(k, T_sweep)][0] / env
            worst = max(worst, r)
            sw.add(k[0], k[1], norms[(k, T_sweep)][0], env, r)
        rep.tables["k_sweep"] = sw
        rep.check(f"k_sweep_below_envelope T={T_sweep}", worst <= 1.0, worst, 1.0, f"C anchored at |k|={math.hypot(*anchor):g}")
    rep.archive["streams"] = {"members": cfg.ensembles, "seed": cfg.seed}
    rep.runtime = time.perf_counter() - t0
    return rep


# -- drift convergence ---------------------------------------------------------------------


def _drift_worker(members, N, delta, dt, T, preset, seed, Ms, p):
    accs = [DriftDifference(N, M, dt) for M in Ms]
    simulate(N, delta, dt, T, preset, seed=seed, members=members, record_states=False, record_noise=False, observers=accs)
    # FL^{2p,0} over both halves of the band: the -k entries are conjugates
    return {"X": np.stack([(2.0 * np.sum(a.sup ** (2 * p), axis=1)) ** (1.0 / (2 * p)) for a in accs], axis=1)}


def run_drift_convergence(cfg: ExperimentConfig) -> ExperimentReport:
    t0 = time.perf_counter()
    rep = ExperimentReport("drift-convergence", cfg)
    preset = cfg.generator_preset
    d = cfg.delta
    Ms = sorted(int(m) for m in cfg.extra("Ms", [4, 8, 16]))
    if any(m > cfg.N for m in Ms):
        raise ValueError("every M must satisfy M <= N")
    dt = _dt(cfg, preset)
    res = map_members(_drift_worker, range(cfg.ensembles), N=cfg.N, delta=d, dt=dt, T=cfg.T, preset=preset, seed=cfg.seed, Ms=Ms, p=cfg.p)
    X = _merge(res, "X")
    t = Table(["M", "N", "norm", "std_error", "ratio_to_first", "envelope"])
    est = []
    for j, M in enumerate(Ms):
        g, se = jackknife_moment_norm(X[:, j], 2 * cfg.p)
        est.append(g)
        env = (M / Ms[0]) ** (-d / 2)
        t.add(M, cfg.N, g, se, g / est[0] if est[0] > 0 else math.nan, env)
    rep.tables["cauchy"] = t
    rep.diagnostics["dt"] = dt
    proper = [(M, g) for M, g in zip(Ms, est) if M < cfg.N]
    if any(M == cfg.N for M in Ms):
        zero = est[Ms.index(cfg.N)]
        rep.check("M_equals_N_zero", zero == 0.0, zero, 0.0)
    if len(proper) >= 2:
        dec = all(b < a for (_, a), (_, b) in zip(proper, proper[1:]))
        rep.check("strictly_decreasing", dec, None, None, ", ".join(f"M={M}:{g:.4g}" for M, g in proper))
        M0, g0 = proper[0]
        worst = max(g / (g0 * (M / M0) ** (-d / 2)) for M, g in proper[1:])
        rep.check("envelope_M^-delta/2", worst <= 1.0, worst, 1.0, f"anchored at M={M0}")
    rep.archive["streams"] = {"members": cfg.ensembles, "seed": cfg.seed}
    rep.runtime = time.perf_counter() - t0
    return rep


# -- Hölder ----------------------------------------------------------------------------------


def _holder_worker(members, N, delta, dt, T, preset, seed, modes):
    acc = DriftAccumulator(N, N, dt, "G", series_modes=modes)
    simulate(N, delta, dt, T, preset, seed=seed, members=members, record_states=False, record_noise=False, observers=[acc])
    return {"series": acc.series_array()}


def run_holder(cfg: ExperimentConfig) -> ExperimentReport:
    t0 = time.perf_counter()
    rep = ExperimentReport("holder", cfg)
    preset = cfg.generator_preset
    d = cfg.delta
    modes = _modes(cfg.extra("modes"), [(1, 0), (2, 1), (3, 0)])
    lags = [int(x) for x in cfg.extra("lags", [1, 2, 4, 8, 16, 32])]
    thr = float(cfg.extra("threshold", (1 + 2 * d) / (2 + 2 * d) - 0.1))
    dt = _dt(cfg, preset)
    res = map_members(_holder_worker, range(cfg.ensembles), N=cfg.N, delta=d, dt=dt, T=cfg.T, preset=preset, seed=cfg.seed, modes=modes)
    series = _merge(res, "series")
    t = Table(["kx", "ky", "slope", "slope_std_error", "fit_residual", "threshold"])
    inc = Table(["kx", "ky", "lag_time", "mean_abs_increment"])
    for j, k in enumerate(modes):
        fit = holder_exponent(series[:, :, j], lags, dt)
        t.add(k[0], k[1], fit.slope, fit.slope_std_error, fit.residual, thr)
        for x, y in zip(fit.abscissae, fit.ordinates):
            inc.add(k[0], k[1], x, y)
        rep.check(f"holder k={k}", fit.slope >= thr, fit.slope, thr)
    rep.tables["exponents"] = t
    rep.tables["increments"] = inc
    rep.diagnostics["dt"] = dt
    rep.archive["streams"] = {"members": cfg.ensembles, "seed": cfg.seed}
    rep.runtime = time.perf_counter() - t0
    return rep


# -- uniqueness ---------------------------------------------------------------------------------


def _uniq_worker(members, N, Ms, delta, dt, T, preset, seed, s):
    phis = [SemigroupDriftDifference(N, M, dt, preset) for M in Ms]
    _, _, diffs = coupled_run(N, Ms, delta, dt, T, preset, len(members), seed, s=s, observers_N=phis, members=members)
    return {
        "D": np.stack([diffs[M].sup_norm for M in Ms], axis=1),
        "Phi": np.stack([ph.weighted_sup(s) for ph in phis], axis=1),
    }


def _inner_worker(members, N, Ms, delta, dt, T, preset, seed, s):
    trk = [InnerSumTracker(N, M, dt, preset, s) for M in Ms]
    coupled_run(N, Ms, delta, dt, T, preset, len(members), seed, s=s, pair_observers=trk, members=members)
    return {"I": np.stack([t.statistic for t in trk], axis=1)}


def run_uniqueness(cfg: ExperimentConfig) -> ExperimentReport:
    t0 = time.perf_counter()
    d = cfg.delta
    rep = ExperimentReport("uniqueness", cfg, exploratory=d <= 1.5)
    preset = cfg.generator_preset
    Ms = sorted(int(m) for m in cfg.extra("Ms", [4, 8, 12]))
    if any(m > cfg.N for m in Ms):
        raise ValueError("every M must satisfy M <= N")
    s = float(cfg.extra("s", cfg.s_psi))
    dt = _dt(cfg, preset)
    res = map_members(_uniq_worker, range(cfg.ensembles), N=cfg.N, Ms=Ms, delta=d, dt=dt, T=cfg.T, preset=preset, seed=cfg.seed, s=s)
    D, Phi = _merge(res, "D"), _merge(res, "Phi")
    t_short = float(cfg.extra("t_short", 0.1 * cfg.N ** (-2 * d)))
    inner_steps = int(cfg.extra("inner_steps", 20))
    Ms_in = [M for M in Ms if M < cfg.N]
    I = None
    if Ms_in:
        res_i = map_members(
            _inner_worker, range(cfg.ensembles), N=cfg.N, Ms=Ms_in, delta=d, dt=t_short / inner_steps, T=t_short, preset=preset, seed=cfg.seed, s=s
        )
        I = _merge(res_i, "I")
    t = Table(["M", "N", "s", "D_norm", "D_std_error", "D_max", "Phi_proxy", "I_norm", "I_max", "t_short"])
    Dn = []
    for j, M in enumerate(Ms):
        g, se = jackknife_moment_norm(D[:, j], 2 * cfg.p)
        ph, _ = jackknife_moment_norm(Phi[:, j], 2 * cfg.p)
        if I is not None and M in Ms_in:
            ii = I[:, Ms_in.index(M)]
            i_norm, i_max = jackknife_moment_norm(ii, 2 * cfg.p)[0], float(ii.max())
        else:
            i_norm = i_max = 0.0
        Dn.append(g)
        t.add(M, cfg.N, s, g, se, float(D[:, j].max()), ph, i_norm, i_max, t_short)
    rep.tables["contraction"] = t
    rep.diagnostics.update({"dt": dt, "t_short": t_short, "s_psi": s})
    if not rep.exploratory:
        proper = [(M, g) for M, g in zip(Ms, Dn) if M < cfg.N]
        if len(proper) >= 2:
            dec = all(b < a for (_, a), (_, b) in zip(proper, proper[1:]))
            rep.check("D_strictly_decreasing", dec, None, None, ", ".join(f"M={M}:{g:.4g}" for M, g in proper))
        if cfg.N in Ms:
            rep.check("D_zero_at_M_equals_N", Dn[Ms.index(cfg.N)] == 0.0, Dn[Ms.index(cfg.N)], 0.0)
        if I is not None:
            worst = float(I.max())
            rep.check("I_below_half", worst < 0.5, worst, 0.5, f"t_short={t_short:.4g}, max over members and M")
    rep.archive["streams"] = {"members": cfg.ensembles, "seed": cfg.seed}
    rep.runtime = time.perf_counter() - t0
    return rep


# -- energy-solution diagnostics ---------------------------------------------------------------------


def _energy_worker(members, N, delta, dt, T, preset, seed, B_on, phi_values, scheme):
    phi = SpectralField(N, phi_values)
    rec = PairingRecorder(phi, preset)
    tr = simulate(N, delta, dt, T, preset, seed=seed, members=members, B_on=B_on, record_states=False, record_noise=True, observers=[rec], scheme=scheme)
    x, lin, drift = rec.arrays()
    integ = ExponentialEuler(N, dt, preset, B_on, scheme)
    z = integ.lam * dt
    # trapezoid-consistent increments of the noise martingale
    w = rec.w * (1.0 + 0.5 * z)
    dM = np.einsum("smk,k->ms", integ.noise(tr.noise), w).real
    return {"x": x, "lin": lin, "drift": drift, "dM": dM}


def _test_field(N, entries_raw):
    entries = [(tuple(int(c) for c in e[0]), complex(e[1]) if not isinstance(e[1], (list, tuple)) else complex(e[1][0], e[1][1])) for e in entries_raw]
    return make_field(entries, N)


def run_energy_diagnostics(cfg: ExperimentConfig) -> ExperimentReport:
    t0 = time.perf_counter()
    rep = ExperimentReport("energy-diagnostics", cfg)
    preset = cfg.generator_preset
    dt = float(cfg.dt) if cfg.dt is not None else 1e-3
    phi = _test_field(cfg.N, cfg.extra("phi", [[(1, 0), 1.0], [(2, 1), [0.0, 0.5]]]))
    rate = martingale_rate(phi, preset)
    scheme = str(cfg.extra("scheme", "euler"))
    levels = int(cfg.extra("mesh_levels", 3))
    modes = [str(m) for m in cfg.extra("B_modes", ["off", "on"])]
    tol = {"off": float(cfg.extra("qv_tol_off", 0.05)), "on": float(cfg.extra("qv_tol_on", 0.10))}
    qv_t = Table(["B", "qv_over_rate_T", "std_error", "analytic_rate", "increment_mean", "increment_z"])
    dq_t = Table(["B", "mesh_factor", "drift_qv", "ratio_to_finer"])
    cp_t = Table(["B", "max_residual", "bound", "scale"])
    for mode in modes:
        B_on = mode == "on"
        res = map_members(
            _energy_worker, range(cfg.ensembles), N=cfg.N, delta=cfg.delta, dt=dt, T=cfg.T, preset=preset, seed=cfg.seed, B_on=B_on, phi_values=phi.values, scheme=scheme
        )
        x, lin, drift, dM = (_merge(res, k) for k in ("x", "lin", "drift", "dM"))
        Mp, G = dynkin_from_pairings(x, lin, drift, dt)
        # (i) martingale increments
        inc = summarize(Mp[:, -1])
        z_inc = inc.z_score(0.0)
        rep.check(f"dynkin_increment_mean B_{mode}", z_inc <= 3.0, z_inc, 3.0)
        # (ii) quadratic variation rate
        qv_raw = quadratic_variation(Mp, 1)[0][1]
        if rate > 0:
            q = summarize(qv_raw / (rate * cfg.T))
            rep.check(f"qv_rate B_{mode}", abs(q.mean - 1.0) <= tol[mode], q.mean, f"1 +/- {tol[mode]}")
        else:
            # a field without nonconstant modes has no martingale part
            q = summarize(qv_raw)
            rep.check(f"qv_rate B_{mode}", q.mean == 0.0, q.mean, 0.0, "zero analytic rate")
        qv_t.add(mode, q.mean, q.std_error, rate, inc.mean, z_inc)
        # (iii) drift-path QV under partition refinement
        if B_on:
            lv = quadratic_variation(G, levels)
            means = [float(v.mean()) for _, v in lv]
            for i, (f, _) in enumerate(lv):
                dq_t.add(mode, f, means[i], means[i - 1] / means[i] if i else math.nan)
            if len(means) >= 2:
                ratios = [means[i + 1] / means[i] for i in range(len(means) - 1)]
                rep.check("drift_qv_halves", all(r >= 2.0 for r in ratios), min(ratios), 2.0, "QV(2h)/QV(h) per refinement")
        # (iv) compatibility of the drift with the Duhamel residual
        Mn = np.zeros_like(x)
        Mn[:, 1:] = np.cumsum(dM, axis=1)
        resid = G - ((x - x[:, :1]) - _cumtrapz(lin, dt) - Mn)
        r = float(np.abs(resid).max())
        scale = float(np.abs(x).max())
        bound = 10.0 * dt * dt * scale
        cp_t.add(mode, r, bound, scale)
        rep.check(f"compatibility B_{mode}", r <= bound, r, bound, f"scheme={scheme}")
    rep.tables["martingale"] = qv_t
    rep.tables["drift_qv"] = dq_t
    rep.tables["compatibility"] = cp_t
    rep.diagnostics.update({"dt": dt, "analytic_rate": rate})
    rep.archive["streams"] = {"members": cfg.ensembles, "seed": cfg.seed}
    rep.runtime = time.perf_counter() - t0
    return rep


RUNNERS = {
    "coeff-check": run_coeff_check,
    "sample": run_sample,
    "simulate": run_simulate,
    "generator-check": run_generator_check,
    "exp-moment": run_exp_moment,
    "invariance": run_invariance,
    "ito-scaling": run_ito_scaling,
    "drift-convergence": run_drift_convergence,
    "holder": run_holder,
    "uniqueness": run_uniqueness,
    "energy-diagnostics": run_energy_diagnostics,
}

run_energy_solution_diagnostics = run_energy_diagnostics


def run(name: str, cfg: ExperimentConfig) -> ExperimentReport:
    try:
        fn = RUNNERS[name]
    except KeyError:
        raise ValueError(f"unknown experiment {name!r}; expected one of {sorted(RUNNERS)}") from None
    return fn(cfg)
