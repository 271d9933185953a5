import csv
import io
import json

import numpy as np
import pytest

from sqglab import cli
from sqglab.experiments import (
    RUNNERS,
    ExperimentConfig,
    invariance_battery,
    invariance_z_scores,
    load_config,
    load_noise_archive,
    map_members,
    member_chunks,
    replay_archive,
    run,
)
from sqglab.presets import GeneratorPreset


def _sim_worker(members, N, seed):
    from sqglab.dynamics import simulate

    rec = simulate(N, 1.0, 1e-3, 0.01, "spde", seed=seed, members=members, record_noise=False)
    return {"x": rec.states[:, -1]}


# -- configuration --------------------------------------------------------------


def test_config_defaults_and_derived_scales():
    cfg = ExperimentConfig()
    assert cfg.s == pytest.approx(-0.05)
    assert cfg.s_psi == pytest.approx(0.95)
    assert ExperimentConfig(delta=0.25).s == pytest.approx(min(-0.05, -0.5 - 0.0375))


@pytest.mark.parametrize(
    "bad",
    [
        dict(delta=0.0),
        dict(epsilon=0.0),
        dict(epsilon=1.0),
        dict(N=0),
        dict(N=8, M=8),
        dict(dt=-1.0),
        dict(T=0.0),
        dict(ensembles=0),
        dict(p=0),
        dict(lam=-1.0),
        dict(preset="nonsense"),
        dict(seed=-1),
        dict(seed=2**64),
    ],
)
def test_config_rejects_invalid(bad):
    with pytest.raises(ValueError):
        ExperimentConfig(**bad)


def test_config_hash_stable_and_sensitive():
    a = ExperimentConfig(N=8, extras={"Ms": [4, 8]})
    b = ExperimentConfig.from_mapping(json.loads(json.dumps(a.to_dict())))
    assert a.config_hash == b.config_hash and len(a.config_hash) == 16
    assert a.config_hash != a.replace(seed=1).config_hash
    assert a.config_hash != a.replace(extras={"Ms": [4, 6]}).config_hash


def test_load_config_toml_and_json(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('delta = 1.6\nN = 16\nT = 0.1\nlambda = 0.01\n[extras]\nMs = [4, 8, 12]\n')
    cfg = load_config(p)
    assert (cfg.delta, cfg.N, cfg.T, cfg.lam, cfg.extra("Ms")) == (1.6, 16, 0.1, 0.01, [4, 8, 12])
    q = tmp_path / "c.json"
    q.write_text(json.dumps(cfg.to_dict()))
    assert load_config(q) == cfg
    bad = tmp_path / "bad.toml"
    bad.write_text("Ms = [4]\n")
    with pytest.raises(ValueError, match="unknown config keys"):
        load_config(bad)


def test_unknown_experiment():
    with pytest.raises(ValueError):
        run("nope", ExperimentConfig())


# -- reports and outputs --------------------------------------------------------

SMALL = {
    "coeff-check": dict(extras={"n_triples": 200, "deltas": [1.0], "kmax": 4, "J": 20, "beta_J": 4}),
    "sample": dict(N=4, ensembles=50),
    "simulate": dict(N=4, ensembles=4, dt=1e-3, T=0.01),
    "generator-check": dict(extras={"n_samples": 5, "pairing_Ns": [4], "identity_Ns": [4], "deltas": [1.0], "fd_samples": 2}),
    "exp-moment": dict(N=4, ensembles=100, extras={"kmax": 2, "lambdas": [0.01]}),
    "invariance": dict(N=4, ensembles=500, T=0.05, extras={"dyn_ensembles": 20, "dyn_dt": 1e-2}),
    "ito-scaling": dict(N=4, ensembles=10, dt=1e-2, extras={"Ts": [0.1, 0.2, 0.4], "k_fixed": [2, 0], "sweep_modes": [[1, 0], [2, 0]]}),
    "drift-convergence": dict(N=8, ensembles=10, dt=1e-3, T=0.01, extras={"Ms": [2, 4, 8]}),
    "holder": dict(N=4, ensembles=10, dt=1e-3, T=0.05, extras={"lags": [1, 2, 4]}),
    "uniqueness": dict(N=8, delta=1.6, ensembles=6, dt=1e-3, T=0.01, extras={"Ms": [4, 6, 8]}),
    "energy-diagnostics": dict(N=4, ensembles=10, dt=1e-2, T=0.1),
}


def test_every_runner_has_a_small_config():
    assert set(SMALL) == set(RUNNERS)


@pytest.mark.parametrize("name", sorted(SMALL))
def test_runner_writes_outputs_with_schema(name, tmp_path):
    cfg = ExperimentConfig(seed=7, **SMALL[name])
    rep = run(name, cfg)
    files = rep.write(tmp_path)
    assert (tmp_path / "report.json").exists() and (tmp_path / "noise_archive.npz").exists()
    csvs = [f for f in files if f.suffix == ".csv"]
    assert csvs
    for f in csvs:
        rows = list(csv.reader(io.StringIO(f.read_text())))
        assert rows[0][:2] == ["config_hash", "seed"]
        assert all(r[0] == cfg.config_hash and r[1] == "7" for r in rows[1:])
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["config_hash"] == cfg.config_hash and report["passed"] == rep.passed
    assert "runtime" not in json.dumps(report)
    assert load_noise_archive(tmp_path / "noise_archive.npz")["meta"]["config_hash"] == cfg.config_hash


@pytest.mark.parametrize("name", ["simulate", "drift-convergence", "invariance"])
def test_reruns_are_byte_identical(name):
    cfg = ExperimentConfig(seed=11, **SMALL[name])
    a, b = run(name, cfg), run(name, cfg)
    for t in a.tables:
        assert a.csv_text(t) == b.csv_text(t)
    assert json.dumps(a.to_json(), sort_keys=True) == json.dumps(b.to_json(), sort_keys=True)


def test_member_chunks_cover_in_order():
    ch = member_chunks(range(10), 3)
    assert [m for c in ch for m in c] == list(range(10))
    assert len(member_chunks(range(2), 8)) == 2


def test_worker_count_invariance():
    one = map_members(_sim_worker, range(6), workers=1, N=4, seed=3)
    two = map_members(_sim_worker, range(6), workers=2, N=4, seed=3)
    a = np.concatenate([r["x"] for r in one])
    b = np.concatenate([r["x"] for r in two])
    assert np.array_equal(a, b)


def test_workers_env_does_not_change_outputs(monkeypatch):
    cfg = ExperimentConfig(seed=5, **SMALL["drift-convergence"])
    monkeypatch.setenv("SQGLAB_WORKERS", "1")
    a = run("drift-convergence", cfg)
    monkeypatch.setenv("SQGLAB_WORKERS", "2")
    b = run("drift-convergence", cfg)
    assert a.csv_text("cauchy") == b.csv_text("cauchy")


# -- experiment behaviour -------------------------------------------------------


def test_battery_shape():
    bat = invariance_battery()
    assert len(bat) == 10
    degrees = sorted(max(len(m) for m in P.terms) for _, P in bat)
    assert degrees == [2] * 6 + [3] * 4


@pytest.mark.parametrize("fault", ["sign_flip", "h1_literal"])
def test_invariance_fault_injection_is_detected(fault):
    preset = GeneratorPreset.named("spde", 1.0)
    clean = invariance_z_scores(invariance_battery(), 8, preset, 10_000, 0)
    bad = invariance_z_scores(invariance_battery(), 8, preset, 10_000, 0, fault=fault)
    assert max(r[3] for r in clean) <= 3
    assert max(r[3] for r in bad) > 6


def test_invariance_runner_flags_fault():
    cfg = ExperimentConfig(N=8, ensembles=2000, extras={"fault": "sign_flip", "dynamic": False})
    rep = run("invariance", cfg)
    assert not rep.passed


def test_uniqueness_low_delta_is_exploratory():
    rep = run("uniqueness", ExperimentConfig(seed=1, **{**SMALL["uniqueness"], "delta": 0.25}))
    assert rep.exploratory and rep.checks == []
    assert rep.summary_lines()[0].startswith("[EXPLORATORY]")


def test_uniqueness_M_equals_N_vanishes():
    rep = run("uniqueness", ExperimentConfig(seed=1, **SMALL["uniqueness"]))
    chk = {c.name: c for c in rep.checks}
    assert chk["D_zero_at_M_equals_N"].passed


def test_ito_B_off_is_zero():
    cfg = ExperimentConfig(**{**SMALL["ito-scaling"], "extras": {**SMALL["ito-scaling"]["extras"], "B_on": False}})
    rep = run("ito-scaling", cfg)
    assert [c.name for c in rep.checks] == ["B_off_zero"] and rep.passed


def test_drift_M_equals_N_is_zero():
    rep = run("drift-convergence", ExperimentConfig(seed=2, **SMALL["drift-convergence"]))
    assert {c.name: c for c in rep.checks}["M_equals_N_zero"].passed


def test_drift_rejects_M_above_N():
    with pytest.raises(ValueError):
        run("drift-convergence", ExperimentConfig(N=4, extras={"Ms": [2, 8]}))


def test_energy_constant_field_has_zero_martingale():
    cfg = ExperimentConfig(N=4, ensembles=6, dt=1e-2, T=0.05, extras={"phi": [[[1, 0], 0.0]], "B_modes": ["off"]})
    rep = run("energy-diagnostics", cfg)
    inc = {c.name: c for c in rep.checks}["dynkin_increment_mean B_off"]
    assert inc.value == 0.0


# -- command line ----------------------------------------------------------------


def test_cli_exit_codes_and_replay(tmp_path, capsys):
    cfg = tmp_path / "sim.toml"
    cfg.write_text("N = 4\nensembles = 3\ndt = 0.001\nT = 0.01\n")
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--config", str(cfg), "--seed", "9", "--out", str(out)]) == 0
    rows = list(csv.reader(io.StringIO((out / "simulate_energy.csv").read_text())))
    assert rows[1][1] == "9"
    rec = replay_archive(out / "noise_archive.npz")
    arch = load_noise_archive(out / "noise_archive.npz")
    assert arch["noise"].shape[1] == 3
    from sqglab.dynamics import simulate

    fresh = simulate(4, 1.0, 1e-3, 0.01, "spde", n_paths=3, seed=9, stride=int(arch["stride"]), record_noise=False)
    np.testing.assert_array_equal(rec.states, fresh.states)
    n_lines = len((out / "trajectory.jsonl").read_text().splitlines())
    assert n_lines == 3 * len(fresh.times)
    assert cli.main(["replay", str(out / "noise_archive.npz")]) == 0

    bad = tmp_path / "bad.toml"
    bad.write_text("N = 8\nM = 9\n")
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["coeff-check", "--set", "extras.fault=1", "--set", "bogus=1", "--out", str(tmp_path / "y")]) == 2


def test_cli_failing_contract_exits_one(tmp_path):
    args = ["invariance", "--set", "N=8", "--set", "ensembles=2000", "--set", "extras.fault=\"sign_flip\"", "--set", "extras.dynamic=false", "--out", str(tmp_path)]
    assert cli.main(args + ["--quiet"]) == 1
