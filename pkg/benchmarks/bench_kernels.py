#!/usr/bin/env python3
"""Compare the numba and numpy paths of the pair-convolution kernel.

Part 1 times both kernel bodies in this process on identical inputs (numba
warmed up first so compilation is excluded) and checks they agree.
Part 2 times a short ensemble simulation end to end in two subprocesses,
one with ``SQGLAB_DISABLE_NUMBA=1``.

    python benchmarks/bench_kernels.py [--N 8 16 24] [--members 64] [--repeats 5]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from sqglab import kernels
from sqglab.gaussian_measure import MeasureSampler
from sqglab.nonlinearity import pair_table

SIM_SNIPPET = """
import json, time
from sqglab import simulate, USE_NUMBA
simulate({N}, 1.0, 1e-4, 1e-4, "spde", n_paths={members}, seed=0, record_states=False, record_noise=False)
t = time.perf_counter()
simulate({N}, 1.0, 1e-4, {steps} * 1e-4, "spde", n_paths={members}, seed=0, record_states=False, record_noise=False)
print(json.dumps({{"numba": USE_NUMBA, "seconds": time.perf_counter() - t}}))
"""


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_rows(Ns, members, repeats):
    rows = []
    for N in Ns:
        tab = pair_table(N)
        v = MeasureSampler(N, 0).sample_batch(members)
        vT = np.ascontiguousarray(v.T)
        ref = tab._apply_np(v, v)
        t_np = best_of(lambda: tab._apply_np(v, v), repeats)
        if kernels.USE_NUMBA:
            args = (vT, vT, tab.out_idx, tab.i1, tab.i2, tab._coef_c, tab.n_out)
            out = kernels._pair_sum_nb(*args).T
            err = float(np.abs(out - ref).max() / np.abs(ref).max())
            t_nb = best_of(lambda: kernels._pair_sum_nb(*args), repeats)
        else:
            err, t_nb = float("nan"), float("nan")
        rows.append((N, len(tab), members, t_np, t_nb, t_np / t_nb, err))
    return rows


def simulate_rows(Ns, members, steps):
    rows = []
    for N in Ns:
        res = {}
        for disable in ("0", "1"):
            env = dict(os.environ, SQGLAB_DISABLE_NUMBA=disable)
            code = SIM_SNIPPET.format(N=N, members=members, steps=steps)
            out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
            res[disable] = json.loads(out.stdout.strip().splitlines()[-1])["seconds"]
        rows.append((N, members, steps, res["1"], res["0"], res["1"] / res["0"]))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, nargs="+", default=[8, 16, 24])
    ap.add_argument("--members", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--steps", type=int, default=50)
    args = ap.parse_args()

    print(f"pair kernel, best of {args.repeats} (numba available: {kernels.USE_NUMBA})")
    print(f"{'N':>4} {'pairs':>8} {'members':>8} {'numpy s':>10} {'numba s':>10} {'speedup':>8} {'rel err':>9}")
    for N, p, m, tn, tb, sp, err in kernel_rows(args.N, args.members, args.repeats):
        print(f"{N:>4} {p:>8} {m:>8} {tn:>10.4g} {tb:>10.4g} {sp:>8.2f} {err:>9.2g}")

    print(f"\nsimulate, {args.steps} steps, separate processes")
    print(f"{'N':>4} {'members':>8} {'steps':>6} {'numpy s':>10} {'numba s':>10} {'speedup':>8}")
    for N, m, st, tn, tb, sp in simulate_rows(args.N, args.members, args.steps):
        print(f"{N:>4} {m:>8} {st:>6} {tn:>10.4g} {tb:>10.4g} {sp:>8.2f}")


if __name__ == "__main__":
    main()
