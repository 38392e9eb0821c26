"""Numba kernels versus their pure-numpy twins.

Part 1 times each kernel in-process (both implementations are importable
regardless of the env flag).  Part 2 runs a short MLE-UCB episode in two
subprocesses, one with MNL_UCB_DISABLE_NUMBA=1, and compares wall time and
the resulting regret (which must be identical up to rounding).

    python3 benchmarks/bench_kernels.py [--quick]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from mnl_ucb.kernels import jit_impl, numpy_impl


def best_of(fn, repeat):
    fn()  # warm-up (and compilation for the jit path)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def loglik_case(rng, n, kmax, d):
    feats = rng.normal(size=(n, kmax, d))
    sizes = rng.integers(1, kmax + 1, size=n)
    chosen = np.array([rng.integers(-1, k) for k in sizes])
    theta = rng.normal(size=d) * 0.3
    return lambda impl: impl.loglik_terms(theta, feats, sizes, chosen, True)


def greedy_case(rng, n, k, d, omega, scale):
    u = rng.uniform(0.1, 0.55, n)
    r = rng.uniform(0.5, 0.8, n)
    x = rng.normal(size=(n, d)) * scale
    start = np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)
    return lambda impl: impl.greedy_swap(u, r, x, k, omega, start, 1e-12, 10 * n**4)


def brute_case(rng, n, k, d, omega):
    u = rng.uniform(0.1, 2.0, n)
    r = rng.uniform(0.0, 1.0, n)
    x = rng.normal(size=(n, d))
    return lambda impl: impl.brute_force(u, r, x, k, omega)


EPISODE_SNIPPET = """
import json, sys, time
from mnl_ucb.kernels import BACKEND
from mnl_ucb.sim import InstanceConfig, PolicySpec, run_episode
cfg = InstanceConfig(N={N}, K=5, d=5, T={T})
run_episode(InstanceConfig(N=10, K=3, d=5, T=40), PolicySpec().build(InstanceConfig(N=10, K=3, d=5, T=40)), 0)
t = time.perf_counter()
tr = run_episode(cfg, PolicySpec().build(cfg), 1)
print(json.dumps({{"backend": BACKEND, "seconds": time.perf_counter() - t, "regret": float(tr.cumulative[-1])}}))
"""


def episode(disable, N, T):
    env = dict(os.environ)
    env.pop("MNL_UCB_DISABLE_NUMBA", None)
    if disable:
        env["MNL_UCB_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", EPISODE_SNIPPET.format(N=N, T=T)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="smaller cases and a shorter episode")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    repeat = 3 if args.quick else 7
    cases = [
        ("loglik n=1000 K=5 d=5", loglik_case(rng, 1000, 5, 5)),
        ("loglik n=5000 K=5 d=15", loglik_case(rng, 5000, 5, 15)),
        ("greedy N=100 K=5 d=5 omega=0", greedy_case(rng, 100, 5, 5, 0.0, 0.1)),
        ("greedy N=100 K=5 d=5 omega=7", greedy_case(rng, 100, 5, 5, 7.0, 0.05)),
        ("greedy N=400 K=5 d=5 omega=7", greedy_case(rng, 400, 5, 5, 7.0, 0.05)),
        ("brute N=12 K=4 d=2 omega=1", brute_case(rng, 12, 4, 2, 1.0)),
    ]
    print(f"{'kernel':34s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, case in cases:
        tj = best_of(lambda: case(jit_impl), repeat)
        tn = best_of(lambda: case(numpy_impl), repeat)
        print(f"{name:34s} {tj * 1e3:10.3f} {tn * 1e3:10.3f} {tn / tj:8.1f}")

    N, T = (50, 300) if args.quick else (100, 1000)
    print(f"\nMLE-UCB episode N={N} K=5 d=5 T={T}")
    for disable in (False, True):
        res = episode(disable, N, T)
        print(f"  {res['backend']:6s} {res['seconds']:8.2f} s   cumulative regret {res['regret']:.9g}")


if __name__ == "__main__":
    main()
