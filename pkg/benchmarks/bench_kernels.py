"""Compare the compiled and numpy kernel backends.

Micro-benchmarks call both kernel modules directly on the same inputs. The
end-to-end benchmark runs one drift replication of DCTS in a subprocess per
backend, selecting the numpy path with ``DCTS_PURE_PYTHON=1``.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--skip-e2e]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from dcts._kernels import _purepy

try:
    from dcts._kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None

E2E = """
import time
from dcts import KERNEL_BACKEND
from dcts.envsim import env_policy_factory, preset_policy_config, run_replication, scenario_preset
cfg = scenario_preset("drift", total_steps={steps}, switch_step={steps} // 2, num_users={users})
f = env_policy_factory("dcts", preset_policy_config("drift"), cfg)
t = time.perf_counter()
run_replication(f, cfg, 0)
print(KERNEL_BACKEND, time.perf_counter() - t)
"""


def prior_case(n_users=2000, n_ads=200, c=50, m=100, K=20, seed=0):
    rng = np.random.default_rng(seed)
    succ = rng.poisson(0.5, (n_users, n_ads)).astype(np.float64)
    fail = rng.poisson(2.0, (n_users, n_ads)).astype(np.float64)
    nbrs = rng.choice(np.arange(1, n_users), m, replace=False).astype(np.int64)
    w = rng.random(m)
    cands = rng.choice(n_ads, c, replace=False).astype(np.int64)
    idx = rng.integers(0, n_ads, (c, K)).astype(np.int64)
    wts = rng.random((c, K))
    return succ, fail, 0, nbrs, w, cands, idx, wts


def posterior_case(c=50, seed=1):
    rng = np.random.default_rng(seed)
    return [rng.random(c) * 5 for _ in range(6)] + [1.0, 1.0]


def lsh_case(n=1000, d=32, bits=16, tables=8, seed=2):
    rng = np.random.default_rng(seed)
    planes = rng.standard_normal((tables, bits, d))
    vecs = rng.standard_normal((n, d))
    return planes, vecs


def best_of(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def micro(repeat):
    prior = prior_case()
    post = posterior_case()
    planes, vecs = lsh_case()
    codes = _purepy.signatures(planes, vecs)
    cases = {
        "prior_params (c=50, m=100, K=20)": lambda mod: mod.prior_params(*prior),
        "posterior_params (c=50)": lambda mod: mod.posterior_params(*post),
        "signatures (1000 x 32, 16 bits x 8)": lambda mod: mod.signatures(planes, vecs),
        "hamming (1000 x 8 codes)": lambda mod: mod.hamming(codes, codes[0]),
    }
    print(f"{'kernel':40s} {'python':>12s} {'cython':>12s} {'speedup':>8s}")
    for name, call in cases.items():
        py = best_of(lambda: call(_purepy), repeat)
        if _ckernels is None:
            print(f"{name:40s} {py * 1e6:10.1f}us {'n/a':>12s}")
            continue
        cy = best_of(lambda: call(_ckernels), repeat)
        print(f"{name:40s} {py * 1e6:10.1f}us {cy * 1e6:10.1f}us {py / cy:7.1f}x")


def end_to_end(steps, users):
    code = E2E.format(steps=steps, users=users)
    times = {}
    for flag in ("1", "0"):
        env = dict(os.environ, DCTS_PURE_PYTHON=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, check=True,
                             capture_output=True, text=True).stdout.split()
        times[out[0]] = float(out[1])
    print(f"\nDCTS drift replication ({steps} steps, {users} users, 50 ads)")
    for backend, secs in times.items():
        print(f"  {backend:8s} {secs:8.2f}s")
    if len(times) == 2:
        print(f"  speedup  {times['python'] / times['cython']:7.2f}x")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--steps", type=int, default=4000)
    parser.add_argument("--users", type=int, default=20)
    parser.add_argument("--skip-e2e", action="store_true")
    args = parser.parse_args(argv)
    micro(args.repeat)
    if not args.skip_e2e:
        end_to_end(args.steps, args.users)


if __name__ == "__main__":
    main()
