"""Compare the numba and pure-numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Kernel timings call both backend modules directly.  The end-to-end fit
timings run in subprocesses, because the backend is chosen at import time
from NBBR_DISABLE_JIT.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from nbbr import _kernels_numba as nbk
from nbbr import _kernels_numpy as npk

FIT_SNIPPET = """
import json, time
import nbbr
from nbbr.data import salmonella_spec
spec = salmonella_spec()
nbbr.fit(spec, method="median_br")  # warm-up, includes any compilation
t = time.perf_counter()
for _ in range({n}):
    nbbr.fit(spec, method="{method}")
print(json.dumps([nbbr.BACKEND, (time.perf_counter() - t) / {n}]))
"""


def best(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases():
    rng = np.random.default_rng(0)
    means = rng.gamma(2.0, 10.0, size=200)
    y = rng.poisson(means).astype(np.int64)
    return {
        "series_expectations (200 means, kappa=0.5)": lambda k: k.series_expectations(means, 0.5, 1e-12, 100_000),
        "series_expectations (1 mean=1600, kappa=0.52)": lambda k: k.series_expectations(
            np.array([1600.0]), 0.52, 1e-12, 100_000
        ),
        "tail_probabilities (mu=40, kappa=0.1)": lambda k: k.tail_probabilities(40.0, 0.1, 1e-12, 100_000),
        "data_sums (200 counts)": lambda k: k.data_sums(y, 0.5),
    }


def fit_time(method, disable_jit, n):
    env = dict(os.environ, NBBR_DISABLE_JIT="1" if disable_jit else "0")
    out = subprocess.run(
        [sys.executable, "-c", FIT_SNIPPET.format(n=n, method=method)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(out.stdout)[1]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--fits", type=int, default=20)
    args = parser.parse_args(argv)

    print(f"{'kernel':48s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}")
    for name, call in kernel_cases().items():
        t_nb = best(lambda: call(nbk), args.repeat)
        t_np = best(lambda: call(npk), args.repeat)
        print(f"{name:48s} {1e3 * t_nb:11.3f} {1e3 * t_np:11.3f} {t_np / t_nb:8.1f}")

    print()
    print(f"{'salmonella fit':48s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}")
    for method in ("ml", "mean_br", "median_br"):
        t_nb = fit_time(method, False, args.fits)
        t_np = fit_time(method, True, args.fits)
        print(f"{method:48s} {1e3 * t_nb:11.3f} {1e3 * t_np:11.3f} {t_np / t_nb:8.1f}")


if __name__ == "__main__":
    main()
