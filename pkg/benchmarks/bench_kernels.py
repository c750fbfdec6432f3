"""Compiled core versus pure-Python fallback on the three hot kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat 3] [--out bench.csv]
"""

import argparse
import csv
import sys
import time

import numpy as np

from satrack import NoiseSpec, linear_drift, logistic_drift
from satrack.kernels import HAVE_COMPILED
from satrack.simulate import SimConfig, run_ensemble, run_sa
from satrack.variational import interval_weights


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases():
    lin = linear_drift(2)
    logi = logistic_drift(2)
    noise = NoiseSpec.gaussian(1.0)
    cfg = SimConfig(a=0.05, eps=0.5, horizon_N=400, seed=1)
    tr = run_sa(logi, noise, None, cfg)
    return {
        "ensemble_linear_d2_256x400": lambda b: run_ensemble(lin, noise, None, cfg, 256, backend=b),
        "ensemble_logistic_d2_256x400": lambda b: run_ensemble(logi, noise, None, cfg, 256, backend=b),
        "weights_logistic_d2_n100_m4": lambda b: interval_weights(
            logi, tr.x[:100], tr.y[:100], cfg.a, cfg.rate, 100, 4, backend=b),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--out", default=None, help="optional CSV output")
    args = parser.parse_args(argv)
    if not HAVE_COMPILED:
        print("compiled core not built; only the fallback can be timed", file=sys.stderr)
    rows = []
    for name, fn in cases().items():
        t_py = _best(lambda: fn("python"), args.repeat)
        t_c = _best(lambda: fn("compiled"), args.repeat) if HAVE_COMPILED else float("nan")
        rows.append([name, t_py, t_c, t_py / t_c])
        print(f"{name:<32} python {t_py * 1e3:9.2f} ms  compiled {t_c * 1e3:9.2f} ms  "
              f"speedup {t_py / t_c:6.1f}x")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "python_s", "compiled_s", "speedup"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
