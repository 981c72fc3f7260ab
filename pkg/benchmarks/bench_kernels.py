"""Compiled kernels vs the numpy fallback.

Times each kernel on identical inputs with both implementations, then a
full temperature fit through the public API once per backend (the
backend is chosen at import, so each fit runs in its own interpreter).

    python3 benchmarks/bench_kernels.py [--n 5000] [--K 10] [--repeat 5] [--json out.json]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from shiftcal import _kernels_py

try:
    from shiftcal import _kernels as compiled
except ImportError:
    compiled = None

SOFTMAX, SIGMOID = 0, 1

FIT_SNIPPET = """
import time, numpy as np
from shiftcal import kernels
from shiftcal.temperature import fit_log_temperature
from shiftcal.numerics import SgdConfig
rng = np.random.default_rng(0)
z = rng.normal(size=({n}, {K})) * 2
y = np.eye({K})[rng.integers(0, {K}, {n})]
t0 = time.perf_counter()
fit_log_temperature(z, y, rng.uniform(0, 2, {n}), z.argmax(axis=1), config=SgdConfig(lr=0.5, epochs={epochs}, batch_size=128))
print(kernels.BACKEND, time.perf_counter() - t0)
"""


def inputs(n, K, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n, K)) * 2
    t = np.eye(K)[rng.integers(0, K, n)]
    factor = rng.uniform(0.5, 2.0, n)
    coord = z.argmax(axis=1).astype(np.int64)
    order = rng.permutation(n).astype(np.int64)
    zs = rng.normal(size=(n, 1)) * 2
    ts = (rng.random((n, 1)) < 0.5).astype(float)
    none = np.full(n, -1, dtype=np.int64)
    conf = rng.random(n)
    corr = (rng.random(n) < conf).astype(float)
    return {
        "temperature_loss (softmax)": lambda m: m.temperature_loss(z, t, factor, coord, 0.3, SOFTMAX),
        "temperature_loss (sigmoid)": lambda m: m.temperature_loss(zs, ts, factor, none, 0.3, SIGMOID),
        "temperature_epoch (batch 128)": lambda m: m.temperature_epoch(z, t, factor, coord, order, 0.3, 0.1, 128, SOFTMAX),
        "temperature_epoch (batch 1)": lambda m: m.temperature_epoch(z, t, factor, coord, order, 0.3, 0.1, 1, SOFTMAX),
        "bin_sums (B=15)": lambda m: m.bin_sums(conf, corr, np.arange(16) / 15),
    }


def best_of(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 10_000:
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def end_to_end(n, K, epochs):
    out = {}
    for forced in ("0", "1"):
        env = dict(os.environ, SHIFTCAL_PURE_PYTHON=forced)
        code = FIT_SNIPPET.format(n=n, K=K, epochs=epochs)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, secs = res.stdout.split()
        out[backend] = float(secs)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--K", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=200, help="epochs for the end-to-end temperature fit")
    ap.add_argument("--json", help="also write the timings here")
    args = ap.parse_args(argv)

    impls = {"python": _kernels_py}
    if compiled is not None:
        impls["cython"] = compiled
    else:
        print("compiled extension not built; timing the fallback only")

    results = {"n": args.n, "K": args.K, "kernels": {}, "fit": {}}
    print(f"n = {args.n}, K = {args.K}")
    print(f"{'kernel':<32}" + "".join(f"{name:>14}" for name in impls) + f"{'speedup':>10}")
    for name, call in inputs(args.n, args.K).items():
        row = {impl: best_of(lambda: call(m), args.repeat) for impl, m in impls.items()}
        results["kernels"][name] = row
        speed = f"{row['python'] / row['cython']:>9.1f}x" if "cython" in row else ""
        print(f"{name:<32}" + "".join(f"{row[i] * 1e3:>11.3f} ms" for i in impls) + speed)

    fit = end_to_end(args.n, args.K, args.epochs)
    results["fit"] = fit
    line = ", ".join(f"{b} {s:.2f} s" for b, s in fit.items())
    if "cython" in fit and "python" in fit:
        line += f" ({fit['python'] / fit['cython']:.1f}x)"
    print(f"temperature fit, {args.epochs} epochs: {line}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
