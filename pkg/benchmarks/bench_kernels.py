"""Time the compiled and numpy kernel backends on representative shapes.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one row per (kernel, backend) with the best wall time over N runs and
the max absolute difference between backends.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from peakcgan import kernels
from peakcgan.simulator import TABLE4A_CONDITIONS, simulate_spectrum


def _conv(name):
    # convolutions are always dispatched to numpy, so time each backend module directly
    def call(*args):
        mod = kernels.compiled_backend if kernels.BACKEND == "cython" else kernels.numpy_backend
        return getattr(mod, name)(*args)
    return call


def cases(rng):
    x = rng.random((64, 16, 256))
    w = rng.normal(size=(32, 16, 5))
    dy = rng.normal(size=(64, 32, 128))
    tic = np.stack([simulate_spectrum(c, seed=i)[0].tic for i, c in enumerate(TABLE4A_CONDITIONS)])
    peaks = [kernels.local_maxima(t) for t in tic]
    return {
        "conv1d_forward [64,16,256] k5 s2": lambda: _conv("conv1d_forward")(x, w, 2, 2),
        "conv1d_backward [64,16,256] k5 s2": lambda: _conv("conv1d_backward")(x, w, dy, 2, 2),
        "local_maxima 16x512": lambda: [kernels.local_maxima(t) for t in tic],
        "peak_prominences 16x512": lambda: [kernels.peak_prominences(t, p) for t, p in zip(tic, peaks)],
        "support_bounds 16x512": lambda: [
            kernels.support_bounds(t, p, t[p] * 0.5) for t, p in zip(tic, peaks)],
    }


def _flat(out):
    if isinstance(out, (list, tuple)):
        return np.concatenate([_flat(o) for o in out]) if out else np.zeros(0)
    return np.asarray(out, dtype=np.float64).ravel()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = ["numpy"] + (["cython"] if kernels.compiled_backend is not None else [])
    if len(backends) == 1:
        print("compiled kernels not built; timing the numpy backend only")
    print(f"{'kernel':40s} {'backend':8s} {'best ms':>10s} {'speedup':>8s} {'max|diff|':>10s}")
    names = list(cases(np.random.default_rng(0)))
    for name in names:
        base_t = base_out = None
        for b in backends:
            kernels.use_backend(b)
            fn = cases(np.random.default_rng(0))[name]
            best = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            out = _flat(fn())
            if base_t is None:
                base_t, base_out = best, out
                print(f"{name:40s} {b:8s} {best * 1e3:10.3f} {'1.00':>8s} {'':>10s}")
            else:
                diff = float(np.max(np.abs(out - base_out))) if out.size else 0.0
                print(f"{name:40s} {b:8s} {best * 1e3:10.3f} {base_t / best:8.2f} {diff:10.2e}")
    kernels.use_backend(backends[-1])


if __name__ == "__main__":
    main()
