"""Kernel backend selection.

The compiled extension is used when it was built and ``PEAKCGAN_PURE_PYTHON``
is unset; otherwise the numpy fallback is used. Both expose the same five
functions and produce the same results up to floating-point summation order.

Convolutions always run on the numpy path: its im2col layout hands the work
to BLAS, which beats the extension's direct loops at every shape we train
(see ``benchmarks/bench_kernels.py``). The compiled loops pay off for the
sequential peak-picking kernels.
"""
from __future__ import annotations

import os

import numpy as np

from . import _npkernels as numpy_backend

try:
    if os.environ.get("PEAKCGAN_PURE_PYTHON"):
        raise ImportError("compiled kernels disabled by PEAKCGAN_PURE_PYTHON")
    from . import _ckernels as compiled_backend
except ImportError:
    compiled_backend = None

_active = compiled_backend if compiled_backend is not None else numpy_backend
BACKEND = "cython" if compiled_backend is not None else "numpy"


def use_backend(name: str) -> None:
    """Switch the active backend ("cython" or "numpy") for this process."""
    global _active, BACKEND
    if name == "cython":
        if compiled_backend is None:
            raise RuntimeError("compiled kernels are not available")
        _active = compiled_backend
    elif name == "numpy":
        _active = numpy_backend
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv1d_forward(x, w, stride, padding):
    return numpy_backend.conv1d_forward(_f64(x), _f64(w), int(stride), int(padding))


def conv1d_backward(x, w, dy, stride, padding):
    return numpy_backend.conv1d_backward(_f64(x), _f64(w), _f64(dy), int(stride), int(padding))


def local_maxima(x):
    return _active.local_maxima(_f64(x))


def peak_prominences(x, peaks):
    return _active.peak_prominences(_f64(x), np.ascontiguousarray(peaks, dtype=np.intp))


def support_bounds(x, peaks, reference):
    return _active.support_bounds(
        _f64(x), np.ascontiguousarray(peaks, dtype=np.intp), _f64(reference)
    )
