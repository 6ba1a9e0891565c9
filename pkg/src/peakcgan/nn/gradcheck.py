"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable

import numpy as np


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3,
                   scale: float | None = None) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor * max|a|)``.

    The floor keeps entries that are tiny compared with the rest of the tensor
    from turning round-off into a huge ratio; it is relative to the tensor's
    own gradient scale, never an absolute tolerance.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    if scale is None:
        scale = max(np.max(np.abs(a)), np.max(np.abs(n)))
    scale = max(scale, 1e-12)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(loss_fn: Callable[[], float], x: np.ndarray, eps: float = 1e-4,
                 indices=None) -> np.ndarray:
    """Central differences of ``loss_fn`` w.r.t. ``x`` (perturbed in place)."""
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(len(idx) if indices is not None else flat.size)
    for j, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + eps
        fp = loss_fn()
        flat[i] = old - eps
        fm = loss_fn()
        flat[i] = old
        out[j] = (fp - fm) / (2 * eps)
    return out


def grad_check(loss_fn: Callable[[], float], tensors: dict[str, np.ndarray],
               analytic: dict[str, np.ndarray], eps: float = 1e-4,
               max_entries: int | None = None, seed: int = 0, floor: float = 1e-3) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn`` must recompute the scalar loss from the current contents of
    ``tensors``. With ``max_entries`` only a seeded random subset of each
    tensor's entries is perturbed. The denominator floor is ``floor`` times
    the largest gradient entry over all checked tensors, so gradients that
    are exactly zero (e.g. key biases under softmax shift invariance) are
    compared on the scale of the whole check.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    scale = 0.0
    for name, x in tensors.items():
        a = np.asarray(analytic[name]).reshape(-1)
        if max_entries is not None and x.size > max_entries:
            idx = np.sort(rng.choice(x.size, size=max_entries, replace=False))
        else:
            idx = np.arange(x.size)
        num = numeric_grad(loss_fn, x, eps, list(idx))
        pairs.append((a[idx], num))
        if a.size:
            scale = max(scale, float(np.max(np.abs(a))), float(np.max(np.abs(num))))
    return max((relative_error(a, n, floor, scale) for a, n in pairs), default=0.0)


def jitter_params(params: dict, rng, scale: float = 1e-2) -> None:
    """Move parameters off exact zeros so ReLU kinks are not sampled by the check."""
    for p in params.values():
        data = getattr(p, "data", p)
        data += rng.normal(0.0, scale, size=data.shape)
