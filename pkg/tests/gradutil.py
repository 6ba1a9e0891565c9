"""Shared helpers for finite-difference tests of ReLU networks."""
import contextlib

import numpy as np

from peakcgan.nn import layers
from peakcgan.nn import grad_check, jitter_params


@contextlib.contextmanager
def relu_margin():
    """Record the smallest |pre-activation| seen by any ReLU inside the block."""
    seen = []
    orig = layers.ReLU.forward

    def forward(self, x):
        seen.append(float(np.min(np.abs(x))) if np.size(x) else np.inf)
        return orig(self, x)

    layers.ReLU.forward = forward
    try:
        yield seen
    finally:
        layers.ReLU.forward = orig


def check_model(build, loss, seed, eps=1e-6, margin=None, max_entries=6, tries=20):
    """Grad-check ``loss(model, backward)`` at a kink-free jittered parameter point.

    Central differences are only valid where the loss is differentiable. A
    perturbation of size ``eps`` moves a ReLU input by roughly ``eps`` times
    an O(1) activation, so of ``tries`` jitter draws the one whose ReLU inputs
    sit furthest from zero is used, and it must clear ``margin`` (default
    ``20 * eps``). Returns the max relative error.
    """
    margin = 20 * eps if margin is None else margin
    rng = np.random.default_rng([seed, 77])
    best, best_state = -1.0, None
    for _ in range(tries):
        model = build(seed)
        jitter_params(model.params(), rng)
        with relu_margin() as seen:
            loss(model, False)
        m = min(seen) if seen else np.inf
        if m > best:
            best, best_state = m, {k: p.data.copy() for k, p in model.params().items()}
        if m > 10 * margin:
            break
    if best < margin:
        raise AssertionError(f"no kink-free parameter point (best margin {best:.1e})")
    model = build(seed)
    for k, p in model.params().items():
        p.data[...] = best_state[k]
    model.zero_grad()
    loss(model, True)
    P = model.params()
    return grad_check(lambda: loss(model, False), {k: p.data for k, p in P.items()},
                      {k: p.grad for k, p in P.items()}, eps=eps, max_entries=max_entries, seed=seed)
