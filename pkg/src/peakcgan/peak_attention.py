"""Slope-based peak attention with a learnable convolutional refinement.

Alignment convention (used everywhere in the package): for a signal of length
T the slope vector has T-1 entries, ``s[j] = |x[j+1] - x[j]|``. Softmax
weights over the slopes fill positions ``0..T-2`` and a single zero is
appended at position ``T-1``, so ``raw_alpha[j]`` scores the rise into sample
``j+1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.layers import ConfigError, Conv1d, Module, ShapeError, conv1d_forward, sigmoid

DEFAULT_REFINE_KERNEL = 5


@dataclass
class AttentionWeights:
    raw_alpha: np.ndarray
    refined_alpha: np.ndarray


def slopes(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ShapeError("slopes need at least two samples")
    return np.abs(np.diff(x, axis=-1))


def slope_softmax(s) -> np.ndarray:
    """Exponentially normalised slopes with a trailing zero pad (length T)."""
    s = np.asarray(s, dtype=np.float64)
    z = s - np.max(s, axis=-1, keepdims=True)
    e = np.exp(z)
    a = e / np.sum(e, axis=-1, keepdims=True)
    pad = np.zeros(a.shape[:-1] + (1,))
    return np.concatenate([a, pad], axis=-1)


def raw_alpha(x) -> np.ndarray:
    return slope_softmax(slopes(x))


def refine(raw, weight, bias=0.0) -> np.ndarray:
    """``sigmoid(conv1d(raw))`` with a single-channel, length-preserving kernel."""
    weight = np.asarray(weight, dtype=np.float64).reshape(-1)
    k = len(weight)
    if k % 2 == 0:
        raise ConfigError(f"refinement kernel size must be odd, got {k}")
    raw = np.asarray(raw, dtype=np.float64)
    x = raw.reshape(-1, 1, raw.shape[-1])
    y = conv1d_forward(x, weight.reshape(1, 1, k), padding=k // 2, bias=np.array([bias], float))
    return sigmoid(y).reshape(raw.shape)


def apply(features, refined) -> np.ndarray:
    """Scale row t of ``features`` ([..., T, d]) by ``refined[..., t]``."""
    features = np.asarray(features, dtype=np.float64)
    refined = np.asarray(refined, dtype=np.float64)
    if features.shape[:-1] != refined.shape:
        raise ShapeError(f"weights {refined.shape} do not match features {features.shape}")
    return features * refined[..., None]


class PeakAttention(Module):
    """Learnable part of the mechanism plus a backward pass through the slopes.

    ``forward`` maps a batch of profiles ``[B, T]`` to refined weights
    ``[B, T]`` in (0, 1). ``backward`` returns the gradient w.r.t. the
    profile, so the mechanism can sit inside a larger differentiable model.
    """

    def __init__(self, rng, kernel_size: int = DEFAULT_REFINE_KERNEL, init_bound: float = 0.1):
        if kernel_size % 2 == 0:
            raise ConfigError(f"refinement kernel size must be odd, got {kernel_size}")
        self.conv = Conv1d(1, 1, kernel_size, rng, padding=kernel_size // 2,
                           init=("uniform", init_bound))
        self.last = None

    def forward(self, profile):
        profile = np.asarray(profile, dtype=np.float64)
        diff = np.diff(profile, axis=-1)
        alpha = slope_softmax(np.abs(diff))
        logits = self.conv.forward(alpha[:, None, :])[:, 0, :]
        refined = sigmoid(logits)
        self._cache = (np.sign(diff), alpha, refined)
        self.last = AttentionWeights(alpha, refined)
        return refined

    def backward(self, d_refined):
        sign, alpha, refined = self._cache
        d_logits = d_refined * refined * (1.0 - refined)
        d_alpha = self.conv.backward(d_logits[:, None, :])[:, 0, :]
        a, da = alpha[:, :-1], d_alpha[:, :-1]
        d_s = a * (da - np.sum(da * a, axis=-1, keepdims=True))
        d_diff = d_s * sign
        d_profile = np.zeros(alpha.shape)
        d_profile[:, 1:] += d_diff
        d_profile[:, :-1] -= d_diff
        return d_profile
