"""Differentiable layers with hand-written backward passes.

Every layer caches what it needs during ``forward`` and consumes the cache in
``backward``; parameter gradients are *accumulated* into ``Param.grad`` so a
caller can sum contributions from several losses before an optimizer step.
A layer must therefore be called once per backward pass: batch inputs
together instead of calling the same layer twice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .. import kernels


class ConfigError(ValueError):
    """Raised for invalid layer or model configuration."""


class ShapeError(ValueError):
    """Raised when tensor shapes violate a layer's contract."""


@dataclass
class Param:
    data: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.data)

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad[...] = 0.0


class Module:
    """Minimal container: parameters and sub-modules discovered by attribute."""

    training = True

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for name, value in vars(self).items():
            if isinstance(value, Param):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_params(prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{prefix}{name}.{i}.")

    def params(self) -> dict[str, Param]:
        return dict(self.named_params())

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def zero_grad(self):
        for p in self.params().values():
            p.zero_grad()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)


# ---------------------------------------------------------------- functional


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def dropout(x, p, training, rng):
    """Inverted dropout; returns ``(output, mask)`` where mask is None at inference."""
    if not 0.0 <= p < 1.0:
        raise ConfigError("dropout probability must lie in [0, 1)")
    if not training or p == 0.0:
        return x, None
    mask = (rng.random(np.shape(x)) >= p) / (1.0 - p)
    return x * mask, mask


def linear_forward(x, W, b):
    x, W, b = np.asarray(x), np.asarray(W), np.asarray(b)
    if x.shape[-1] != W.shape[0] or W.shape[1:] != b.shape:
        raise ShapeError(f"linear: x{x.shape} W{W.shape} b{b.shape} do not conform")
    return x @ W + b


def linear_backward(dy, x, W):
    """Gradients ``(dx, dW, db)`` of ``y = xW + b``."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ W.T, x2.T @ dy2, dy2.sum(axis=0)


def conv1d_output_length(length, k, stride, padding):
    return (length + 2 * padding - k) // stride + 1


def conv1d_forward(x, kernels_, padding=0, stride=1, bias=None):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(kernels_, dtype=np.float64)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: x{x.shape} kernels{w.shape} do not conform")
    if conv1d_output_length(x.shape[2], w.shape[2], stride, padding) < 1:
        raise ShapeError("conv1d: input shorter than the kernel")
    y = kernels.conv1d_forward(x, w, stride, padding)
    if bias is not None:
        y += np.asarray(bias)[None, :, None]
    return y


def conv1d_backward(dy, x, kernels_, padding=0, stride=1):
    """Gradients ``(dx, dkernels, dbias)``."""
    dx, dw = kernels.conv1d_backward(x, kernels_, dy, stride, padding)
    return dx, dw, dy.sum(axis=(0, 2))


# -------------------------------------------------------------------- layers


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """``y = x W + b``; ``gain`` multiplies the initial weights."""

    def __init__(self, d_in, d_out, rng, bias=True, init="he", gain=1.0):
        if init == "he":
            W = rng.normal(0.0, math.sqrt(2.0 / d_in), size=(d_in, d_out))
        elif init == "xavier":
            W = _uniform(rng, (d_in, d_out), math.sqrt(6.0 / (d_in + d_out)))
        elif init == "zeros":
            W = np.zeros((d_in, d_out))
        else:
            raise ConfigError(f"unknown init {init!r}")
        self.W = Param(W * gain)
        self.b = Param(np.zeros(d_out)) if bias else None
        self._x = None

    def forward(self, x):
        self._x = x
        b = self.b.data if self.b is not None else np.zeros(self.W.shape[1])
        return linear_forward(x, self.W.data, b)

    def backward(self, dy):
        dx, dW, db = linear_backward(dy, self._x, self.W.data)
        self.W.grad += dW
        if self.b is not None:
            self.b.grad += db
        return dx


class Conv1d(Module):
    def __init__(self, c_in, c_out, k, rng, padding=0, stride=1, bias=True, init="he"):
        if init == "he":
            w = rng.normal(0.0, math.sqrt(2.0 / (c_in * k)), size=(c_out, c_in, k))
        elif isinstance(init, tuple) and init[0] == "uniform":
            w = _uniform(rng, (c_out, c_in, k), init[1])
        else:
            raise ConfigError(f"unknown init {init!r}")
        self.w = Param(w)
        self.bias = Param(np.zeros(c_out)) if bias else None
        self.padding = padding
        self.stride = stride
        self._x = None

    def forward(self, x):
        self._x = x
        return conv1d_forward(x, self.w.data, self.padding, self.stride,
                              None if self.bias is None else self.bias.data)

    def backward(self, dy):
        dx, dw, db = conv1d_backward(dy, self._x, self.w.data, self.padding, self.stride)
        self.w.grad += dw
        if self.bias is not None:
            self.bias.grad += db
        return dx


class ReLU(Module):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class Sigmoid(Module):
    def forward(self, x):
        self._y = sigmoid(x)
        return self._y

    def backward(self, dy):
        return dy * self._y * (1.0 - self._y)


class Dropout(Module):
    def __init__(self, p, rng):
        if not 0.0 <= p < 1.0:
            raise ConfigError("dropout probability must lie in [0, 1)")
        self.p = p
        self.rng = rng
        self._mask = None

    def forward(self, x):
        y, self._mask = dropout(x, self.p, self.training, self.rng)
        return y

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class MultiHeadAttention(Module):
    """Scaled dot-product attention over ``heads`` slices plus an output projection.

    Inputs are ``[B, L, d]`` (or ``[L, d]``). ``key_mask`` of shape ``[B, L_k]``
    marks valid key positions; masked keys receive zero attention.
    """

    def __init__(self, d, heads, rng):
        if heads < 1 or d % heads:
            raise ConfigError(f"model width {d} is not divisible by {heads} heads")
        self.d, self.heads, self.dk = d, heads, d // heads
        self.q = Linear(d, d, rng, init="xavier")
        self.k = Linear(d, d, rng, init="xavier")
        self.v = Linear(d, d, rng, init="xavier")
        self.o = Linear(d, d, rng, init="xavier")
        self.attention = None

    def _split(self, x):
        B, L, _ = x.shape
        return x.reshape(B, L, self.heads, self.dk).transpose(0, 2, 1, 3)

    def _merge(self, x):
        B, H, L, dk = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, L, H * dk)

    def forward(self, q, k=None, v=None, key_mask=None):
        self._self_attn = k is None and v is None
        k = q if k is None else k
        v = q if v is None else v
        self._squeeze = q.ndim == 2
        if self._squeeze:
            q, k, v = q[None], k[None], v[None]
            key_mask = None if key_mask is None else key_mask[None]
        for t in (q, k, v):
            if t.shape[-1] != self.d:
                raise ShapeError(f"attention width {t.shape[-1]} != {self.d}")
        Q = self._split(self.q.forward(q))
        K = self._split(self.k.forward(k))
        V = self._split(self.v.forward(v))
        S = Q @ K.transpose(0, 1, 3, 2)
        S *= 1.0 / math.sqrt(self.dk)
        if key_mask is not None:
            S[~np.broadcast_to(key_mask[:, None, None, :], S.shape)] = -np.inf
        # softmax in place: the [B, H, L, L] scores dominate memory traffic
        S -= S.max(axis=-1, keepdims=True)
        np.exp(S, out=S)
        S /= S.sum(axis=-1, keepdims=True)
        A = S
        O = self._merge(A @ V)
        y = self.o.forward(O)
        self._cache = (Q, K, V, A)
        self.attention = A
        return y[0] if self._squeeze else y

    def backward(self, dy):
        Q, K, V, A = self._cache
        if self._squeeze:
            dy = dy[None]
        dO = self._split(self.o.backward(dy))
        dV = A.transpose(0, 1, 3, 2) @ dO
        dS = dO @ V.transpose(0, 1, 3, 2)
        dS -= np.einsum("bhij,bhij->bhi", dS, A)[..., None]
        dS *= A
        scale = 1.0 / math.sqrt(self.dk)
        dQ = dS @ K * scale
        dK = dS.transpose(0, 1, 3, 2) @ Q * scale
        dq = self.q.backward(self._merge(dQ))
        dk = self.k.backward(self._merge(dK))
        dv = self.v.backward(self._merge(dV))
        if self._squeeze:
            dq, dk, dv = dq[0], dk[0], dv[0]
        if self._self_attn:
            return dq + dk + dv
        return dq, dk, dv


def multi_head_attention(Q, K, V, heads, rng=None, layer=None):
    """Functional form; builds a fresh layer unless one is supplied."""
    if layer is None:
        layer = MultiHeadAttention(np.shape(Q)[-1], heads, rng or np.random.default_rng(0))
    return layer.forward(np.asarray(Q, float), np.asarray(K, float), np.asarray(V, float))


def sinusoidal_positions(L, d):
    pos = np.arange(L)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class EncoderBlock(Module):
    """Residual self-attention followed by a residual two-layer feed-forward."""

    def __init__(self, d, heads, ff, rng, dropout_p=0.0):
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ff1 = Linear(d, ff, rng)
        self.act = ReLU()
        self.ff2 = Linear(ff, d, rng, init="xavier")
        self.drop = Dropout(dropout_p, rng)

    def forward(self, x, key_mask=None):
        h = x + self.attn.forward(x, key_mask=key_mask)
        return h + self.drop.forward(self.ff2.forward(self.act.forward(self.ff1.forward(h))))

    def backward(self, dy):
        dh = dy + self.ff1.backward(self.act.backward(self.ff2.backward(self.drop.backward(dy))))
        return dh + self.attn.backward(dh)


class Encoder(Module):
    def __init__(self, d, heads, layers, ff, rng, dropout_p=0.0):
        self.blocks = [EncoderBlock(d, heads, ff, rng, dropout_p) for _ in range(layers)]

    def forward(self, x, key_mask=None):
        for b in self.blocks:
            x = b.forward(x, key_mask)
        return x

    def backward(self, dy):
        for b in reversed(self.blocks):
            dy = b.backward(dy)
        return dy
