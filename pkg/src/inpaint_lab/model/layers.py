"""Building blocks for the video denoiser, built on nd autodiff tensors."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeError
from ..nd import tensor as T
from ..nd.tensor import Tensor


class Layer:
    """Minimal parameter container; params are discovered by attribute walk."""

    def named_params(self, prefix=""):
        out = {}
        for name, val in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(val, Tensor):
                out[key] = val
            elif isinstance(val, Layer):
                out.update(val.named_params(f"{key}."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Layer):
                        out.update(item.named_params(f"{key}.{i}."))
                    elif isinstance(item, Tensor):
                        out[f"{key}.{i}"] = item
            elif isinstance(val, dict):
                for k, item in val.items():
                    if isinstance(item, Layer):
                        out.update(item.named_params(f"{key}.{k}."))
                    elif isinstance(item, Tensor):
                        out[f"{key}.{k}"] = item
        return out


def _param(rng, shape, fan_in, dtype, scale=1.0):
    std = scale * math.sqrt(2.0 / max(fan_in, 1))
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


class Linear(Layer):
    def __init__(self, rng, d_in, d_out, dtype=np.float32, zero_init=False):
        if zero_init:
            self.w = _zeros((d_out, d_in), dtype)
        else:
            self.w = _param(rng, (d_out, d_in), d_in, dtype)
        self.b = _zeros((d_out,), dtype)

    def __call__(self, x):
        return T.matmul(x, T.transpose(self.w)) + self.b


class Conv2d(Layer):
    def __init__(self, rng, c_in, c_out, k=3, stride=1, dtype=np.float32, zero_init=False):
        fan = c_in * k * k
        if zero_init:
            self.w = _zeros((c_out, c_in, k, k), dtype)
        else:
            self.w = _param(rng, (c_out, c_in, k, k), fan, dtype)
        self.b = _zeros((c_out,), dtype)
        self._stride = stride
        self._pad = k // 2

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, stride=self._stride, pad=self._pad)


class GroupNorm(Layer):
    def __init__(self, channels, groups=4, dtype=np.float32, eps=1e-5):
        if channels % groups:
            groups = 1
        self.gamma = _ones((channels,), dtype)
        self.beta = _zeros((channels,), dtype)
        self._groups = groups
        self._eps = eps

    def __call__(self, x):
        n, c, h, w = x.shape
        g = self._groups
        r = T.reshape(x, (n, g, (c // g) * h * w))
        mu = T.tmean(r, axis=2, keepdims=True)
        xc = r - mu
        var = T.tmean(xc * xc, axis=2, keepdims=True)
        y = xc * T.power(var + self._eps, -0.5)
        y = T.reshape(y, (n, c, h, w))
        gamma = T.reshape(self.gamma, (1, c, 1, 1))
        beta = T.reshape(self.beta, (1, c, 1, 1))
        return y * gamma + beta


class MLP(Layer):
    def __init__(self, rng, d_in, d_hidden, d_out, dtype=np.float32):
        self.fc1 = Linear(rng, d_in, d_hidden, dtype)
        self.fc2 = Linear(rng, d_hidden, d_out, dtype)

    def __call__(self, x):
        return self.fc2(T.silu(self.fc1(x)))


# -- attention cores ---------------------------------------------------

def _split_heads(x, head_dim):
    """(..., S, C) -> (..., heads, S, head_dim)"""
    *lead, s, c = x.shape
    if c % head_dim:
        raise ShapeError(f"head_dim {head_dim} does not divide width {c}")
    heads = c // head_dim
    x = T.reshape(x, (*lead, s, heads, head_dim))
    return T.swapaxes(x, -3, -2)


def _merge_heads(x):
    """(..., heads, S, head_dim) -> (..., S, C)"""
    x = T.swapaxes(x, -3, -2)
    *lead, s, heads, d = x.shape
    return T.reshape(x, (*lead, s, heads * d))


def scaled_attention(q, k, v, head_dim):
    """softmax(Q K^T / sqrt(d)) V over the trailing sequence axes."""
    qh = _split_heads(q, head_dim) * (1.0 / math.sqrt(head_dim))
    kh = _split_heads(k, head_dim)
    vh = _split_heads(v, head_dim)
    logits = T.matmul(qh, T.swapaxes(kh, -1, -2))
    w = T.softmax(logits, axis=-1)
    return _merge_heads(T.matmul(w, vh))


def modulated_cross_attention(q, k, v, head_dim, s=None, lam=0.0):
    """softmax((Q K^T + lam*S) / sqrt(d)) V; S broadcasts over heads.

    S entries may be -inf (suppression); a fully suppressed row raises.
    """
    scale = 1.0 / math.sqrt(head_dim)
    qh = _split_heads(q, head_dim) * scale
    kh = _split_heads(k, head_dim)
    vh = _split_heads(v, head_dim)
    logits = T.matmul(qh, T.swapaxes(kh, -1, -2))
    if s is not None:
        s_arr = s.data if isinstance(s, Tensor) else np.asarray(s, dtype=np.float64)
        if s_arr.shape[-2:] != tuple(logits.shape[-2:]):
            raise ShapeError(f"modulation term {s_arr.shape} vs attention {logits.shape}")
        # suppressed (-inf) entries stay hard-masked for any lam; finite ones scale
        with np.errstate(invalid="ignore"):
            bias = np.where(np.isneginf(s_arr), -np.inf, (lam * scale) * s_arr)
        if bias.ndim == logits.ndim - 1:
            bias = np.expand_dims(bias, -3)  # broadcast across heads
        logits = logits + Tensor(bias.astype(logits.dtype))
    w = T.softmax(logits, axis=-1)
    return _merge_heads(T.matmul(w, vh))


def dual_ref_self_attention(q, k, v, head_dim):
    """Per-frame self-attention with keys/values from frames i, 1, and n.

    q, k, v are (frames, tokens, C); each frame's keys become
    [K^i; K^1; K^n] along the sequence axis, values likewise.
    """
    n = q.shape[0]
    k1 = T.broadcast_to(k[0:1], k.shape)
    kn = T.broadcast_to(k[n - 1:n], k.shape)
    v1 = T.broadcast_to(v[0:1], v.shape)
    vn = T.broadcast_to(v[n - 1:n], v.shape)
    k_cat = T.concat([k, k1, kn], axis=1)
    v_cat = T.concat([v, v1, vn], axis=1)
    return scaled_attention(q, k_cat, v_cat, head_dim)


def sinusoid_positions(n, channels, dtype=np.float32):
    """Fixed transformer-style positional features for frame indices."""
    pos = np.arange(n)[:, None].astype(np.float64)
    half = channels // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = pos * freqs[None, :]
    pe = np.zeros((n, channels), dtype=np.float64)
    pe[:, 0::2] = np.sin(ang)[:, : (channels + 1) // 2]
    pe[:, 1::2] = np.cos(ang)[:, : channels // 2]
    return pe.astype(dtype)
