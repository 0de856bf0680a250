"""Radix-2 FFT over 3D fields and the frequency-domain Gaussian low-pass.

Axis extents must be powers of two. The forward transform is unscaled; the
inverse applies 1/N so ifft3(fft3(v)) == v. Transforms run in float64
internally regardless of the input dtype.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ParameterError, ShapeError
from .tensor import Tensor, as_tensor


class ComplexField:
    """Real/imaginary pair sharing the layout of the originating Tensor."""

    __slots__ = ("real", "imag")

    def __init__(self, real, imag):
        real = np.asarray(real, dtype=np.float64)
        imag = np.asarray(imag, dtype=np.float64)
        if real.shape != imag.shape:
            raise ShapeError("ComplexField: real/imag shapes differ")
        self.real = real
        self.imag = imag

    @property
    def dims(self):
        return self.real.shape

    def scaled(self, factor):
        """Elementwise product with a real filter (broadcasting allowed)."""
        f = factor.data if isinstance(factor, Tensor) else np.asarray(factor)
        return ComplexField(self.real * f, self.imag * f)

    def __add__(self, other):
        return ComplexField(self.real + other.real, self.imag + other.imag)

    def abs2(self):
        return self.real * self.real + self.imag * self.imag


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def _bit_reverse_indices(n):
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    bits = n.bit_length() - 1
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_last_axis(re, im, inverse):
    """In-place iterative radix-2 Cooley-Tukey along the last axis."""
    n = re.shape[-1]
    order = _bit_reverse_indices(n)
    re[...] = re[..., order]
    im[...] = im[..., order]
    sign = 1.0 if inverse else -1.0
    m = 2
    while m <= n:
        half = m // 2
        ang = sign * 2.0 * math.pi / m
        k = np.arange(half)
        wr = np.cos(ang * k)
        wi = np.sin(ang * k)
        re_v = re.reshape(-1, n // m, m)
        im_v = im.reshape(-1, n // m, m)
        ar, ai = re_v[..., :half], im_v[..., :half]
        br, bi = re_v[..., half:], im_v[..., half:]
        tr = wr * br - wi * bi
        ti = wr * bi + wi * br
        br[...] = ar - tr
        bi[...] = ai - ti
        ar[...] = ar + tr
        ai[...] = ai + ti
        m *= 2
    return re, im


def _transform(re, im, inverse):
    ndim = re.ndim
    for axis in range(ndim):
        if not _is_pow2(re.shape[axis]):
            raise ShapeError(f"fft3: axis {axis} extent {re.shape[axis]} is not a power of two")
    for axis in range(ndim):
        re = np.ascontiguousarray(np.moveaxis(re, axis, -1))
        im = np.ascontiguousarray(np.moveaxis(im, axis, -1))
        _fft_last_axis(re, im, inverse)
        re = np.moveaxis(re, -1, axis)
        im = np.moveaxis(im, -1, axis)
    if inverse:
        scale = 1.0 / math.prod(re.shape)
        re = re * scale
        im = im * scale
    return np.ascontiguousarray(re), np.ascontiguousarray(im)


def fft3(v) -> ComplexField:
    """Unscaled forward DFT of a 3D real field (frames x height x width)."""
    v = as_tensor(v)
    if v.ndim != 3:
        raise ShapeError(f"fft3 expects a 3D tensor, got {v.ndim}D")
    re = v.data.astype(np.float64)
    im = np.zeros_like(re)
    re, im = _transform(re, im, inverse=False)
    return ComplexField(re, im)


def ifft3(field: ComplexField, dtype=np.float32) -> Tensor:
    """Inverse DFT with 1/N scaling; returns the real part."""
    if len(field.dims) != 3:
        raise ShapeError("ifft3 expects a 3D field")
    re, im = _transform(field.real.copy(), field.imag.copy(), inverse=True)
    return Tensor(re.astype(dtype))


def dft3_reference(v) -> ComplexField:
    """Brute-force O(N^2) DFT used as the independent oracle in tests."""
    v = as_tensor(v).data.astype(np.float64)
    f, h, w = v.shape
    out = np.zeros((f, h, w), dtype=np.complex128)
    for kf in range(f):
        for kh in range(h):
            for kw in range(w):
                acc = 0.0j
                for a in range(f):
                    for b in range(h):
                        for c in range(w):
                            ang = -2.0 * math.pi * (kf * a / f + kh * b / h + kw * c / w)
                            acc += v[a, b, c] * complex(math.cos(ang), math.sin(ang))
                out[kf, kh, kw] = acc
    return ComplexField(out.real, out.imag)


def _fft_freqs(n):
    """Symmetric per-axis frequencies in standard FFT bin order, cycles/sample."""
    k = np.arange(n, dtype=np.float64)
    k[k >= (n + 1) // 2] -= n
    return k / n


def gaussian_lpf(dims, sigma_frac) -> Tensor:
    """Gaussian low-pass mask over FFT bins, G = exp(-d^2 / (2 sigma^2)).

    d is the radial frequency distance normalized so each axis' Nyquist is 1.
    G is exactly 1 at DC and lies in (0, 1] everywhere.
    """
    if sigma_frac <= 0:
        raise ParameterError("gaussian_lpf: sigma_frac must be > 0")
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise ShapeError("gaussian_lpf expects 3 dims")
    grids = np.meshgrid(*[_fft_freqs(n) / 0.5 for n in dims], indexing="ij")
    d2 = sum(g * g for g in grids)
    mask = np.exp(-d2 / (2.0 * sigma_frac * sigma_frac))
    return Tensor(mask.astype(np.float32))
