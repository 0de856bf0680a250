"""Dense numpy-backed tensors with taped reverse-mode gradients.

Values are float32 by default; float64 is used for gradient checking.
Gradients are recorded only while a GradientTape is active, so inference
paths run as plain vectorized numpy.
"""

from __future__ import annotations

import math
import threading

import numpy as np

from ..errors import DegenerateDistributionError, GradCheckError, ShapeError

_FLOAT_TYPES = (np.float32, np.float64)

_local = threading.local()


def _tape_stack():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def _recording():
    return bool(_tape_stack())


class Tensor:
    """A dense array of 32- or 64-bit floats with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_TYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def copy(self):
        return Tensor(self.data.copy())

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def constant(x, like=None):
    dtype = like.dtype if like is not None else None
    return as_tensor(x, dtype=dtype)


class GradientTape:
    """Records the op graph built under it and resolves parameter gradients.

    Confined to one thread. Parameters do not have to be watched explicitly:
    any tensor with requires_grad=True that participates in the graph gets a
    gradient; tensors that do not participate resolve to exact zeros.
    """

    def __init__(self):
        self.watched = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().remove(self)
        return False

    def watch(self, *tensors):
        for t in tensors:
            t.requires_grad = True
            self.watched.append(t)

    def gradients(self, loss, params):
        """Backward from a scalar loss; returns numpy grads aligned with params."""
        if loss.size != 1:
            raise ShapeError("gradients() expects a scalar loss")
        order = []
        seen = set()
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and (p._vjp is not None or p.requires_grad):
                    stack.append((p, False))
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(order):
            if node._vjp is None:
                continue  # leaf: keep its accumulated grad for the final lookup
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


def _make(out_data, parents, vjp):
    out = Tensor(out_data)
    if _recording() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g, shape):
    """Sum g down to `shape` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    out = a.data ** p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * (0.5 / out),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sin(a):
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    a = as_tensor(a)
    return _make(np.cos(a.data), (a,), lambda g: (g * -np.sin(a.data),))


def sigmoid(a):
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a):
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * s
    return _make(out, (a,), lambda g: (g * (s * (1.0 + a.data * (1.0 - s))),))


# -- shape ops --------------------------------------------------------

def reshape(a, *shape):
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, ax1, ax2):
    axes = list(range(as_tensor(a).ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def getitem(a, idx):
    a = as_tensor(a)
    out = a.data[idx]

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[idx] = g
        return (ga,)

    return _make(out, (a,), vjp)


def concat(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(piece)
                     for piece in np.split(g, splits, axis=axis))

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, vjp)


def broadcast_to(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    old = a.shape
    return _make(np.ascontiguousarray(np.broadcast_to(a.data, shape)), (a,),
                 lambda g: (_unbroadcast(g, old),))


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = math.prod(a.shape[ax] for ax in axes)
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    vec_a, vec_b = a.ndim == 1, b.ndim == 1
    if vec_a:
        a = reshape(a, (1, a.shape[0]))
    if vec_b:
        b = reshape(b, (b.shape[0], 1))
    out = _matmul2(a, b)
    if vec_a and vec_b:
        return reshape(out, ())
    if vec_a:
        return reshape(out, out.shape[:-2] + (out.shape[-1],))
    if vec_b:
        return reshape(out, out.shape[:-1])
    return out


def _matmul2(a, b):
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make(out, (a, b), vjp)


def take_rows(table, indices):
    """Row gather for embedding lookups; grad scatter-adds into the table."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    out = table.data[idx]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make(out, (table,), vjp)


# -- softmax ----------------------------------------------------------

def softmax(logits, axis=-1):
    """Numerically stabilized softmax; -inf logits mark excluded entries.

    A slice whose every logit is -inf has no valid distribution and raises.
    """
    x = as_tensor(logits)
    m = np.max(x.data, axis=axis, keepdims=True)
    if np.isneginf(m).any():
        raise DegenerateDistributionError("softmax slice with all -inf logits")
    y = np.exp(x.data - m)
    y /= y.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _make(y, (x,), vjp)


# -- conv / resampling primitives ------------------------------------

def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    cols = np.ascontiguousarray(view.transpose(0, 4, 5, 1, 2, 3))
    return cols.reshape(n, ho * wo, c * kh * kw), ho, wo


def _col2im(cols, x_shape, kh, kw, stride, pad, ho, wo):
    n, c, h, w = x_shape
    cols = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    if pad:
        return xp[:, :, pad:pad + h, pad:pad + w]
    return xp


def conv2d(x, weight, bias=None, stride=1, pad=1):
    """2D convolution over (N, C, H, W); weight is (Cout, Cin, kh, kw)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if bias is not None:
        bias = as_tensor(bias)
    cout, cin, kh, kw = weight.shape
    if x.shape[1] != cin:
        raise ShapeError(f"conv2d: {x.shape[1]} input channels, weight wants {cin}")
    cols, ho, wo = _im2col(x.data, kh, kw, stride, pad)
    wmat = weight.data.reshape(cout, -1)
    out = np.matmul(cols, wmat.T)  # (n, ho*wo, cout)
    n = x.shape[0]
    out = out.transpose(0, 2, 1).reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        gmat = g.reshape(n, cout, ho * wo).transpose(0, 2, 1)  # (n, hw, cout)
        gw = np.tensordot(gmat, cols, axes=([0, 1], [0, 1])).reshape(weight.shape)
        gcols = np.matmul(gmat, wmat)
        gx = _col2im(gcols, x.shape, kh, kw, stride, pad, ho, wo)
        if bias is None:
            return (gx, gw)
        return (gx, gw, g.sum(axis=(0, 2, 3)))

    return _make(np.ascontiguousarray(out), parents, vjp)


def upsample2(x):
    """Nearest-neighbor 2x upsampling of (N, C, H, W)."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def vjp(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _make(out, (x,), vjp)


# -- resampling / embeddings (non-differentiated data paths) ----------

def bilinear_resize(frame, out_h, out_w):
    """Resize (..., H, W) with the half-pixel-center (align_corners=false) rule.

    Pure data operation: gradients are not tracked through resizing.
    """
    f = as_tensor(frame)
    if out_h < 1 or out_w < 1:
        raise ShapeError("bilinear_resize: output dims must be >= 1")
    arr = f.data
    h, w = arr.shape[-2], arr.shape[-1]
    if h < 1 or w < 1:
        raise ShapeError("bilinear_resize: input dims must be >= 1")
    if (out_h, out_w) == (h, w):
        return Tensor(arr.copy())
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.int64)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)
    wx = np.clip(xs - x0, 0.0, 1.0)
    top = arr[..., y0, :][..., :, x0] * (1 - wx) + arr[..., y0, :][..., :, x1] * wx
    bot = arr[..., y1, :][..., :, x0] * (1 - wx) + arr[..., y1, :][..., :, x1] * wx
    out = top * (1 - wy)[:, None] + bot * wy[:, None]
    return Tensor(out.astype(arr.dtype))


def fourier_embed(values, n_freqs):
    """Sin/cos features at octave frequencies: [sin(2^k pi x), cos(2^k pi x)].

    Output length is 2 * n_freqs * len(values), ordered per input value,
    per frequency, sin before cos.
    """
    if n_freqs < 1:
        raise ShapeError("fourier_embed: n_freqs must be >= 1")
    v = as_tensor(values)
    flat = v.data.reshape(-1)
    feats = []
    for x in flat:
        for k in range(n_freqs):
            ang = (2.0 ** k) * math.pi * float(x)
            feats.append(math.sin(ang))
            feats.append(math.cos(ang))
    return Tensor(np.asarray(feats, dtype=v.dtype))


# -- gradient checking ------------------------------------------------

def grad_check(f, params, eps=1e-4, samples=None, rng=None):
    """Max relative error between taped gradients and central differences.

    f is a zero-argument closure over `params` returning a scalar Tensor and
    must be evaluated in 64-bit mode. With `samples`, only that many
    components per parameter are probed (seeded by `rng`).
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise GradCheckError("grad_check requires float64 parameters")
    with GradientTape() as tape:
        tape.watch(*params)
        y = f()
    grads = tape.gradients(y, params)
    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p, g in zip(params, grads):
        n = p.size
        if samples is not None and samples < n:
            idxs = rng.choice(n, size=samples, replace=False)
        else:
            idxs = range(n)
        gflat = g.reshape(-1)
        for i in idxs:
            orig = p.data.flat[i]
            p.data.flat[i] = orig + eps
            y1 = float(f().data)
            p.data.flat[i] = orig - eps
            y2 = float(f().data)
            p.data.flat[i] = orig
            if not (math.isfinite(y1) and math.isfinite(y2)):
                raise GradCheckError(f"non-finite value at component {i}")
            fd = (y1 - y2) / (2.0 * eps)
            rel = abs(gflat[i] - fd) / max(1e-8, abs(gflat[i]) + abs(fd))
            worst = max(worst, rel)
    return worst
