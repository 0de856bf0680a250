"""Tensor numerics: autodiff tensors, radix-2 FFT, resampling, VTEN files."""

from .fft import ComplexField, dft3_reference, fft3, gaussian_lpf, ifft3
from .tensor import (
    GradientTape,
    Tensor,
    add,
    as_tensor,
    bilinear_resize,
    broadcast_to,
    concat,
    constant,
    conv2d,
    cos,
    div,
    exp,
    fourier_embed,
    getitem,
    grad_check,
    log,
    matmul,
    mul,
    power,
    reshape,
    sigmoid,
    silu,
    sin,
    softmax,
    sqrt,
    sub,
    swapaxes,
    take_rows,
    tanh,
    tmean,
    transpose,
    tsum,
    upsample2,
)
from .vten import load_vten, read_vten_bytes, save_vten, write_vten_bytes

__all__ = [
    "ComplexField", "GradientTape", "Tensor",
    "add", "as_tensor", "bilinear_resize", "broadcast_to", "concat", "constant",
    "conv2d", "cos", "dft3_reference", "div", "exp", "fft3", "fourier_embed",
    "gaussian_lpf", "getitem", "grad_check", "ifft3", "load_vten", "log",
    "matmul", "mul", "power", "read_vten_bytes", "reshape", "save_vten",
    "sigmoid", "silu", "sin", "softmax", "sqrt", "sub", "swapaxes", "take_rows",
    "tanh", "tmean", "transpose", "tsum", "upsample2", "write_vten_bytes",
]
