"""Dense float32 tensor math hosting the injection sites.

A tensor here is simply a C-contiguous ``numpy.ndarray`` of dtype float32:
``shape`` and the flat row-major ``data`` are exactly numpy's, the product
of the shape equals the element count, and NaN/Inf bit patterns pass
through untouched (operators never sanitize; ``clamp`` is the one deliberate
exception and replaces NaN with its lower bound).

Deterministic evaluation contract
---------------------------------
conv2d / conv3d / linear accumulate in float32 with a fixed summation
order (input channel innermost, then kernel rows, then kernel columns,
starting from the bias), so repeated runs and both kernel backends produce
bit-identical outputs. Convolutions use cross-correlation semantics with
zero padding and ``H' = (H + 2*padding - K) // stride + 1`` output sizing.
There is no autodiff and no training path: this is an inference-only core.

All operations return fresh tensors; inputs are never mutated, so
concurrent calls on shared tensors are safe.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import _kernels
from .errors import ValidationError

F32 = np.float32


class LayerKind(Enum):
    """Layer vocabulary of the inference core.

    Only CONV2D, CONV3D and LINEAR are injectable (they own weights and a
    post-MAC output). The rest are auxiliary operators.
    """

    CONV2D = "conv2d"
    CONV3D = "conv3d"
    LINEAR = "linear"
    RELU = "relu"
    MAXPOOL2D = "maxpool2d"
    SOFTMAX = "softmax"
    FLATTEN = "flatten"


INJECTABLE_KINDS = frozenset({LayerKind.CONV2D, LayerKind.CONV3D, LayerKind.LINEAR})


def as_tensor(data, shape=None) -> np.ndarray:
    """Coerce ``data`` to a C-contiguous float32 array, optionally reshaped."""
    arr = np.ascontiguousarray(data, dtype=F32)
    if shape is not None:
        arr = arr.reshape(shape)
    return arr


def _check(arr, ndim, name) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=F32)
    if arr.ndim != ndim:
        raise ValidationError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    return arr


def conv2d_forward(x, weights, bias, stride: int = 1, padding: int = 0) -> np.ndarray:
    """2-D cross-correlation of a CxHxW input with OxCxKhxKw weights."""
    x = _check(x, 3, "input")
    weights = _check(weights, 4, "weights")
    bias = _check(bias, 1, "bias")
    if stride < 1 or padding < 0:
        raise ValidationError(f"need stride >= 1 and padding >= 0, got stride={stride}, padding={padding}")
    c_in, h, w = x.shape
    c_out, c_w, kh, kw = weights.shape
    if c_w != c_in:
        raise ValidationError(
            f"conv2d channel mismatch: input shape {x.shape} has {c_in} channels, "
            f"weights shape {weights.shape} expect {c_w}")
    if bias.shape[0] != c_out:
        raise ValidationError(f"conv2d bias length {bias.shape[0]} != output channels {c_out}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValidationError(
            f"conv2d kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{w + 2 * padding}")
    return _kernels.conv2d(x, weights, bias, stride, padding)


def conv3d_forward(x, weights, bias, stride: int = 1, padding: int = 0) -> np.ndarray:
    """3-D cross-correlation of a CxDxHxW input with OxCxKdxKhxKw weights."""
    x = _check(x, 4, "input")
    weights = _check(weights, 5, "weights")
    bias = _check(bias, 1, "bias")
    if stride < 1 or padding < 0:
        raise ValidationError(f"need stride >= 1 and padding >= 0, got stride={stride}, padding={padding}")
    c_in, d, h, w = x.shape
    c_out, c_w, kd, kh, kw = weights.shape
    if c_w != c_in:
        raise ValidationError(
            f"conv3d channel mismatch: input shape {x.shape} has {c_in} channels, "
            f"weights shape {weights.shape} expect {c_w}")
    if bias.shape[0] != c_out:
        raise ValidationError(f"conv3d bias length {bias.shape[0]} != output channels {c_out}")
    if kd > d + 2 * padding or kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValidationError(
            f"conv3d kernel {kd}x{kh}x{kw} exceeds padded input "
            f"{d + 2 * padding}x{h + 2 * padding}x{w + 2 * padding}")
    return _kernels.conv3d(x, weights, bias, stride, padding)


def linear_forward(x, weights, bias) -> np.ndarray:
    """Fully connected layer: out[o] = bias[o] + sum_i weights[o, i] * x[i]."""
    x = _check(x, 1, "input")
    weights = _check(weights, 2, "weights")
    bias = _check(bias, 1, "bias")
    c_out, c_in = weights.shape
    if x.shape[0] != c_in:
        raise ValidationError(
            f"linear length mismatch: input shape {x.shape} vs weights shape {weights.shape}")
    if bias.shape[0] != c_out:
        raise ValidationError(f"linear bias length {bias.shape[0]} != output length {c_out}")
    return _kernels.linear(x, weights, bias)


def maxpool2d(x, k: int, stride: int) -> np.ndarray:
    """Max over kxk windows; windows lie fully inside the input (floor sizing)."""
    x = _check(x, 3, "input")
    if k < 1 or stride < 1:
        raise ValidationError(f"need k >= 1 and stride >= 1, got k={k}, stride={stride}")
    if k > x.shape[1] or k > x.shape[2]:
        raise ValidationError(f"pool window {k} exceeds input shape {x.shape}")
    return _kernels.maxpool2d(x, k, stride)


def relu(x) -> np.ndarray:
    """Elementwise max(0, x); NaN propagates."""
    x = np.ascontiguousarray(x, dtype=F32)
    return np.maximum(x, F32(0.0))


def clamp(x, lo: float, hi: float) -> np.ndarray:
    """Elementwise min(hi, max(lo, x)); NaN is replaced by lo.

    The NaN rule makes clamp usable as a detected-value replacement in
    range-restriction hardening; monitors record the detection separately.
    """
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValidationError(f"clamp bounds must be finite, got [{lo}, {hi}]")
    if lo > hi:
        raise ValidationError(f"clamp needs lo <= hi, got [{lo}, {hi}]")
    x = np.ascontiguousarray(x, dtype=F32)
    lo32, hi32 = F32(lo), F32(hi)
    out = np.minimum(np.maximum(x, lo32), hi32)
    return np.where(np.isnan(x), lo32, out)


def softmax(x) -> np.ndarray:
    """Numerically stable softmax over a 1-D tensor.

    Computed in float64 (subtract max, exponentiate, normalize) and cast
    back to float32. NaN/Inf inputs propagate naturally.
    """
    x = _check(x, 1, "input")
    x64 = x.astype(np.float64)
    e = np.exp(x64 - np.max(x64))
    return (e / np.sum(e)).astype(F32)
