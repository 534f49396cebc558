"""Dense NCHW tensor operations.

All feature maps are rank-4 numpy arrays in (batch, channel, height, width)
order, float32 by default. These are the full-precision reference paths that
the 1-bit kernels in :mod:`bidrn.binary` are checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Parameter
from .errors import DimensionError


def check_nchw(x: np.ndarray, name: str = "input") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise DimensionError(f"{name} must be rank-4 NCHW, got shape {x.shape}")
    if min(x.shape) < 1:
        raise DimensionError(f"{name} extents must all be >= 1, got {x.shape}")
    return x


def conv_out_extent(extent: int, kernel: int, stride: int, padding: int) -> int:
    out = (extent + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise DimensionError(
            f"kernel {kernel} with stride {stride}, padding {padding} does not fit "
            f"extent {extent}"
        )
    return out


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int,
           pad_value: float = 0.0) -> np.ndarray:
    """Rearrange sliding windows into rows of shape (N*OH*OW, C*kh*kw).

    The reduction axis (C*kh*kw) is contiguous per row so it can be bit-packed
    directly. ``pad_value`` matters for the 1-bit path, where padded cells must
    carry the sign convention of zero (+1) rather than a float zero.
    """
    x = check_nchw(x)
    n, c, h, w = x.shape
    oh = conv_out_extent(h, kh, stride, padding)
    ow = conv_out_extent(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                   constant_values=pad_value)
    s = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, oh, ow, kh, kw),
        strides=(s[0], s[1], s[2] * stride, s[3] * stride, s[2], s[3]),
        writeable=False,
    )
    # rows ordered (n, oh, ow); columns ordered (c, kh, kw)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols)


def col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int,
           padding: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add rows back onto the input grid."""
    n, c, h, w = x_shape
    oh = conv_out_extent(h, kh, stride, padding)
    ow = conv_out_extent(w, kw, stride, padding)
    hp, wp = h + 2 * padding, w + 2 * padding
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    patches = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride] += \
                patches[:, :, :, :, i, j]
    if padding:
        out = out[:, :, padding:hp - padding, padding:wp - padding]
    return out


def conv2d_reference(x: np.ndarray, weights: np.ndarray, stride: int = 1,
                     padding: int = 0) -> np.ndarray:
    """Full-precision cross-correlation, no bias, zero padding."""
    x = check_nchw(x)
    weights = check_nchw(weights, "weights")
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = weights.shape
    if c_in != c:
        raise DimensionError(
            f"weight input channels {weights.shape} do not match input {x.shape}"
        )
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    oh = conv_out_extent(h, kh, stride, padding)
    ow = conv_out_extent(w, kw, stride, padding)
    cols = im2col(x, kh, kw, stride, padding)
    w_mat = weights.reshape(c_out, c_in * kh * kw)
    y = cols @ w_mat.T
    return y.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2)


def avg_pool2d(x: np.ndarray, window: int = 2, stride: int | None = None) -> np.ndarray:
    x = check_nchw(x)
    if stride is None:
        stride = window
    n, c, h, w = x.shape
    if window < 1 or window > h or window > w:
        raise DimensionError(
            f"pool window {window} does not fit spatial extent {h}x{w}"
        )
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    s = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, oh, ow, window, window),
        strides=(s[0], s[1], s[2] * stride, s[3] * stride, s[2], s[3]),
        writeable=False,
    )
    return windows.mean(axis=(4, 5)).astype(x.dtype)


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = check_nchw(a, "a"), check_nchw(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise DimensionError(
            f"cannot concatenate channels of {a.shape} and {b.shape}"
        )
    return np.concatenate([a, b], axis=1)


def split_channels(x: np.ndarray, first: int):
    x = check_nchw(x)
    if not 1 <= first < x.shape[1]:
        raise DimensionError(
            f"split point {first} out of range for {x.shape[1]} channels"
        )
    return x[:, :first], x[:, first:]


@dataclass
class BatchNormParams:
    """Per-channel batch normalization state.

    ``scale``/``shift`` are learnable; running statistics are plain buffers
    updated in training mode only.
    """

    scale: Parameter
    shift: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def create(cls, channels: int, dtype=np.float32) -> "BatchNormParams":
        return cls(
            scale=Parameter(np.ones(channels), dtype=dtype),
            shift=Parameter(np.zeros(channels), dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )

    @property
    def channels(self) -> int:
        return self.scale.data.shape[0]


def batch_norm_forward(x: np.ndarray, p: BatchNormParams, training: bool = False) -> np.ndarray:
    x = check_nchw(x)
    if x.shape[1] != p.channels:
        raise DimensionError(
            f"batch norm over {p.channels} channels got input {x.shape}"
        )
    if training:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        p.running_mean[:] = (1 - p.momentum) * p.running_mean + p.momentum * mean
        p.running_var[:] = (1 - p.momentum) * p.running_var + p.momentum * var
    else:
        mean, var = p.running_mean, p.running_var
    xhat = (x - mean[:, None, None]) / np.sqrt(var[:, None, None] + p.eps)
    y = p.scale.data[:, None, None] * xhat + p.shift.data[:, None, None]
    return y.astype(x.dtype)


def hardtanh_forward(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return np.clip(x, -1.0, 1.0)


def l1_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionError(
            f"l1 loss shapes differ: {pred.shape} vs {target.shape}"
        )
    return float(np.mean(np.abs(pred - target)))
