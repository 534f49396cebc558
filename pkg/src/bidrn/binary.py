"""1-bit kernels: sign quantization, bit packing, XNOR-popcount convolution.

Sign convention throughout: sign(0) = +1, and a packed bit of 1 encodes +1.
Zero padding therefore contributes +1 cells on the 1-bit path, which differs
from float padding semantics; every oracle comparison has to pad with +1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Parameter
from .errors import DimensionError
from .tensor import check_nchw, conv_out_extent, im2col, col2im

WORD_BITS = 64

# Rows of the XNOR matmul are processed in chunks of this many rows to bound
# the broadcasted (rows, c_out, words) intermediate.
_MATMUL_CHUNK = 4096


def sign_forward(x: np.ndarray) -> np.ndarray:
    """Elementwise binarization: +1 for x >= 0, -1 for x < 0."""
    x = np.asarray(x)
    return np.where(x >= 0, 1.0, -1.0).astype(x.dtype if x.dtype.kind == "f" else np.float32)


def smooth_sign(x: np.ndarray) -> np.ndarray:
    """The piecewise-quadratic surrogate F whose derivative is ste_grad.

    Used only while gradient-checking: substituting F for sign makes the
    straight-through backward the exact gradient of the (smoothed) forward,
    so central finite differences become a valid oracle for the wiring.
    """
    x = np.asarray(x)
    y = np.where(x >= 0, -x * x + 2.0 * x, x * x + 2.0 * x)
    y = np.where(x >= 1.0, 1.0, y)
    y = np.where(x < -1.0, -1.0, y)
    return y.astype(x.dtype if x.dtype.kind == "f" else np.float64)


_SMOOTH_MODE = False


class smooth_mode:
    """Context manager switching 1-bit ops to the surrogate-F forward."""

    def __enter__(self):
        global _SMOOTH_MODE
        self._prev = _SMOOTH_MODE
        _SMOOTH_MODE = True
        return self

    def __exit__(self, *exc):
        global _SMOOTH_MODE
        _SMOOTH_MODE = self._prev
        return False


def smooth_mode_active() -> bool:
    return _SMOOTH_MODE


def binarize_value(x: np.ndarray) -> np.ndarray:
    return smooth_sign(x) if _SMOOTH_MODE else sign_forward(x)


def ste_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of the piecewise-quadratic surrogate for sign.

    0 for |x| >= 1, 2 - 2x on [0, 1), 2 + 2x on [-1, 0).
    """
    x = np.asarray(x)
    g = np.where(x >= 0, 2.0 - 2.0 * x, 2.0 + 2.0 * x)
    g = np.where(np.abs(x) >= 1.0, 0.0, g)
    return g.astype(x.dtype if x.dtype.kind == "f" else np.float32)


def _tail_mask(valid_len: int) -> np.uint64:
    """Mask selecting the meaningful bits of the final word of a row."""
    rem = valid_len % WORD_BITS
    if rem == 0:
        return np.uint64(0xFFFFFFFFFFFFFFFF)
    return np.uint64((1 << rem) - 1)


@dataclass
class PackedBits:
    """Sign rows packed into 64-bit words, bit i of word j = element j*64+i."""

    words: np.ndarray  # (rows, words_per_row) uint64
    valid_len: int
    rows: int
    words_per_row: int

    @property
    def footprint_bytes(self) -> int:
        return self.rows * self.words_per_row * 8


def pack_signs(x: np.ndarray, valid_len: int | None = None) -> PackedBits:
    """Pack rows of reals (sign taken first) into PackedBits; tail bits zeroed."""
    x = np.atleast_2d(np.asarray(x))
    rows, length = x.shape
    if valid_len is None:
        valid_len = length
    if valid_len != length:
        raise DimensionError(
            f"valid_len {valid_len} does not match row length {length}"
        )
    bits = (x >= 0).astype(np.uint8)
    wpr = -(-valid_len // WORD_BITS)
    padded = np.zeros((rows, wpr * WORD_BITS), dtype=np.uint8)
    padded[:, :valid_len] = bits
    words = np.packbits(padded, axis=1, bitorder="little").view("<u8")
    return PackedBits(words=words, valid_len=valid_len, rows=rows, words_per_row=wpr)


def unpack_signs(p: PackedBits) -> np.ndarray:
    """Inverse of pack_signs, returning ±1 float rows."""
    bytes_ = p.words.view(np.uint8).reshape(p.rows, p.words_per_row * 8)
    bits = np.unpackbits(bytes_, axis=1, bitorder="little")[:, :p.valid_len]
    return np.where(bits == 1, 1.0, -1.0).astype(np.float32)


def xnor_popcount_dot(a: PackedBits, w: PackedBits, a_row: int = 0, w_row: int = 0) -> int:
    """±1 inner product of two packed rows: 2*popcount(XNOR & mask) - length."""
    if a.valid_len != w.valid_len:
        raise DimensionError(
            f"packed rows disagree on length: {a.valid_len} vs {w.valid_len}"
        )
    x = ~(a.words[a_row] ^ w.words[w_row])
    x[-1] &= _tail_mask(a.valid_len)
    agree = int(np.bitwise_count(x).sum())
    return 2 * agree - a.valid_len


def xnor_popcount_matmul(a: PackedBits, w: PackedBits) -> np.ndarray:
    """All-pairs ±1 dot products, (a.rows, w.rows) int32."""
    if a.valid_len != w.valid_len:
        raise DimensionError(
            f"packed operands disagree on length: {a.valid_len} vs {w.valid_len}"
        )
    mask = _tail_mask(a.valid_len)
    out = np.empty((a.rows, w.rows), dtype=np.int32)
    for start in range(0, a.rows, _MATMUL_CHUNK):
        chunk = a.words[start:start + _MATMUL_CHUNK]
        x = ~(chunk[:, None, :] ^ w.words[None, :, :])
        x[:, :, -1] &= mask
        agree = np.bitwise_count(x).sum(axis=2, dtype=np.int64)
        out[start:start + _MATMUL_CHUNK] = 2 * agree - a.valid_len
    return out


@dataclass
class BinaryConv2dParams:
    """Latent full-precision weights plus per-output-channel scale.

    ``latent_weights`` is (C_out, C_in, K, K) for convolution. For the
    transposed path the same record stores (C_in, C_out, K, K); alpha is
    always indexed by output channel. ``alpha`` is refreshed from the latent
    weights on every forward until ``frozen`` is set.
    """

    latent_weights: Parameter
    alpha: np.ndarray
    stride: int = 1
    padding: int = 0
    transposed: bool = False
    frozen: bool = False

    @classmethod
    def create(cls, c_out: int, c_in: int, kernel: int, stride: int = 1,
               padding: int = 0, rng: np.random.Generator | None = None,
               transposed: bool = False, dtype=np.float32) -> "BinaryConv2dParams":
        rng = rng or np.random.default_rng(0)
        fan_in = c_in * kernel * kernel
        bound = np.sqrt(6.0 / fan_in)
        shape = (c_in, c_out, kernel, kernel) if transposed else (c_out, c_in, kernel, kernel)
        w = rng.uniform(-bound, bound, size=shape)
        p = cls(
            latent_weights=Parameter(w, dtype=dtype),
            alpha=np.zeros(c_out, dtype=dtype),
            stride=stride,
            padding=padding,
            transposed=transposed,
        )
        refresh_alpha(p)
        return p

    @property
    def out_channels(self) -> int:
        return self.alpha.shape[0]

    @property
    def kernel(self) -> int:
        return self.latent_weights.data.shape[2]

    @property
    def fan_in(self) -> int:
        w = self.latent_weights.data
        k = w.shape[2] * w.shape[3]
        return (w.shape[0] if self.transposed else w.shape[1]) * k

    def finalize(self):
        refresh_alpha(self)
        self.frozen = True


def refresh_alpha(p: BinaryConv2dParams) -> np.ndarray:
    w = p.latent_weights.data
    axis = (0, 2, 3) if p.transposed else (1, 2, 3)
    p.alpha = (np.abs(w).sum(axis=axis) / p.fan_in).astype(w.dtype)
    return p.alpha


def binarize_weights(p: BinaryConv2dParams) -> np.ndarray:
    """Scaled 1-bit weights: alpha[i] * sign(latent) per output channel."""
    if not p.frozen:
        refresh_alpha(p)
    w = p.latent_weights.data
    s = sign_forward(w)
    if p.transposed:
        return s * p.alpha[None, :, None, None]
    return s * p.alpha[:, None, None, None]


@dataclass
class BinaryLinearParams:
    """Latent weights (out, in) with per-output-row scale, for 1-bit FC layers."""

    latent_weights: Parameter
    alpha: np.ndarray
    frozen: bool = False

    @classmethod
    def create(cls, out_features: int, in_features: int,
               rng: np.random.Generator | None = None, dtype=np.float32) -> "BinaryLinearParams":
        rng = rng or np.random.default_rng(0)
        bound = np.sqrt(6.0 / in_features)
        w = rng.uniform(-bound, bound, size=(out_features, in_features))
        p = cls(latent_weights=Parameter(w, dtype=dtype),
                alpha=np.zeros(out_features, dtype=dtype))
        p.refresh_alpha()
        return p

    def refresh_alpha(self) -> np.ndarray:
        w = self.latent_weights.data
        self.alpha = (np.abs(w).sum(axis=1) / w.shape[1]).astype(w.dtype)
        return self.alpha

    def finalize(self):
        self.refresh_alpha()
        self.frozen = True


def binary_conv2d_packed(x: np.ndarray, p: BinaryConv2dParams):
    """Packed-path forward. Returns (output, int accumulator, im2col rows).

    The accumulator is the pre-scale ±1 convolution result; output is
    alpha * accumulator reshaped to NCHW.
    """
    x = check_nchw(x)
    w = p.latent_weights.data
    if p.transposed:
        raise DimensionError("binary_conv2d requires non-transposed params")
    c_out, c_in, kh, kw = w.shape
    n, c, h, wd = x.shape
    if c != c_in:
        raise DimensionError(
            f"weight input channels {w.shape} do not match input {x.shape}"
        )
    if not p.frozen:
        refresh_alpha(p)
    oh = conv_out_extent(h, kh, p.stride, p.padding)
    ow = conv_out_extent(wd, kw, p.stride, p.padding)
    # Padded cells carry value 0, which signs to +1 inside pack_signs.
    cols = im2col(x, kh, kw, p.stride, p.padding)
    a_packed = pack_signs(cols)
    w_packed = pack_signs(w.reshape(c_out, c_in * kh * kw))
    acc = xnor_popcount_matmul(a_packed, w_packed)  # (N*OH*OW, C_out)
    y = (acc.astype(w.dtype) * p.alpha[None, :])
    y = y.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), acc, cols


def binary_conv2d(x: np.ndarray, p: BinaryConv2dParams) -> np.ndarray:
    y, _, _ = binary_conv2d_packed(x, p)
    return y


def binary_deconv2d(x: np.ndarray, p: BinaryConv2dParams, out_stride: int | None = None) -> np.ndarray:
    """Transposed convolution on sign(x) and alpha*sign(w), unpacked path.

    Output spatial extent is (H-1)*stride - 2*padding + K. Zero insertion makes
    bit packing awkward and the consumers are small, so this stays in the ±1
    integer domain without packing.
    """
    x = check_nchw(x)
    w = p.latent_weights.data
    if not p.transposed:
        raise DimensionError("binary_deconv2d requires transposed params")
    stride = p.stride if out_stride is None else out_stride
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    c_in, c_out, kh, kw = w.shape
    n, c, h, wd = x.shape
    if c != c_in:
        raise DimensionError(
            f"weight input channels {w.shape} do not match input {x.shape}"
        )
    if not p.frozen:
        refresh_alpha(p)
    oh = (h - 1) * stride - 2 * p.padding + kh
    ow = (wd - 1) * stride - 2 * p.padding + kw
    if oh < 1 or ow < 1:
        raise DimensionError(
            f"deconv output extent {oh}x{ow} invalid for input {h}x{wd}"
        )
    xs = sign_forward(x)
    ws = binarize_weights(p)  # alpha folded in
    # Transposed conv == adjoint of a conv mapping (N,C_out,oh,ow)->(N,C_in,h,wd)
    x_mat = xs.transpose(0, 2, 3, 1).reshape(n * h * wd, c_in)
    w_mat = ws.reshape(c_in, c_out * kh * kw)
    cols = (x_mat @ w_mat).astype(w.dtype)
    return col2im(cols, (n, c_out, oh, ow), kh, kw, stride, p.padding)
