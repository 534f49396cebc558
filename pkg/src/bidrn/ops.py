"""Differentiable operations built on the tape in :mod:`bidrn.autograd`.

Forward math delegates to :mod:`bidrn.tensor` and :mod:`bidrn.binary`;
each op wires up the matching backward rule. Sign nodes use the
piecewise-quadratic straight-through gradient, hardtanh uses the clamp mask,
and the weight-binarization backward combines the straight-through factor
with the exact derivative of the per-channel scale.
"""

from __future__ import annotations

import numpy as np

from . import binary, tensor
from .autograd import Var, as_var
from .errors import DimensionError


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    out_data = a.data + b.data

    def backward(g):
        a.accumulate(g)
        b.accumulate(g)

    return Var(out_data, parents=(a, b), backward=backward, op="add")


def scale(a, k: float) -> Var:
    a = as_var(a)

    def backward(g):
        a.accumulate(g * k)

    return Var(a.data * k, parents=(a,), backward=backward, op="scale")


def reshape(a, shape) -> Var:
    a = as_var(a)
    orig = a.data.shape

    def backward(g):
        a.accumulate(g.reshape(orig))

    return Var(a.data.reshape(shape), parents=(a,), backward=backward, op="reshape")


def exp(a) -> Var:
    a = as_var(a)
    out_data = np.exp(a.data)

    def backward(g):
        a.accumulate(g * out_data)

    return Var(out_data, parents=(a,), backward=backward, op="exp")


def hardtanh(x) -> Var:
    x = as_var(x)
    out_data = tensor.hardtanh_forward(x.data)

    def backward(g):
        mask = (x.data > -1.0) & (x.data < 1.0)
        x.accumulate(g * mask)

    return Var(out_data, parents=(x,), backward=backward, op="hardtanh")


def relu(x) -> Var:
    x = as_var(x)

    def backward(g):
        x.accumulate(g * (x.data > 0))

    return Var(np.maximum(x.data, 0), parents=(x,), backward=backward, op="relu")


def prelu(x, slope: float = 0.25) -> Var:
    x = as_var(x)
    out_data = np.where(x.data > 0, x.data, slope * x.data)

    def backward(g):
        x.accumulate(g * np.where(x.data > 0, 1.0, slope))

    return Var(out_data, parents=(x,), backward=backward, op="prelu")


PREACT = {"hardtanh": hardtanh, "relu": relu, "prelu": prelu}


def avg_pool(x, window: int = 2, stride: int | None = None) -> Var:
    x = as_var(x)
    if stride is None:
        stride = window
    out_data = tensor.avg_pool2d(x.data, window, stride)

    def backward(g):
        n, c, oh, ow = g.shape
        dx = np.zeros_like(x.data)
        inv = 1.0 / (window * window)
        for i in range(window):
            for j in range(window):
                dx[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride] += g * inv
        x.accumulate(dx)

    return Var(out_data, parents=(x,), backward=backward, op="avg_pool")


def concat(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out_data = tensor.concat_channels(a.data, b.data)
    ca = a.data.shape[1]

    def backward(g):
        a.accumulate(g[:, :ca])
        b.accumulate(g[:, ca:])

    return Var(out_data, parents=(a, b), backward=backward, op="concat")


def concat_many(parts) -> Var:
    out = parts[0]
    for p in parts[1:]:
        out = concat(out, p)
    return out


def split(x, first: int):
    x = as_var(x)
    da, db = tensor.split_channels(x.data, first)

    def backward_a(g):
        full = np.zeros_like(x.data)
        full[:, :first] = g
        x.accumulate(full)

    def backward_b(g):
        full = np.zeros_like(x.data)
        full[:, first:] = g
        x.accumulate(full)

    return (Var(da.copy(), parents=(x,), backward=backward_a, op="split0"),
            Var(db.copy(), parents=(x,), backward=backward_b, op="split1"))


def batch_norm(x, p: tensor.BatchNormParams, training: bool = False) -> Var:
    """Normalize with running statistics (detached); training mode first folds
    the batch statistics into the running buffers."""
    x = as_var(x)
    if x.data.shape[1] != p.channels:
        raise DimensionError(
            f"batch norm over {p.channels} channels got input {x.data.shape}"
        )
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        p.running_mean[:] = (1 - p.momentum) * p.running_mean + p.momentum * mean
        p.running_var[:] = (1 - p.momentum) * p.running_var + p.momentum * var
    mean = p.running_mean.copy()
    inv_std = 1.0 / np.sqrt(p.running_var + p.eps)
    xhat = (x.data - mean[:, None, None]) * inv_std[:, None, None]
    out_data = p.scale.data[:, None, None] * xhat + p.shift.data[:, None, None]

    def backward(g):
        p.scale.accumulate((g * xhat).sum(axis=(0, 2, 3)))
        p.shift.accumulate(g.sum(axis=(0, 2, 3)))
        x.accumulate(g * (p.scale.data * inv_std)[:, None, None])

    return Var(out_data, parents=(x, p.scale, p.shift), backward=backward, op="batch_norm")


def rprelu(o, p) -> Var:
    """Channel-wise shifted parametric ReLU with learnable gamma/zeta/beta."""
    o = as_var(o)
    gamma, zeta, beta = p.gamma, p.zeta, p.beta
    if o.data.shape[1] != gamma.data.shape[0]:
        raise DimensionError(
            f"rprelu over {gamma.data.shape[0]} channels got input {o.data.shape}"
        )
    gc = gamma.data[:, None, None]
    shifted = o.data - gc
    mask = o.data > gc
    out_data = np.where(mask, shifted, beta.data[:, None, None] * shifted) + \
        zeta.data[:, None, None]

    def backward(g):
        slope = np.where(mask, 1.0, beta.data[:, None, None])
        o.accumulate(g * slope)
        gamma.accumulate(-(g * slope).sum(axis=(0, 2, 3)))
        zeta.accumulate(g.sum(axis=(0, 2, 3)))
        beta.accumulate((g * np.where(mask, 0.0, shifted)).sum(axis=(0, 2, 3)))

    return Var(out_data, parents=(o, gamma, zeta, beta), backward=backward, op="rprelu")


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Var:
    """Full-precision convolution (block-residual and teacher paths)."""
    x, w = as_var(x), as_var(w)
    out_data = tensor.conv2d_reference(x.data, w.data, stride, padding)
    n, c, h, wd = x.data.shape
    c_out, c_in, kh, kw = w.data.shape
    cols = tensor.im2col(x.data, kh, kw, stride, padding)

    def backward(g):
        g_mat = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        w.accumulate((g_mat.T @ cols).reshape(w.data.shape))
        dcols = g_mat @ w.data.reshape(c_out, -1)
        x.accumulate(tensor.col2im(dcols, x.data.shape, kh, kw, stride, padding))

    return Var(out_data, parents=(x, w), backward=backward, op="conv2d")


def sign(x) -> Var:
    """Binarization node; backward is the straight-through surrogate gradient."""
    x = as_var(x)
    out_data = binary.binarize_value(x.data)

    def backward(g):
        x.accumulate(g * binary.ste_grad(x.data))

    return Var(out_data, parents=(x,), backward=backward, op="sign")


def binary_conv2d(x, p: binary.BinaryConv2dParams, detach_alpha: bool = False) -> Var:
    """XNOR-popcount convolution with straight-through backward.

    Gradients reach the latent weights through alpha * sign(w): the sign factor
    uses the surrogate gradient, and unless ``detach_alpha`` is set the exact
    derivative of alpha (sign(w) / fan_in) is added. In smooth mode the packed
    path is bypassed and sign is replaced by its surrogate F so the backward
    becomes the exact gradient of the forward.
    """
    x = as_var(x)
    w = p.latent_weights
    c_out = p.out_channels
    fan_in = p.fan_in
    w_mat = w.data.reshape(c_out, fan_in)
    if binary.smooth_mode_active():
        if not p.frozen:
            binary.refresh_alpha(p)
        n, _, h, wd = x.data.shape
        kh = p.kernel
        oh = tensor.conv_out_extent(h, kh, p.stride, p.padding)
        ow = tensor.conv_out_extent(wd, kh, p.stride, p.padding)
        cols = tensor.im2col(x.data, kh, kh, p.stride, p.padding)
        a_val = binary.smooth_sign(cols)
        w_val = binary.smooth_sign(w_mat)
        acc = a_val @ w_val.T
        out_data = (acc * p.alpha[None, :]).reshape(n, oh, ow, c_out) \
            .transpose(0, 3, 1, 2)
    else:
        out_data, acc, cols = binary.binary_conv2d_packed(x.data, p)
        a_val = binary.sign_forward(cols)
        w_val = binary.sign_forward(w_mat)

    def backward(g):
        g_mat = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        ds = g_mat * p.alpha[None, :]
        dw = (ds.T @ a_val) * binary.ste_grad(w_mat)
        if not detach_alpha:
            dalpha = (g_mat * np.asarray(acc, dtype=g.dtype)).sum(axis=0)
            dw += dalpha[:, None] * np.sign(w_mat) / fan_in
        w.accumulate(dw.reshape(w.data.shape))
        dcols = (ds @ w_val) * binary.ste_grad(cols)
        kh = p.kernel
        x.accumulate(tensor.col2im(dcols, x.data.shape, kh, kh, p.stride, p.padding))

    return Var(out_data, parents=(x, w), backward=backward, op="binary_conv2d")


def binary_deconv2d(x, p: binary.BinaryConv2dParams, out_stride: int | None = None,
                    detach_alpha: bool = False) -> Var:
    x = as_var(x)
    w = p.latent_weights
    stride = p.stride if out_stride is None else out_stride
    c_in, c_out, kh, kw = w.data.shape
    n, _, h, wd = x.data.shape
    fan_in = p.fan_in
    if not p.frozen:
        binary.refresh_alpha(p)
    x_val = binary.binarize_value(x.data)
    w_val = binary.binarize_value(w.data.reshape(c_in, c_out * kh * kw))
    if binary.smooth_mode_active():
        oh = (h - 1) * stride - 2 * p.padding + kh
        ow = (wd - 1) * stride - 2 * p.padding + kw
        alpha_cols = np.repeat(p.alpha, kh * kw).astype(w.data.dtype)
        x_mat = x_val.transpose(0, 2, 3, 1).reshape(-1, c_in)
        cols = x_mat @ (w_val * alpha_cols[None, :])
        out_data = tensor.col2im(cols, (n, c_out, oh, ow), kh, kw, stride, p.padding)
    else:
        out_data = binary.binary_deconv2d(x.data, p, out_stride)
    x_val_mat = x_val.transpose(0, 2, 3, 1).reshape(-1, c_in)

    def backward(g):
        g_cols = tensor.im2col(g, kh, kw, stride, p.padding)  # (n*h*wd, c_out*kh*kw)
        alpha_cols = np.repeat(p.alpha, kh * kw)
        # grad wrt the alpha-scaled binarized weights, shape (c_in, c_out*kh*kw)
        g_ws = x_val_mat.T @ g_cols
        dw = g_ws * alpha_cols[None, :] * binary.ste_grad(w.data.reshape(c_in, -1))
        if not detach_alpha:
            dalpha = (g_ws * w_val).reshape(c_in, c_out, kh * kw).sum(axis=(0, 2))
            dw = dw.reshape(c_in, c_out, kh * kw) + \
                dalpha[None, :, None] * np.sign(w.data.reshape(c_in, c_out, kh * kw)) / fan_in
        w.accumulate(dw.reshape(w.data.shape))
        dx_mat = g_cols @ (w_val * alpha_cols[None, :]).T
        dx = dx_mat.reshape(n, h, wd, c_in).transpose(0, 3, 1, 2)
        x.accumulate(dx * binary.ste_grad(x.data))

    return Var(out_data, parents=(x, w), backward=backward, op="binary_deconv2d")


def linear(x, w, b=None) -> Var:
    """Full-precision fully connected layer, x (N,F), w (O,F)."""
    x, w = as_var(x), as_var(w)
    out_data = x.data @ w.data.T
    parents = [x, w]
    if b is not None:
        b = as_var(b)
        out_data = out_data + b.data
        parents.append(b)

    def backward(g):
        x.accumulate(g @ w.data)
        w.accumulate(g.T @ x.data)
        if b is not None:
            b.accumulate(g.sum(axis=0))

    return Var(out_data, parents=tuple(parents), backward=backward, op="linear")


def binary_linear(x, p, detach_alpha: bool = False) -> Var:
    """Fully connected layer on sign(x) and alpha*sign(w); p is BinaryLinearParams."""
    x = as_var(x)
    w = p.latent_weights
    if not p.frozen:
        p.refresh_alpha()
    xs = binary.binarize_value(x.data)
    ws = binary.binarize_value(w.data)
    acc = xs @ ws.T
    out_data = acc * p.alpha[None, :]
    fan_in = w.data.shape[1]

    def backward(g):
        ds = g * p.alpha[None, :]
        dw = (ds.T @ xs) * binary.ste_grad(w.data)
        if not detach_alpha:
            dalpha = (g * acc).sum(axis=0)
            dw += dalpha[:, None] * np.sign(w.data) / fan_in
        w.accumulate(dw)
        x.accumulate((ds @ ws) * binary.ste_grad(x.data))

    return Var(out_data, parents=(x, w), backward=backward, op="binary_linear")


def global_avg_pool(x) -> Var:
    """(N, C, H, W) -> (N, C) spatial mean."""
    x = as_var(x)
    n, c, h, w = x.data.shape

    def backward(g):
        x.accumulate(np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape).copy())

    return Var(x.data.mean(axis=(2, 3)), parents=(x,), backward=backward, op="gap")


def l1_loss(pred, target) -> Var:
    """Mean absolute difference; subgradient 0 at exact ties."""
    pred, target = as_var(pred), as_var(target)
    if pred.data.shape != target.data.shape:
        raise DimensionError(
            f"l1 loss shapes differ: {pred.data.shape} vs {target.data.shape}"
        )
    diff = pred.data - target.data
    n = diff.size
    out_data = np.abs(diff).mean()

    def backward(g):
        s = np.sign(diff) * (float(g) / n)
        pred.accumulate(s)
        target.accumulate(-s)

    return Var(out_data, parents=(pred, target), backward=backward, op="l1_loss")


def soft_argmax(h) -> Var:
    """Expected (x, y, z) under a softmax over each (N, J, D, H, W) slice."""
    h = as_var(h)
    n, j, d, hh, ww = h.data.shape
    flat = h.data.reshape(n, j, -1)
    m = flat.max(axis=2, keepdims=True)
    e = np.exp(flat - m)
    prob = e / e.sum(axis=2, keepdims=True)
    zz, yy, xx = np.meshgrid(np.arange(d), np.arange(hh), np.arange(ww), indexing="ij")
    coords = np.stack([xx.ravel(), yy.ravel(), zz.ravel()]).astype(h.data.dtype)  # (3, DHW)
    out_data = prob @ coords.T  # (N, J, 3)

    def backward(g):
        # d out_c / d h = p * (coord_c - out_c)
        dh = np.zeros_like(flat)
        for c in range(3):
            dh += g[:, :, c:c + 1] * prob * (coords[c][None, None, :] - out_data[:, :, c:c + 1])
        h.accumulate(dh.reshape(h.data.shape))

    return Var(out_data, parents=(h,), backward=backward, op="soft_argmax")
