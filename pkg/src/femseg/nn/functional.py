"""Differentiable layer operations on 5-axis tensors (batch, channel, z, y, x).

Every op works in the dtype of its input, so float64 inputs give float64
gradients for finite-difference checks while training runs in float32.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from femseg.errors import IndivisibleDims, ShapeMismatch
from femseg.nn.tensor import Tensor, as_tensor, result


def _triple(v) -> tuple[int, int, int]:
    if np.isscalar(v):
        return (int(v),) * 3
    t = tuple(int(a) for a in v)
    if len(t) != 3:
        raise ValueError(f"expected an int or a triple, got {v!r}")
    return t


def _check5(x: Tensor, what: str):
    if x.data.ndim != 5:
        raise ShapeMismatch(f"{what} expects a (batch, channel, z, y, x) tensor, got shape {x.shape}")


def conv_output_dims(dims, kernel, stride=1, padding=0) -> tuple[int, int, int]:
    k, s, p = _triple(kernel), _triple(stride), _triple(padding)
    return tuple((d + 2 * pp - kk) // ss + 1 for d, kk, ss, pp in zip(dims, k, s, p))


def _im2col(xp: np.ndarray, k, s, out_dims) -> np.ndarray:
    b, c = xp.shape[:2]
    win = sliding_window_view(xp, k, axis=(2, 3, 4))
    win = win[:, :, : out_dims[0] * s[0] : s[0], : out_dims[1] * s[1] : s[1], : out_dims[2] * s[2] : s[2]]
    # (c, kz, ky, kx, b, oz, oy, ox)
    return win.transpose(1, 5, 6, 7, 0, 2, 3, 4).reshape(c * k[0] * k[1] * k[2], -1)


def _col2im(cols: np.ndarray, padded_shape, k, s, out_dims) -> np.ndarray:
    b, c = padded_shape[:2]
    cols = cols.reshape(c, k[0], k[1], k[2], b, *out_dims)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    oz, oy, ox = out_dims
    for i in range(k[0]):
        for j in range(k[1]):
            for l in range(k[2]):
                out[:, :, i : i + s[0] * oz : s[0], j : j + s[1] * oy : s[1], l : l + s[2] * ox : s[2]] += (
                    cols[:, i, j, l].transpose(1, 0, 2, 3, 4)
                )
    return out


def _unpad(a: np.ndarray, p) -> np.ndarray:
    sl = tuple(slice(pp, a.shape[2 + i] - pp) for i, pp in enumerate(p))
    return a[(slice(None), slice(None)) + sl]


def conv3d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """3-D cross-correlation. ``weight`` is (c_out, c_in, kz, ky, kx)."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    _check5(x, "conv3d")
    co, ci = weight.shape[:2]
    if x.shape[1] != ci:
        raise ShapeMismatch(f"conv3d: input has {x.shape[1]} channels, kernel expects {ci}")
    if bias is not None and bias.shape != (co,):
        raise ShapeMismatch(f"conv3d: bias shape {bias.shape} != ({co},)")
    k, s, p = weight.shape[2:], _triple(stride), _triple(padding)
    out_dims = conv_output_dims(x.shape[2:], k, s, p)
    if min(out_dims) <= 0:
        raise ShapeMismatch(f"conv3d: kernel {k} does not fit input {x.shape[2:]} with padding {p}")
    b = x.shape[0]
    xp = np.pad(x.data, ((0, 0), (0, 0)) + tuple((pp, pp) for pp in p)) if any(p) else x.data
    cols = _im2col(xp, k, s, out_dims)
    wmat = weight.data.reshape(co, -1)
    out = (wmat @ cols).reshape(co, b, *out_dims).transpose(1, 0, 2, 3, 4)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1, 1)
    out = np.ascontiguousarray(out)
    parents = [x, weight] + ([bias] if bias is not None else [])

    def backward(g):
        gmat = g.transpose(1, 0, 2, 3, 4).reshape(co, -1)
        if weight.requires_grad:
            weight.accumulate((gmat @ cols.T).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3, 4)))
        if x.requires_grad:
            gx = _col2im(wmat.T @ gmat, xp.shape, k, s, out_dims)
            x.accumulate(_unpad(gx, p) if any(p) else gx)

    return result(out, parents, backward)


def conv_transpose3d(x, weight, bias=None, stride=2, padding=0) -> Tensor:
    """Transposed 3-D convolution, the exact adjoint of :func:`conv3d`.

    ``weight`` has the layout of the matching forward convolution,
    (c_in_here, c_out_here, kz, ky, kx): a conv3d with this weight maps
    ``c_out_here`` channels to ``c_in_here``, and this op maps them back.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    _check5(x, "conv_transpose3d")
    ci, co = weight.shape[:2]
    if x.shape[1] != ci:
        raise ShapeMismatch(f"conv_transpose3d: input has {x.shape[1]} channels, kernel expects {ci}")
    if bias is not None and bias.shape != (co,):
        raise ShapeMismatch(f"conv_transpose3d: bias shape {bias.shape} != ({co},)")
    k, s, p = weight.shape[2:], _triple(stride), _triple(padding)
    in_dims = x.shape[2:]
    out_dims = tuple((d - 1) * ss - 2 * pp + kk for d, ss, pp, kk in zip(in_dims, s, p, k))
    if min(out_dims) <= 0:
        raise ShapeMismatch(f"conv_transpose3d: empty output for input {in_dims}")
    b = x.shape[0]
    padded = (b, co) + tuple(d + 2 * pp for d, pp in zip(out_dims, p))
    wmat = weight.data.reshape(ci, -1)
    xmat = x.data.transpose(1, 0, 2, 3, 4).reshape(ci, -1)
    out = _col2im(wmat.T @ xmat, padded, k, s, in_dims)
    if any(p):
        out = _unpad(out, p)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1, 1)
    out = np.ascontiguousarray(out)
    parents = [x, weight] + ([bias] if bias is not None else [])

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0)) + tuple((pp, pp) for pp in p)) if any(p) else g
        gcols = _im2col(gp, k, s, in_dims)
        if weight.requires_grad:
            weight.accumulate((xmat @ gcols.T).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3, 4)))
        if x.requires_grad:
            x.accumulate((wmat @ gcols).reshape(ci, b, *in_dims).transpose(1, 0, 2, 3, 4))

    return result(out, parents, backward)


def maxpool3d(x, window: int = 2) -> Tensor:
    """Non-overlapping max pooling; gradient goes to the first maximum in scan order."""
    x = as_tensor(x)
    _check5(x, "maxpool3d")
    w = window
    b, c, z, y, xx = x.shape
    if z % w or y % w or xx % w:
        raise IndivisibleDims(f"maxpool3d: spatial dims {x.shape[2:]} not divisible by {w}")
    blocks = x.data.reshape(b, c, z // w, w, y // w, w, xx // w, w)
    blocks = blocks.transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(b, c, z // w, y // w, xx // w, w**3)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(b, c, z // w, y // w, xx // w, w, w, w).transpose(0, 1, 2, 5, 3, 6, 4, 7)
        x.accumulate(gb.reshape(x.shape))

    return result(out, [x], backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    out = np.where(pos, x.data, 0).astype(x.dtype, copy=False)
    return result(out, [x], lambda g: x.accumulate(g * pos))


def batchnorm3d(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over (batch, z, y, x).

    In training mode the running statistics arrays are updated in place
    (running_var uses the unbiased batch variance).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _check5(x, "batchnorm3d")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,) or running_mean.shape != (c,) or running_var.shape != (c,):
        raise ShapeMismatch(f"batchnorm3d: state does not match {c} channels")
    axes = (0, 2, 3, 4)
    bshape = (1, c, 1, 1, 1)
    if training:
        n = x.data.size // c
        mean = x.data.mean(axis=axes)
        xc = x.data - mean.reshape(bshape)
        var = (xc * xc).mean(axis=axes)
        unbiased = var * n / max(n - 1, 1)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        xc = x.data - running_mean.reshape(bshape).astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * inv.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(bshape)
            if training:
                m1 = gxhat.mean(axis=axes, keepdims=True)
                m2 = (gxhat * xhat).mean(axis=axes, keepdims=True)
                x.accumulate(inv.reshape(bshape) * (gxhat - m1 - xhat * m2))
            else:
                x.accumulate(gxhat * inv.reshape(bshape))

    return result(out, [x, gamma, beta], backward)


def concat_channels(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check5(a, "concat_channels")
    _check5(b, "concat_channels")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatch(f"concat_channels: cannot stack {a.shape} with {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g[:, :ca])
        if b.requires_grad:
            b.accumulate(g[:, ca:])

    return result(out, [a, b], backward)


def softmax_channels(x) -> Tensor:
    x = as_tensor(x)
    _check5(x, "softmax_channels")
    if x.shape[1] < 2:
        raise ShapeMismatch("softmax_channels needs at least two channels")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        x.accumulate(out * (g - (g * out).sum(axis=1, keepdims=True)))

    return result(out, [x], backward)


def soft_dice_loss(prob, truth, channel: int = 1, eps: float = 1e-6) -> Tensor:
    """Batch-mean of ``1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)``.

    ``prob`` is (batch, classes, z, y, x); ``truth`` is a 0/1 array shaped
    (batch, z, y, x) and the foreground probability is taken from ``channel``.
    """
    prob = as_tensor(prob)
    _check5(prob, "soft_dice_loss")
    g = np.asarray(truth)
    if g.shape != prob.shape[:1] + prob.shape[2:]:
        raise ShapeMismatch(f"soft_dice_loss: truth shape {g.shape} vs probabilities {prob.shape}")
    g = g.astype(prob.dtype)
    p = prob.data[:, channel]
    axes = (1, 2, 3)
    inter = (p * g).sum(axis=axes)
    denom = p.sum(axis=axes) + g.sum(axis=axes) + eps
    numer = 2 * inter + eps
    nb = p.shape[0]
    loss = np.asarray(np.mean(1 - numer / denom), dtype=prob.dtype)

    def backward(gout):
        # d/dp of -(numer/denom) = -(2 g denom - numer) / denom^2
        coef = (gout / nb) / denom**2
        gp = -(2 * g * denom.reshape(-1, 1, 1, 1) - numer.reshape(-1, 1, 1, 1)) * coef.reshape(-1, 1, 1, 1)
        full = np.zeros(prob.shape, dtype=prob.dtype)
        full[:, channel] = gp
        prob.accumulate(full)

    return result(loss, [prob], backward)
