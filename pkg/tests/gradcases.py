"""Random finite-difference instances for every differentiable op.

Each ``case_*`` builds a float64 instance from ``rng`` and returns the relative
error between the backward pass and central differences of a random linear
functional of the output (or of the scalar loss).
"""
from __future__ import annotations

import numpy as np

from femseg.nn import functional as F
from femseg.nn.tensor import Tensor
from femseg.unet import UNet, UNetConfig, trainable_names
from oracles import finite_difference, rel_error

H = 1e-5


def _check(op, arrays, rng, scalar=False):
    """op(*tensors) -> Tensor; compares grads of sum(w * out) for every array."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = op(*tensors)
    w = None if scalar else rng.normal(size=out.shape)
    loss_of = (lambda o: float(o.data)) if scalar else (lambda o: float((w * o.data).sum()))
    out.backward(None if scalar else w)
    analytic = [t.grad.ravel() for t in tensors]
    numeric = finite_difference(lambda: loss_of(op(*[Tensor(a) for a in arrays])), arrays, H)
    return rel_error(np.concatenate(analytic), np.concatenate(numeric))


def case_conv3d(rng):
    ci, co = rng.integers(1, 3), rng.integers(1, 3)
    stride = int(rng.integers(1, 3))
    x = rng.normal(size=(int(rng.integers(1, 3)), ci, 5, 5, 5))
    w = rng.normal(size=(co, ci, 3, 3, 3))
    b = rng.normal(size=(co,))
    return _check(lambda x, w, b: F.conv3d(x, w, b, stride=stride, padding=1), [x, w, b], rng)


def case_conv_transpose3d(rng):
    ci, co = rng.integers(1, 3), rng.integers(1, 3)
    x = rng.normal(size=(int(rng.integers(1, 3)), ci, 3, 3, 3))
    w = rng.normal(size=(ci, co, 2, 2, 2))
    b = rng.normal(size=(co,))
    return _check(lambda x, w, b: F.conv_transpose3d(x, w, b, stride=2), [x, w, b], rng)


def case_maxpool3d(rng):
    x = rng.normal(size=(int(rng.integers(1, 3)), int(rng.integers(1, 3)), 4, 4, 6))
    return _check(lambda x: F.maxpool3d(x, 2), [x], rng)


def case_batchnorm(rng, training=True):
    c = int(rng.integers(1, 4))
    x = rng.normal(2.0, 3.0, size=(2, c, 3, 4, 3))
    gamma = rng.normal(size=c)
    beta = rng.normal(size=c)
    rm, rv = rng.normal(size=c), rng.random(c) + 0.5

    def op(x, g, b):
        # fresh copies: training mode updates running stats in place
        return F.batchnorm3d(x, g, b, rm.copy(), rv.copy(), training=training)

    return _check(op, [x, gamma, beta], rng)


def case_relu(rng):
    x = rng.normal(size=(1, 2, 3, 3, 3))
    return _check(F.relu, [x], rng)


def case_softmax(rng):
    x = rng.normal(0, 3, size=(2, int(rng.integers(2, 4)), 3, 3, 3))
    return _check(F.softmax_channels, [x], rng)


def case_concat(rng):
    a = rng.normal(size=(2, 2, 3, 3, 3))
    b = rng.normal(size=(2, 3, 3, 3, 3))
    return _check(F.concat_channels, [a, b], rng)


def case_soft_dice(rng):
    p = rng.random((2, 2, 4, 4, 4))
    g = (rng.random((2, 4, 4, 4)) > 0.5).astype(np.uint8)
    return _check(lambda p: F.soft_dice_loss(p, g), [p], rng, scalar=True)


def case_unet(rng, n_weights=10):
    """Dice loss through a depth-2 net (train-mode batch norm), spot-checked on random weights."""
    cfg = UNetConfig(depth=2, base_channels=2)
    net = UNet.create(cfg, np.random.default_rng(int(rng.integers(2**31))), dtype=np.float64)
    x = rng.normal(size=(2, 1, 8, 8, 8))
    g = (rng.random((2, 8, 8, 8)) > 0.5).astype(np.uint8)
    snapshot = {k: v.copy() for k, v in net.params.items()}

    def loss_value():
        # reset running stats so every evaluation sees the same state
        for k, v in snapshot.items():
            if k.endswith("running_mean") or k.endswith("running_var"):
                net.params[k][...] = v
        return float(F.soft_dice_loss(net.forward(x, training=True), g).data)

    leaves = {}
    F.soft_dice_loss(net.forward(x, training=True, leaves=leaves), g).backward()
    names = trainable_names(net.params)
    picks = [(names[int(rng.integers(len(names)))]) for _ in range(n_weights)]
    analytic, numeric = [], []
    for name in picks:
        arr = net.params[name]
        i = int(rng.integers(arr.size))
        analytic.append(leaves[name].grad.ravel()[i])
        numeric.append(finite_difference(loss_value, [arr], H, indices=[[i]])[0][i])
    return rel_error(np.array(analytic), np.array(numeric))


CASES = {
    "conv3d": case_conv3d,
    "conv_transpose3d": case_conv_transpose3d,
    "maxpool3d": case_maxpool3d,
    "batchnorm": case_batchnorm,
    "softmax": case_softmax,
    "soft_dice_loss": case_soft_dice,
    "unet": case_unet,
}
