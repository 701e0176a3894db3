"""Dense, convolutional and recurrent primitives shared by the blocks.

Everything here is plain numpy. Layout conventions:
  feature maps   [B x C x Fr x T]
  sequences      [N x L x D]
  conv2d kernels [C_out x C_in x kf x kt]
"""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def swish(x):
    return x * sigmoid(x)


def prelu(x, alpha):
    """Channelwise PReLU on [B x C x ...]; alpha is [C]."""
    a = alpha.reshape((1, -1) + (1,) * (x.ndim - 2))
    return np.maximum(x, 0.0) + a * np.minimum(x, 0.0)


def glu(x, axis=-1):
    """Gated linear unit: split in halves, first half gated by the second."""
    a, b = np.split(x, 2, axis=axis)
    return a * sigmoid(b)


def softmax(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def layernorm(x, scale, offset, eps=1e-5):
    """Normalize over the last axis; scale/offset are [D]."""
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * scale + offset


def batchnorm(x, scale, offset, running_mean, running_var, train=False,
              momentum=0.1, eps=1e-5):
    """Channelwise batch normalization on [B x C x ...].

    In train mode the batch statistics are used and the running buffers are
    updated in place; in eval mode the buffers are used as-is.
    """
    axes = (0,) + tuple(range(2, x.ndim))
    if train:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var
    shape = (1, -1) + (1,) * (x.ndim - 2)
    return ((x - mu.reshape(shape)) / np.sqrt(var.reshape(shape) + eps)
            * scale.reshape(shape) + offset.reshape(shape))


def dropout(x, rate, rng, train):
    if not train or rate <= 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return x * keep / (1.0 - rate)


def linear(x, weight, bias=None):
    """x [... x D_in] @ weight [D_out x D_in] + bias."""
    y = x @ weight.T
    if bias is not None:
        y = y + bias
    return y


# ------------------------------------------------------------------ conv2d

def conv2d(x, weight, bias=None, stride=(1, 1), pad_freq=(0, 0), pad_time=(0, 0)):
    """Strided cross-correlation of [B x Ci x Fr x T] with [Co x Ci x kf x kt].

    Zero padding; the two pad tuples are (before, after) on the frequency
    and time axes. Implemented as a sum over kernel taps, each tap a single
    channel contraction on a strided view.
    """
    sf, st = stride
    co, ci, kf, kt = weight.shape
    if x.shape[1] != ci:
        raise ValueError(f"conv2d expected {ci} input channels, got {x.shape[1]}")
    xp = np.pad(x, ((0, 0), (0, 0), pad_freq, pad_time))
    fo = (xp.shape[2] - kf) // sf + 1
    to = (xp.shape[3] - kt) // st + 1
    if fo < 1 or to < 1:
        raise ValueError(
            f"conv2d output would be empty: padded input {xp.shape[2:]} "
            f"with kernel ({kf}, {kt}) stride {stride}"
        )
    y = np.zeros((x.shape[0], co, fo, to), dtype=x.dtype)
    for i in range(kf):
        for j in range(kt):
            patch = xp[:, :, i : i + fo * sf : sf, j : j + to * st : st]
            y += np.einsum("bcft,oc->boft", patch, weight[:, :, i, j], optimize=True)
    if bias is not None:
        y += bias.reshape(1, -1, 1, 1)
    return y


def conv2d_input_grad(grad_y, weight, input_shape, stride=(1, 1),
                      pad_freq=(0, 0), pad_time=(0, 0)):
    """Gradient of conv2d w.r.t. its input; doubles as transposed conv.

    grad_y is [B x Co x Fo x To]; returns [B x Ci x Fr x T] of input_shape.
    Scatter per kernel tap into the padded buffer, then crop the padding.
    """
    sf, st = stride
    co, ci, kf, kt = weight.shape
    b, _, fo, to = grad_y.shape
    fr, t = input_shape
    xp_shape = (fr + pad_freq[0] + pad_freq[1], t + pad_time[0] + pad_time[1])
    expect_fo = (xp_shape[0] - kf) // sf + 1
    expect_to = (xp_shape[1] - kt) // st + 1
    if (fo, to) != (expect_fo, expect_to):
        raise ValueError(
            f"grad shape {(fo, to)} inconsistent with input {input_shape}, "
            f"kernel ({kf}, {kt}), stride {stride}: expected {(expect_fo, expect_to)}"
        )
    gxp = np.zeros((b, ci, xp_shape[0], xp_shape[1]), dtype=grad_y.dtype)
    for i in range(kf):
        for j in range(kt):
            contrib = np.einsum("boft,oc->bcft", grad_y, weight[:, :, i, j],
                                optimize=True)
            gxp[:, :, i : i + fo * sf : sf, j : j + to * st : st] += contrib
    return gxp[:, :, pad_freq[0] : pad_freq[0] + fr, pad_time[0] : pad_time[0] + t]


# --------------------------------------------------------------- depthwise

def depthwise_conv2d(x, kernel, bias=None):
    """Per-channel 'same' 5x5-style convolution: kernel [C x k x k], k odd."""
    c, k, _ = kernel.shape
    if k % 2 != 1:
        raise ValueError(f"depthwise kernel must be odd, got {k}")
    if x.shape[1] != c:
        raise ValueError(f"depthwise expected {c} channels, got {x.shape[1]}")
    half = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (half, half), (half, half)))
    fr, t = x.shape[2], x.shape[3]
    y = np.zeros_like(x)
    for i in range(k):
        for j in range(k):
            y += xp[:, :, i : i + fr, j : j + t] * kernel[:, i, j].reshape(1, -1, 1, 1)
    if bias is not None:
        y += bias.reshape(1, -1, 1, 1)
    return y


def depthwise_conv2d_backward(grad_y, x, kernel):
    """Gradients of depthwise_conv2d: returns (grad_x, grad_kernel, grad_bias)."""
    c, k, _ = kernel.shape
    half = k // 2
    fr, t = x.shape[2], x.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (half, half), (half, half)))
    gxp = np.zeros_like(xp)
    gk = np.zeros_like(kernel)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i : i + fr, j : j + t] += grad_y * kernel[:, i, j].reshape(1, -1, 1, 1)
            gk[:, i, j] = np.sum(xp[:, :, i : i + fr, j : j + t] * grad_y, axis=(0, 2, 3))
    gx = gxp[:, :, half : half + fr, half : half + t]
    gb = grad_y.sum(axis=(0, 2, 3))
    return gx, gk, gb


# ------------------------------------------------------------------ conv1d

def conv1d_same(x, weight, bias=0.0):
    """'Same' 1-D cross-correlation of [B x Ci x L] with [Ci x k] -> [B x L]."""
    ci, k = weight.shape
    if x.shape[1] != ci:
        raise ValueError(f"conv1d expected {ci} channels, got {x.shape[1]}")
    half = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (half, k - 1 - half)))
    length = x.shape[2]
    y = np.zeros((x.shape[0], length), dtype=x.dtype)
    for j in range(k):
        y += np.einsum("bcl,c->bl", xp[:, :, j : j + length], weight[:, j])
    return y + bias


def conv1d_same_backward(grad_y, x, weight):
    """Gradients of conv1d_same: returns (grad_x, grad_weight, grad_bias)."""
    ci, k = weight.shape
    half = k // 2
    length = x.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (half, k - 1 - half)))
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(weight)
    for j in range(k):
        gxp[:, :, j : j + length] += grad_y[:, None, :] * weight[:, j].reshape(1, -1, 1)
        gw[:, j] = np.einsum("bcl,bl->c", xp[:, :, j : j + length], grad_y)
    gx = gxp[:, :, half : half + length]
    gb = float(grad_y.sum())
    return gx, gw, gb


# -------------------------------------------------------------------- lstm

def lstm_forward(x, w_x, w_h, bias, h0=None, c0=None):
    """Unidirectional LSTM over [N x L x D_in].

    Gate blocks are ordered (input, forget, cell, output) inside the stacked
    weights: w_x [4H x D_in], w_h [4H x H], bias [4H]. Returns the hidden
    sequence [N x L x H].
    """
    n, length, _ = x.shape
    hidden = w_h.shape[1]
    h = np.zeros((n, hidden), dtype=x.dtype) if h0 is None else h0
    c = np.zeros((n, hidden), dtype=x.dtype) if c0 is None else c0
    # input contribution for all steps in one GEMM
    xz = x @ w_x.T + bias
    out = np.empty((n, length, hidden), dtype=x.dtype)
    for t in range(length):
        z = xz[:, t, :] + h @ w_h.T
        i = sigmoid(z[:, :hidden])
        f = sigmoid(z[:, hidden : 2 * hidden])
        g = np.tanh(z[:, 2 * hidden : 3 * hidden])
        o = sigmoid(z[:, 3 * hidden :])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[:, t, :] = h
    return out
