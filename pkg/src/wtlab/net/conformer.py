"""Macaron conformer blocks and the two-pass time/frequency wrapper."""

from __future__ import annotations

import numpy as np

from .ops import dropout, glu, layernorm, linear, softmax, swish


def conformer_param_names(prefix):
    """All parameter names of one block under the given prefix."""
    names = []
    for part in ("ffn1", "mhsa", "conv", "ffn2", "final"):
        names += [f"{prefix}.{part}.ln.scale", f"{prefix}.{part}.ln.offset"]
    for part in ("ffn1", "ffn2"):
        names += [f"{prefix}.{part}.w1", f"{prefix}.{part}.b1",
                  f"{prefix}.{part}.w2", f"{prefix}.{part}.b2"]
    for proj in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
        names.append(f"{prefix}.mhsa.{proj}")
    names += [f"{prefix}.conv.pw1.weight", f"{prefix}.conv.pw1.bias",
              f"{prefix}.conv.dw.kernel", f"{prefix}.conv.dw.bias",
              f"{prefix}.conv.pw2.weight", f"{prefix}.conv.pw2.bias"]
    return names


def mhsa_forward(x, params, prefix, num_heads, return_weights=False):
    """Multi-head self-attention on [N x L x D]."""
    n, length, dim = x.shape
    if dim % num_heads != 0:
        raise ValueError(f"model dim {dim} not divisible by {num_heads} heads")
    dh = dim // num_heads

    def heads(t):
        return t.reshape(n, length, num_heads, dh).transpose(0, 2, 1, 3)

    q = heads(linear(x, params[f"{prefix}.wq"], params[f"{prefix}.bq"]))
    k = heads(linear(x, params[f"{prefix}.wk"], params[f"{prefix}.bk"]))
    v = heads(linear(x, params[f"{prefix}.wv"], params[f"{prefix}.bv"]))
    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
    weights = softmax(scores, axis=-1)  # [N x H x L x L], rows sum to 1
    mixed = (weights @ v).transpose(0, 2, 1, 3).reshape(n, length, dim)
    out = linear(mixed, params[f"{prefix}.wo"], params[f"{prefix}.bo"])
    if return_weights:
        return out, weights
    return out


def _ffn(x, params, prefix, rate, rng, train):
    h = linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"])
    h = dropout(swish(h), rate, rng, train)
    return linear(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _depthwise_seq(x, kernel, bias):
    """Per-feature 'same' 1-D convolution along the sequence axis.

    x is [N x L x D], kernel [D x k].
    """
    dim, k = kernel.shape
    half = k // 2
    xp = np.pad(x, ((0, 0), (half, k - 1 - half), (0, 0)))
    length = x.shape[1]
    y = np.zeros_like(x)
    for j in range(k):
        y += xp[:, j : j + length, :] * kernel[:, j]
    return y + bias


def _conv_module(x, params, prefix, rate, rng, train):
    h = linear(x, params[f"{prefix}.pw1.weight"], params[f"{prefix}.pw1.bias"])
    h = glu(h, axis=-1)
    h = swish(_depthwise_seq(h, params[f"{prefix}.dw.kernel"],
                             params[f"{prefix}.dw.bias"]))
    h = linear(h, params[f"{prefix}.pw2.weight"], params[f"{prefix}.pw2.bias"])
    return dropout(h, rate, rng, train)


def _ln(x, params, prefix):
    return layernorm(x, params[f"{prefix}.ln.scale"], params[f"{prefix}.ln.offset"])


def conformer_block_forward(x, params, prefix, num_heads=4, dropout_rate=0.0,
                            rng=None, train=False):
    """One Macaron block on sequences [N x L x D]; shape-preserving.

    Half-step feed-forward, self-attention, convolution module, second
    half-step feed-forward, each pre-normalized and residual, then a final
    layer normalization.
    """
    if x.ndim != 3:
        raise ValueError(f"expected [N x L x D], got shape {x.shape}")
    y = x + 0.5 * _ffn(_ln(x, params, f"{prefix}.ffn1"), params,
                       f"{prefix}.ffn1", dropout_rate, rng, train)
    y = y + dropout(mhsa_forward(_ln(y, params, f"{prefix}.mhsa"), params,
                                 f"{prefix}.mhsa", num_heads),
                    dropout_rate, rng, train)
    y = y + _conv_module(_ln(y, params, f"{prefix}.conv"), params,
                         f"{prefix}.conv", dropout_rate, rng, train)
    y = y + 0.5 * _ffn(_ln(y, params, f"{prefix}.ffn2"), params,
                       f"{prefix}.ffn2", dropout_rate, rng, train)
    return _ln(y, params, f"{prefix}.final")


def tf_conformer_forward(x, params, prefix, num_heads=4, dropout_rate=0.0,
                         rng=None, train=False):
    """Two cascaded passes over [B x C x Fb x T] plus a gated residual.

    The time pass folds frequency into the batch and runs sequences over T;
    the frequency pass folds time into the batch and runs sequences over Fb.
    The processed features re-enter through a learned scalar gate:
    out = x + gate * processed, so gate = 0 is an exact identity.
    """
    if x.ndim != 4:
        raise ValueError(f"expected [B x C x Fb x T], got shape {x.shape}")
    b, c, fb, t = x.shape
    seq = x.transpose(0, 2, 3, 1).reshape(b * fb, t, c)
    seq = conformer_block_forward(seq, params, f"{prefix}.time", num_heads,
                                  dropout_rate, rng, train)
    y = seq.reshape(b, fb, t, c)
    seq = y.transpose(0, 2, 1, 3).reshape(b * t, fb, c)
    seq = conformer_block_forward(seq, params, f"{prefix}.freq", num_heads,
                                  dropout_rate, rng, train)
    z = seq.reshape(b, t, fb, c).transpose(0, 3, 2, 1)
    gate = params[f"{prefix}.gate"]
    return x + gate * z
