"""Three-branch attention over channel, time and frequency axes.

Each branch squeezes the complementary axes to (average, standard deviation)
descriptors, runs a small local 1-D interaction along its own axis, and the
three per-index weight maps are averaged and squashed by a sigmoid that
gates the input. Stdev pooling uses the exact root of the variance, so a
per-slice constant input contributes only through the average channel and
the interaction bias.
"""

from __future__ import annotations

import numpy as np

from .ops import conv1d_same, conv1d_same_backward, sigmoid

# branch name -> (kept axis, reduced axes) on [B x C x Fr x T]
MCA_BRANCHES = (("channel", 1, (2, 3)), ("freq", 2, (1, 3)), ("time", 3, (1, 2)))


def eca_kernel_size(dim: int) -> int:
    """Local-interaction width: nearest odd to log2(dim) / 2 + 0.5."""
    if dim < 1:
        raise ValueError(f"dimension must be positive, got {dim}")
    t = int(np.log2(dim) / 2.0 + 0.5)
    k = t if t % 2 == 1 else t + 1
    return max(k, 1)


def mca_param_names():
    return [f"{name}.weight" for name, _, _ in MCA_BRANCHES] + \
           [f"{name}.bias" for name, _, _ in MCA_BRANCHES]


def _squeeze(x, axes):
    mu = x.mean(axis=axes)
    var = x.var(axis=axes)
    sd = np.sqrt(var)
    return mu, sd


def mca_forward(x, params, prefix, save_cache=False):
    """Gate [B x C x Fr x T] features; shape-preserving.

    params holds, per branch name in {channel, freq, time},
    f"{prefix}.{name}.weight" [2 x k] and f"{prefix}.{name}.bias" scalar.
    """
    if x.ndim != 4:
        raise ValueError(f"expected [B x C x Fr x T], got shape {x.shape}")
    b = x.shape[0]
    cache = {"x": x, "branches": {}} if save_cache else None
    logit = np.zeros_like(x)
    for name, axis, axes in MCA_BRANCHES:
        mu, sd = _squeeze(x, axes)  # each [B x dim]
        desc = np.stack([mu, sd], axis=1)  # [B x 2 x dim]
        w = params[f"{prefix}.{name}.weight"]
        bias = params[f"{prefix}.{name}.bias"]
        e = conv1d_same(desc, w, float(bias))  # [B x dim]
        shape = [b, 1, 1, 1]
        shape[axis] = x.shape[axis]
        logit += e.reshape(shape) / 3.0
        if save_cache:
            cache["branches"][name] = {"mu": mu, "sd": sd, "desc": desc}
    gate = sigmoid(logit)
    out = x * gate
    if save_cache:
        cache["gate"] = gate
        return out, cache
    return out


def mca_backward(grad_out, cache, params, prefix):
    """Gradients of mca_forward w.r.t. the input and the branch parameters.

    Returns (grad_x, grads). Descriptor slices whose stdev is exactly zero
    get no gradient through the stdev path (the root is not differentiable
    there; the subgradient 0 is used).
    """
    x = cache["x"]
    gate = cache["gate"]
    grad_x = grad_out * gate
    dlogit = grad_out * x * gate * (1.0 - gate)
    grads = {}
    for name, axis, axes in MCA_BRANCHES:
        rec = cache["branches"][name]
        de = dlogit.sum(axis=axes) / 3.0  # [B x dim]
        ddesc, gw, gb = conv1d_same_backward(de, rec["desc"],
                                             params[f"{prefix}.{name}.weight"])
        grads[f"{prefix}.{name}.weight"] = gw
        grads[f"{prefix}.{name}.bias"] = np.array(gb)
        dmu, dsd = ddesc[:, 0, :], ddesc[:, 1, :]
        count = 1
        for ax in axes:
            count *= x.shape[ax]
        shape = [x.shape[0], 1, 1, 1]
        shape[axis] = x.shape[axis]
        centered = x - rec["mu"].reshape(shape)
        safe_sd = np.where(rec["sd"] > 0.0, rec["sd"], 1.0)
        sd_scale = np.where(rec["sd"] > 0.0, dsd / safe_sd, 0.0)
        grad_x += dmu.reshape(shape) / count
        grad_x += sd_scale.reshape(shape) * centered / count
    return grad_x, grads
