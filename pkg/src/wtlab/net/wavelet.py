"""Orthonormal 2-D Haar analysis/synthesis and the wavelet-conv cascade.

The cascade decomposes the feature map level by level, runs a depthwise
convolution with a learned per-channel gain on each detail subband, recurses
into the approximation, and reconstructs. A parallel depthwise convolution
of the unsplit input is added on top, so with identity kernels and unit
gains the block is exactly x -> 2x.
"""

from __future__ import annotations

import numpy as np

from .ops import depthwise_conv2d, depthwise_conv2d_backward

DETAIL_NAMES = ("lh", "hl", "hh")


def _pad_even(x):
    """Reflect-pad the two trailing axes to even extents.

    Returns the padded array and the (pad_f, pad_t) amounts (0 or 1 each).
    """
    pad_f = x.shape[-2] % 2
    pad_t = x.shape[-1] % 2
    if pad_f or pad_t:
        if (pad_f and x.shape[-2] < 2) or (pad_t and x.shape[-1] < 2):
            raise ValueError(f"cannot reflect-pad spatial extent 1 in shape {x.shape}")
        width = [(0, 0)] * (x.ndim - 2) + [(0, pad_f), (0, pad_t)]
        x = np.pad(x, width, mode="reflect")
    return x, (pad_f, pad_t)


def _fold_pad(grad, pads):
    """Adjoint of _pad_even: fold reflected-edge gradients onto their source."""
    pad_f, pad_t = pads
    if pad_f:
        grad[..., -3, :] += grad[..., -1, :]
        grad = grad[..., :-1, :]
    if pad_t:
        grad[..., :, -3] += grad[..., :, -1]
        grad = grad[..., :, :-1]
    return grad


def haar_dwt2(x):
    """Single-level orthonormal 2-D Haar analysis of [... x Fr x T].

    Odd extents are reflect-padded to even first. Returns (LL, LH, HL, HH),
    each [... x Fr' / 2 x T' / 2] where Fr', T' are the padded extents. LH
    carries detail along the time axis, HL along the frequency axis.
    """
    x, _ = _pad_even(x)
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) * 0.5
    lh = (a - b + c - d) * 0.5
    hl = (a + b - c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return ll, lh, hl, hh


def haar_idwt2(ll, lh, hl, hh, out_shape=None):
    """Inverse of haar_dwt2; exact for the orthonormal kernel.

    out_shape, when given, crops the trailing axes back to the original
    (possibly odd) extents recorded by the caller.
    """
    for name, band in (("lh", lh), ("hl", hl), ("hh", hh)):
        if band.shape != ll.shape:
            raise ValueError(
                f"subband shape mismatch: ll {ll.shape} vs {name} {band.shape}"
            )
    shape = ll.shape[:-2] + (2 * ll.shape[-2], 2 * ll.shape[-1])
    x = np.empty(shape, dtype=ll.dtype)
    x[..., 0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    x[..., 0::2, 1::2] = (ll - lh + hl - hh) * 0.5
    x[..., 1::2, 0::2] = (ll + lh - hl - hh) * 0.5
    x[..., 1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    if out_shape is not None:
        x = x[..., : out_shape[-2], : out_shape[-1]]
    return x


def max_wt_levels(fr, t):
    """How many halvings both extents support (each level needs >= 2)."""
    levels = 0
    while fr >= 2 and t >= 2:
        levels += 1
        fr = (fr + fr % 2) // 2
        t = (t + t % 2) // 2
    return levels


def wtconv_param_names(levels):
    """Parameter suffixes for one cascade, in a stable order."""
    names = ["direct.kernel", "direct.bias"]
    for lev in range(levels):
        bands = DETAIL_NAMES + (("ll",) if lev == levels - 1 else ())
        for band in bands:
            names += [f"level{lev}.{band}.kernel", f"level{lev}.{band}.bias",
                      f"level{lev}.{band}.gain"]
    return names


def wtconv_forward(x, params, prefix, levels, save_cache=False):
    """Wavelet-conv cascade on [B x C x Fr x T]; shape-preserving.

    params maps f"{prefix}.{suffix}" to arrays for every suffix from
    wtconv_param_names(levels): depthwise kernels [C x 5 x 5], biases [C]
    and per-channel gains [C] for each subband, plus the direct path.
    """
    feasible = max_wt_levels(x.shape[2], x.shape[3])
    if levels > feasible:
        raise ValueError(
            f"{levels} decomposition levels infeasible for spatial extents "
            f"{x.shape[2:]}: at most {feasible}"
        )

    def p(name):
        return params[f"{prefix}.{name}"]

    cache = {"x": x, "levels": []} if save_cache else None

    def cascade(inp, lev):
        padded, pads = _pad_even(inp)
        ll, lh, hl, hh = haar_dwt2(padded)
        deepest = lev == levels - 1
        details = {}
        conv_outs = {}
        for name, band in zip(DETAIL_NAMES, (lh, hl, hh)):
            conv = depthwise_conv2d(band, p(f"level{lev}.{name}.kernel"),
                                    p(f"level{lev}.{name}.bias"))
            conv_outs[name] = conv
            details[name] = conv * p(f"level{lev}.{name}.gain").reshape(1, -1, 1, 1)
        if deepest:
            conv = depthwise_conv2d(ll, p(f"level{lev}.ll.kernel"),
                                    p(f"level{lev}.ll.bias"))
            conv_outs["ll"] = conv
            inner = conv * p(f"level{lev}.ll.gain").reshape(1, -1, 1, 1)
        else:
            inner = cascade(ll, lev + 1)
        if save_cache:
            cache["levels"].append({
                "pads": pads, "in_shape": inp.shape,
                "bands": {"lh": lh, "hl": hl, "hh": hh, "ll": ll},
                "conv_outs": conv_outs,
            })
        return haar_idwt2(inner, details["lh"], details["hl"], details["hh"],
                          out_shape=inp.shape)

    out = cascade(x, 0) + depthwise_conv2d(x, p("direct.kernel"), p("direct.bias"))
    return (out, cache) if save_cache else out


def wtconv_backward(grad_out, cache, params, prefix, levels):
    """Gradients of wtconv_forward w.r.t. the input and every parameter.

    cache is the second return of wtconv_forward(..., save_cache=True).
    Returns (grad_x, grads) where grads maps full parameter names to arrays.
    """
    x = cache["x"]

    def p(name):
        return params[f"{prefix}.{name}"]

    grads = {}

    def g(name, value):
        grads[f"{prefix}.{name}"] = value

    def cascade_back(gz, lev):
        rec = cache["levels"][levels - 1 - lev]  # appended deepest-first
        in_shape = rec["in_shape"]
        padded_shape = (in_shape[-2] + rec["pads"][0], in_shape[-1] + rec["pads"][1])
        # adjoint of the final crop: zero-extend, then adjoint of idwt2 = dwt2
        if gz.shape[-2:] != padded_shape:
            wide = np.zeros(gz.shape[:-2] + padded_shape, dtype=gz.dtype)
            wide[..., : gz.shape[-2], : gz.shape[-1]] = gz
            gz = wide
        g_inner, g_lh, g_hl, g_hh = haar_dwt2(gz)
        band_grads = {}
        for name, gband in zip(DETAIL_NAMES, (g_lh, g_hl, g_hh)):
            gain = p(f"level{lev}.{name}.gain")
            g(f"level{lev}.{name}.gain",
              np.sum(gband * rec["conv_outs"][name], axis=(0, 2, 3)))
            gconv = gband * gain.reshape(1, -1, 1, 1)
            gx_band, gk, gb = depthwise_conv2d_backward(
                gconv, rec["bands"][name], p(f"level{lev}.{name}.kernel"))
            g(f"level{lev}.{name}.kernel", gk)
            g(f"level{lev}.{name}.bias", gb)
            band_grads[name] = gx_band
        if lev == levels - 1:
            gain = p(f"level{lev}.ll.gain")
            g(f"level{lev}.ll.gain",
              np.sum(g_inner * rec["conv_outs"]["ll"], axis=(0, 2, 3)))
            gconv = g_inner * gain.reshape(1, -1, 1, 1)
            g_ll, gk, gb = depthwise_conv2d_backward(
                gconv, rec["bands"]["ll"], p(f"level{lev}.ll.kernel"))
            g(f"level{lev}.ll.kernel", gk)
            g(f"level{lev}.ll.bias", gb)
        else:
            g_ll = cascade_back(g_inner, lev + 1)
        # adjoint of dwt2 = idwt2, then fold the reflect padding
        gpad = haar_idwt2(g_ll, band_grads["lh"], band_grads["hl"], band_grads["hh"])
        return _fold_pad(gpad, rec["pads"])

    grad_x = cascade_back(grad_out, 0)
    gx_direct, gk, gb = depthwise_conv2d_backward(grad_out, x, p("direct.kernel"))
    g("direct.kernel", gk)
    g("direct.bias", gb)
    return grad_x + gx_direct, grads
