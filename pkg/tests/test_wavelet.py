"""Haar analysis/synthesis and the wavelet-conv cascade."""

import numpy as np
import pytest
from scipy.signal import correlate2d

from wtlab.net.wavelet import (
    haar_dwt2,
    haar_idwt2,
    max_wt_levels,
    wtconv_backward,
    wtconv_forward,
    wtconv_param_names,
)


def identity_params(channels, levels, prefix="w"):
    params = {}
    for suffix in wtconv_param_names(levels):
        name = f"{prefix}.{suffix}"
        if suffix.endswith(".kernel"):
            k = np.zeros((channels, 5, 5))
            k[:, 2, 2] = 1.0
            params[name] = k
        elif suffix.endswith(".bias"):
            params[name] = np.zeros(channels)
        else:
            params[name] = np.ones(channels)
    return params


def random_params(channels, levels, seed, prefix="w"):
    rng = np.random.default_rng(seed)
    params = {}
    for suffix in wtconv_param_names(levels):
        name = f"{prefix}.{suffix}"
        if suffix.endswith(".kernel"):
            params[name] = 0.4 * rng.standard_normal((channels, 5, 5))
        elif suffix.endswith(".bias"):
            params[name] = 0.2 * rng.standard_normal(channels)
        else:
            params[name] = 1.0 + 0.3 * rng.standard_normal(channels)
    return params


# ------------------------------------------------------- reference operators

def haar_matrices(n):
    """Orthonormal 1-D Haar analysis rows: lowpass H [n/2 x n], highpass G."""
    h = np.zeros((n // 2, n))
    g = np.zeros((n // 2, n))
    for i in range(n // 2):
        h[i, 2 * i] = h[i, 2 * i + 1] = 1.0 / np.sqrt(2.0)
        g[i, 2 * i] = 1.0 / np.sqrt(2.0)
        g[i, 2 * i + 1] = -1.0 / np.sqrt(2.0)
    return h, g


def ref_dwt2(x2d):
    hf, gf = haar_matrices(x2d.shape[0])
    ht, gt = haar_matrices(x2d.shape[1])
    return (hf @ x2d @ ht.T, hf @ x2d @ gt.T,
            gf @ x2d @ ht.T, gf @ x2d @ gt.T)


def ref_idwt2(ll, lh, hl, hh, shape):
    hf, gf = haar_matrices(shape[0])
    ht, gt = haar_matrices(shape[1])
    return hf.T @ ll @ ht + hf.T @ lh @ gt + gf.T @ hl @ ht + gf.T @ hh @ gt


def ref_conv(x2d, kernel):
    return correlate2d(x2d, kernel, mode="same", boundary="fill")


def ref_wtconv(x, params, prefix, levels):
    """Brute-force composition with explicit Haar matrices and scipy convs."""
    b, c = x.shape[:2]
    out = np.zeros_like(x)

    def band_conv(band, name, lev):
        k = params[f"{prefix}.level{lev}.{name}.kernel"]
        bias = params[f"{prefix}.level{lev}.{name}.bias"]
        gain = params[f"{prefix}.level{lev}.{name}.gain"]
        got = np.stack([ref_conv(band[bi, ci], k[ci]) + bias[ci]
                        for bi in range(b) for ci in range(c)])
        return got.reshape(band.shape) * gain.reshape(1, -1, 1, 1)

    def cascade(inp, lev):
        subs = [np.stack([ref_dwt2(inp[bi, ci])[s] for bi in range(b)
                          for ci in range(c)]).reshape(inp.shape[:2] + (-1, inp.shape[-1] // 2))
                for s in range(4)]
        ll, lh, hl, hh = subs
        d_lh = band_conv(lh, "lh", lev)
        d_hl = band_conv(hl, "hl", lev)
        d_hh = band_conv(hh, "hh", lev)
        if lev == levels - 1:
            inner = band_conv(ll, "ll", lev)
        else:
            inner = cascade(ll, lev + 1)
        rec = np.stack([
            ref_idwt2(inner[bi, ci], d_lh[bi, ci], d_hl[bi, ci], d_hh[bi, ci],
                      inp.shape[2:])
            for bi in range(b) for ci in range(c)
        ])
        return rec.reshape(inp.shape)

    direct_k = params[f"{prefix}.direct.kernel"]
    direct_b = params[f"{prefix}.direct.bias"]
    for bi in range(b):
        for ci in range(c):
            out[bi, ci] = ref_conv(x[bi, ci], direct_k[ci]) + direct_b[ci]
    return out + cascade(x, 0)


# ------------------------------------------------------------------- dwt2

def test_dwt_constant_input():
    ll, lh, hl, hh = haar_dwt2(np.full((1, 1, 8, 8), 3.0))
    assert np.allclose(ll, 6.0)
    assert np.allclose(lh, 0.0) and np.allclose(hl, 0.0) and np.allclose(hh, 0.0)


def test_dwt_unit_patch():
    ll, lh, hl, hh = haar_dwt2(np.ones((2, 2)))
    assert ll.item() == pytest.approx(2.0)
    assert lh.item() == hl.item() == hh.item() == 0.0


def test_dwt_matches_matrix_reference():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((6, 10))
    got = haar_dwt2(x)
    want = ref_dwt2(x)
    for g, w in zip(got, want):
        assert np.max(np.abs(g - w)) < 1e-12


def test_dwt_round_trip_even_and_odd():
    rng = np.random.default_rng(1)
    for shape in ((2, 3, 16, 16), (1, 1, 9, 13), (1, 2, 8, 5)):
        x = rng.standard_normal(shape)
        rec = haar_idwt2(*haar_dwt2(x), out_shape=shape)
        assert np.max(np.abs(rec - x)) <= 1e-9 * max(1.0, np.max(np.abs(x)))


def test_dwt_energy_preserved_even_extents():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 4, 32, 20))
    bands = haar_dwt2(x)
    e_bands = sum(float(np.sum(band ** 2)) for band in bands)
    e_x = float(np.sum(x ** 2))
    assert abs(e_bands - e_x) <= 1e-9 * e_x


def test_idwt_zero_and_ll_only():
    z = np.zeros((1, 1, 4, 4))
    assert np.allclose(haar_idwt2(z, z, z, z), 0.0)
    c = np.full((1, 1, 4, 4), 5.0)
    out = haar_idwt2(c, np.zeros_like(c), np.zeros_like(c), np.zeros_like(c))
    assert np.allclose(out, 2.5)


def test_idwt_rejects_mismatched_subbands():
    ll = np.zeros((1, 1, 4, 4))
    bad = np.zeros((1, 1, 4, 5))
    with pytest.raises(ValueError, match="hl"):
        haar_idwt2(ll, ll, bad, ll)


def test_max_wt_levels():
    assert max_wt_levels(16, 16) == 4
    assert max_wt_levels(2, 2) == 1
    assert max_wt_levels(1, 16) == 0
    assert max_wt_levels(161, 401) == 8


# ----------------------------------------------------------------- wtconv

def test_wtconv_identity_doubles_input():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 3, 16, 16))
    params = identity_params(3, 2)
    out = wtconv_forward(x, params, "w", 2)
    assert np.max(np.abs(out - 2.0 * x)) < 1e-12


def test_wtconv_zero_input_zero_output():
    params = identity_params(2, 1)
    out = wtconv_forward(np.zeros((1, 2, 8, 8)), params, "w", 1)
    assert np.allclose(out, 0.0)


def test_wtconv_matches_dense_operator_oracle():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 2, 16, 16))
    params = random_params(2, 2, seed=5)
    got = wtconv_forward(x, params, "w", 2)
    want = ref_wtconv(x, params, "w", 2)
    assert np.max(np.abs(got - want)) <= 1e-9


def test_wtconv_odd_extents_round_trip_structure():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((1, 2, 11, 17))
    out = wtconv_forward(x, identity_params(2, 2), "w", 2)
    assert np.max(np.abs(out - 2.0 * x)) < 1e-12


def test_wtconv_rejects_infeasible_levels():
    with pytest.raises(ValueError, match="at most 2"):
        wtconv_forward(np.zeros((1, 1, 4, 4)), identity_params(1, 3), "w", 3)


def test_wtconv_backward_full_fd():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((1, 2, 8, 8))
    params = random_params(2, 2, seed=8)
    out, cache = wtconv_forward(x, params, "w", 2, save_cache=True)
    weights = rng.standard_normal(out.shape)
    gx, gp = wtconv_backward(weights, cache, params, "w", 2)

    def probe():
        return float((weights * wtconv_forward(x, params, "w", 2)).sum())

    h = 1e-6
    for name, tensor in [("x", x)] + sorted(params.items()):
        grad = gx if name == "x" else gp[name]
        flat_idx = rng.choice(tensor.size, size=min(12, tensor.size), replace=False)
        for flat in flat_idx:
            idx = np.unravel_index(int(flat), tensor.shape)
            keep = tensor[idx]
            tensor[idx] = keep + h
            up = probe()
            tensor[idx] = keep - h
            down = probe()
            tensor[idx] = keep
            num = (up - down) / (2 * h)
            assert abs(grad[idx] - num) <= 1e-7 * max(1.0, abs(num)), name
