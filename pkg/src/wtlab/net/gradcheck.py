"""Central finite-difference verification of the analytic gradients.

Each registered block defines a scalar probe together with analytic
gradients for its inputs and parameters; loss blocks probe the loss value
itself, tensor blocks a weighted sum of their outputs. The weighting is a
fixed seeded draw rather than all-ones because a plain sum annihilates the
detail-band contributions of the wavelet cascade (the synthesis of a pure
detail subband sums to zero), which would leave those parameters with an
exactly-zero probe gradient and nothing to verify. The harness perturbs
sampled coordinates one at a time and compares, in 64-bit arithmetic, at
step 1e-4.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..loss import LossWeights, l_total, l_total_grad
from ..spatial import si_snr, si_snr_grad
from .mca import eca_kernel_size, mca_backward, mca_forward
from .wavelet import wtconv_backward, wtconv_forward, wtconv_param_names

GRADCHECK_BLOCKS = ("wtconv", "mca", "cirm", "sisnr", "ltotal")
FD_STEP = 1e-4


@dataclass
class GradCheckResult:
    block: str
    max_rel_error: float
    num_coords: int
    elapsed_s: float
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and self.max_rel_error < 1e-4


def _rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def _run_case(block, tensors, probe, grads, num_coords, seed, step=FD_STEP):
    """Compare analytic grads against central differences on sampled coords.

    tensors: list of (name, array); probe(): scalar from current tensor
    values; grads: name -> analytic gradient array.
    """
    start = time.perf_counter()
    rng = np.random.default_rng([seed, 0xFD])
    sizes = [t.size for _, t in tensors]
    total = sum(sizes)
    picks = rng.choice(total, size=min(num_coords, total), replace=False)
    failures = []
    max_rel = 0.0
    for flat in np.sort(picks):
        for (name, tensor), size in zip(tensors, sizes):
            if flat < size:
                break
            flat -= size
        idx = np.unravel_index(int(flat), tensor.shape)
        analytic = float(grads[name][idx])
        if not math.isfinite(analytic):
            failures.append((name, idx, analytic))
            continue
        keep = tensor[idx]
        tensor[idx] = keep + step
        up = probe()
        tensor[idx] = keep - step
        down = probe()
        tensor[idx] = keep
        numeric = (up - down) / (2.0 * step)
        max_rel = max(max_rel, _rel_err(analytic, numeric))
    return GradCheckResult(block, max_rel, len(picks),
                           time.perf_counter() - start, failures)


def _check_wtconv(seed, num_coords):
    rng = np.random.default_rng([seed, 0x37C])
    x = rng.standard_normal((1, 4, 16, 16))
    levels = 2
    prefix = "wtconv"
    params = {}
    for suffix in wtconv_param_names(levels):
        name = f"{prefix}.{suffix}"
        if suffix.endswith(".kernel"):
            params[name] = 0.3 * rng.standard_normal((4, 5, 5))
        elif suffix.endswith(".bias"):
            params[name] = 0.1 * rng.standard_normal(4)
        else:
            params[name] = 1.0 + 0.2 * rng.standard_normal(4)

    out, cache = wtconv_forward(x, params, prefix, levels, save_cache=True)
    weights = rng.standard_normal(out.shape)
    gx, gp = wtconv_backward(weights, cache, params, prefix, levels)
    grads = dict(gp)
    grads["x"] = gx
    tensors = [("x", x)] + sorted(params.items())

    def probe():
        return float((weights * wtconv_forward(x, params, prefix, levels)).sum())

    return _run_case("wtconv", tensors, probe, grads, num_coords, seed)


def _check_mca(seed, num_coords):
    rng = np.random.default_rng([seed, 0x3CA])
    x = rng.standard_normal((1, 8, 10, 12))
    dims = {"channel": 8, "freq": 10, "time": 12}
    prefix = "mca"
    params = {}
    for name, dim in dims.items():
        k = eca_kernel_size(dim)
        params[f"{prefix}.{name}.weight"] = 0.5 * rng.standard_normal((2, k))
        params[f"{prefix}.{name}.bias"] = np.asarray(0.1 * rng.standard_normal())

    out, cache = mca_forward(x, params, prefix, save_cache=True)
    weights = rng.standard_normal(out.shape)
    gx, gp = mca_backward(weights, cache, params, prefix)
    grads = dict(gp)
    grads["x"] = gx
    tensors = [("x", x)] + sorted(params.items())

    def probe():
        return float((weights * mca_forward(x, params, prefix)).sum())

    return _run_case("mca", tensors, probe, grads, num_coords, seed)


def _check_cirm(seed, num_coords):
    rng = np.random.default_rng([seed, 0xC1])
    parts = {
        "mask_re": rng.standard_normal((2, 9, 11)),
        "mask_im": rng.standard_normal((2, 9, 11)),
        "spec_re": rng.standard_normal((2, 9, 11)),
        "spec_im": rng.standard_normal((2, 9, 11)),
    }
    w_re = rng.standard_normal((2, 9, 11))
    w_im = rng.standard_normal((2, 9, 11))
    # probe = sum w_re * Re(mask * spec) + w_im * Im(mask * spec)
    grads = {
        "mask_re": w_re * parts["spec_re"] + w_im * parts["spec_im"],
        "mask_im": w_im * parts["spec_re"] - w_re * parts["spec_im"],
        "spec_re": w_re * parts["mask_re"] + w_im * parts["mask_im"],
        "spec_im": w_im * parts["mask_re"] - w_re * parts["mask_im"],
    }

    def probe():
        mask = parts["mask_re"] + 1j * parts["mask_im"]
        spec = parts["spec_re"] + 1j * parts["spec_im"]
        out = mask * spec
        return float((w_re * out.real).sum() + (w_im * out.imag).sum())

    return _run_case("cirm", sorted(parts.items()), probe, grads,
                     num_coords, seed)


def _check_sisnr(seed, num_coords):
    rng = np.random.default_rng([seed, 0x515])
    ref = rng.standard_normal(400)
    est = ref + 0.5 * rng.standard_normal(400)
    _, grad = si_snr_grad(est, ref)

    def probe():
        return si_snr(est, ref)

    return _run_case("sisnr", [("est", est)], probe, {"est": grad},
                     num_coords, seed)


def _check_ltotal(seed, num_coords):
    rng = np.random.default_rng([seed, 0x707])
    lns, lps = float(rng.uniform(0.1, 3.0)), float(rng.uniform(0.1, 3.0))
    results = []
    for literal in (False, True):
        logs = rng.uniform(-1.0, 1.0, size=2)

        def probe():
            w = LossWeights(math.exp(logs[0]), math.exp(logs[1]),
                            literal_eq4=literal)
            return l_total(lns, lps, w)

        w = LossWeights(math.exp(logs[0]), math.exp(logs[1]), literal_eq4=literal)
        _, g1, g2 = l_total_grad(lns, lps, w)
        name = "literal" if literal else "default"
        results.append(_run_case(f"ltotal-{name}", [(name, logs)], probe,
                                 {name: np.array([g1, g2])}, num_coords, seed))
    merged = GradCheckResult(
        "ltotal",
        max(r.max_rel_error for r in results),
        sum(r.num_coords for r in results),
        sum(r.elapsed_s for r in results),
        [f for r in results for f in r.failures],
    )
    return merged


_CHECKS = {
    "wtconv": _check_wtconv,
    "mca": _check_mca,
    "cirm": _check_cirm,
    "sisnr": _check_sisnr,
    "ltotal": _check_ltotal,
}


def grad_check(block: str, seed: int = 0, num_coords: int = 120) -> GradCheckResult:
    """Finite-difference check of one registered block.

    Returns a GradCheckResult; non-finite analytic gradients land in
    result.failures with their coordinate.
    """
    if block not in _CHECKS:
        raise ValueError(
            f"unknown block {block!r}: choose from {', '.join(GRADCHECK_BLOCKS)}"
        )
    return _CHECKS[block](seed, num_coords)
