"""Finite-difference checks of every analytic gradient, at 64-bit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import diffcore as dc
from .. import spatial_attention as sa
from ..rvgg import ModelSpec, build_rvgg

STEP = 1e-5
KERNEL_TOL = 1e-4
COMPOSITE_TOL = 1e-3
# entries whose true and numeric gradients are both below this are compared absolutely
FLOOR = 1e-6


@dataclass
class CheckResult:
    kernel: str
    max_rel_error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return bool(self.max_rel_error <= self.tolerance)


def numerical_grad(f, x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _max_err(pairs) -> float:
    return max(rel_error(a, n) for a, n in pairs)


def check_conv2d(rng) -> float:
    x = rng.normal(size=(2, 2, 5, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    dy = rng.normal(size=(2, 3, 5, 6))
    f = lambda: float((dc.conv2d_3x3(x, w, b)[0] * dy).sum())
    _, cache = dc.conv2d_3x3(x, w, b)
    dx, dw, db = dc.conv2d_3x3_backward(dy, cache)
    return _max_err([(dx, numerical_grad(f, x)), (dw, numerical_grad(f, w)), (db, numerical_grad(f, b))])


def check_maxpool(rng) -> float:
    x = rng.normal(size=(2, 3, 5, 7))
    dy = rng.normal(size=(2, 3, 3, 4))
    f = lambda: float((dc.maxpool2x2_ceil(x)[0] * dy).sum())
    _, cache = dc.maxpool2x2_ceil(x)
    return rel_error(dc.maxpool2x2_ceil_backward(dy, cache), numerical_grad(f, x))


def check_dense(rng) -> float:
    x = rng.normal(size=(3, 7))
    w = rng.normal(size=(4, 7))
    b = rng.normal(size=4)
    dy = rng.normal(size=(3, 4))
    f = lambda: float((dc.dense(x, w, b)[0] * dy).sum())
    _, cache = dc.dense(x, w, b)
    dx, dw, db = dc.dense_backward(dy, cache)
    return _max_err([(dx, numerical_grad(f, x)), (dw, numerical_grad(f, w)), (db, numerical_grad(f, b))])


def check_relu(rng) -> float:
    # keep inputs away from the kink so the finite difference is well defined
    x = rng.normal(size=(4, 9))
    x = np.where(np.abs(x) < 0.05, 0.5, x)
    dy = rng.normal(size=x.shape)
    f = lambda: float((dc.relu(x)[0] * dy).sum())
    _, mask = dc.relu(x)
    return rel_error(dc.relu_backward(dy, mask), numerical_grad(f, x))


def check_dropout(rng) -> float:
    x = rng.normal(size=(4, 9))
    dy = rng.normal(size=x.shape)
    seed = int(rng.integers(1 << 31))
    f = lambda: float((dc.dropout50(x, np.random.default_rng(seed), True)[0] * dy).sum())
    _, mask = dc.dropout50(x, np.random.default_rng(seed), True)
    return rel_error(dc.dropout50_backward(dy, mask), numerical_grad(f, x))


def check_softmax_ce(rng) -> float:
    z = rng.normal(size=(5, 2)) * 2
    y = rng.integers(0, 2, size=5)
    f = lambda: dc.softmax_cross_entropy(z, y)[0]
    return rel_error(dc.softmax_cross_entropy(z, y)[1], numerical_grad(f, z))


def _attention_instance(rng):
    params = sa.SpatialAttentionParams(rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 4, 4)),
                                       rng.normal(size=(2, 2)), rng.normal(size=2))
    coords = rng.uniform(0.1, 0.9, size=(5, 2))
    X = rng.normal(size=(2, 5, 3))
    dY = rng.normal(size=(2, 2, 3))
    drop = sa.DropRegion(tuple(coords[0]), 0.1, True)
    return params, coords, X, dY, drop


def check_spatial_attention(rng) -> float:
    params, coords, X, dY, drop = _attention_instance(rng)
    f = lambda: float((sa.spatial_attention_forward(params, coords, X, drop)[0] * dY).sum())
    _, cache = sa.spatial_attention_forward(params, coords, X, drop)
    dX, d_re, d_im, _, _ = sa.spatial_attention_backward(cache, dY)
    return _max_err([(dX, numerical_grad(f, X)), (d_re, numerical_grad(f, params.re)),
                     (d_im, numerical_grad(f, params.im))])


def check_attention_mixing(rng) -> float:
    params, coords, X, dY, drop = _attention_instance(rng)
    f = lambda: float((sa.spatial_attention_forward(params, coords, X, drop)[0] * dY).sum())
    _, cache = sa.spatial_attention_forward(params, coords, X, drop)
    _, _, _, d_w, d_b = sa.spatial_attention_backward(cache, dY)
    return _max_err([(d_w, numerical_grad(f, params.mix_w)), (d_b, numerical_grad(f, params.mix_b))])


def check_composite(rng) -> float:
    """End-to-end check of attention + R-VGG at scale 8, T=32, C=6, D1=4, K=4."""
    spec = ModelSpec(input_shape=(1, 6, 32), scale=8, use_attention=True, attention_D1=4, attention_K=4)
    model = build_rvgg(spec, rng=rng, dtype=np.float64)
    # zero biases leave dead patches exactly on the ReLU kink; use a generic point
    for name, p in model.params.items():
        if name.endswith(".b"):
            p[...] = rng.normal(0.0, 0.1, size=p.shape)
    coords = rng.uniform(0.1, 0.9, size=(6, 2))
    X = rng.normal(size=(2, 6, 32))
    y = np.array([0, 1])
    loss = lambda: dc.softmax_cross_entropy(model.forward(X, coords, training=False), y)[0]
    logits = model.forward(X, coords, training=False)
    grads = model.backward(dc.softmax_cross_entropy(logits, y)[1])
    return _max_err([(grads[k], numerical_grad(loss, p)) for k, p in model.params.items()])


KERNELS = (
    ("conv2d_3x3", check_conv2d, KERNEL_TOL),
    ("maxpool2x2_ceil", check_maxpool, KERNEL_TOL),
    ("dense", check_dense, KERNEL_TOL),
    ("relu", check_relu, KERNEL_TOL),
    ("dropout50", check_dropout, KERNEL_TOL),
    ("softmax_cross_entropy", check_softmax_ce, KERNEL_TOL),
    ("spatial_attention", check_spatial_attention, KERNEL_TOL),
    ("attention_mixing_1x1", check_attention_mixing, KERNEL_TOL),
    ("rvgg_composite", check_composite, COMPOSITE_TOL),
)


def gradcheck_all(seed: int = 0) -> list[CheckResult]:
    results = []
    for i, (name, fn, tol) in enumerate(KERNELS):
        err = fn(np.random.default_rng([seed, i]))
        results.append(CheckResult(name, err, tol))
    return results


def format_report(results) -> str:
    lines = []
    for r in results:
        status = "ok" if r.ok else "FAIL"
        lines.append(f"{r.kernel:<24s} max_rel_err={r.max_rel_error:.3e}  tol={r.tolerance:.0e}  {status}")
    return "\n".join(lines)
