"""Fourier-parameterized spatial attention over sensor layouts.

Each output channel ``j`` owns a complex K x K coefficient matrix. Its real
and imaginary parts weight a truncated 2-D Fourier basis evaluated at every
input sensor's normalized layout position; a softmax over sensors turns the
scores into mixing weights. Nothing here depends on the number of input
sensors, which is what lets one parameter set consume any montage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

DROP_RADIUS = 0.1


class ShapeError(ValueError):
    pass


def attention_reference(Q, Kmat, V):
    """Generic dot-product attention: softmax(Q @ K.T, axis=-1) @ V."""
    Q = np.asarray(Q, dtype=float)
    Kmat = np.asarray(Kmat, dtype=float)
    V = np.asarray(V, dtype=float)
    if Q.ndim != 2 or Kmat.ndim != 2 or V.ndim != 2:
        raise ShapeError("Q, K and V must be matrices")
    if Q.shape[1] != Kmat.shape[1]:
        raise ShapeError(f"Q {Q.shape} and K {Kmat.shape} inner dimensions differ")
    if V.shape[0] != Kmat.shape[0]:
        raise ShapeError(f"V has {V.shape[0]} rows, K has {Kmat.shape[0]}")
    scores = Q @ Kmat.T
    scores = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return (e / e.sum(axis=-1, keepdims=True)) @ V


@dataclass
class SpatialAttentionParams:
    """Per-output-channel Fourier coefficients plus the 1x1 output mixing.

    ``re[j, k-1, l-1]`` and ``im[j, k-1, l-1]`` hold the real and imaginary
    parts of the coefficient for spatial frequency (k, l), k, l = 1..K.
    """

    re: np.ndarray
    im: np.ndarray
    mix_w: np.ndarray
    mix_b: np.ndarray

    def __post_init__(self):
        if self.re.ndim != 3 or self.re.shape[1] != self.re.shape[2]:
            raise ShapeError(f"re must be [D1, K, K], got {self.re.shape}")
        D1, K = self.re.shape[0], self.re.shape[1]
        if self.im.shape != self.re.shape:
            raise ShapeError(f"im shape {self.im.shape} != re shape {self.re.shape}")
        if self.mix_w.shape != (D1, D1) or self.mix_b.shape != (D1,):
            raise ShapeError(f"mixing shapes {self.mix_w.shape}, {self.mix_b.shape} do not match D1={D1}")
        for name in ("re", "im", "mix_w", "mix_b"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")

    @property
    def D1(self) -> int:
        return self.re.shape[0]

    @property
    def K(self) -> int:
        return self.re.shape[1]

    @classmethod
    def init(cls, D1: int, K: int = 32, rng=None, dtype=np.float64):
        """Gaussian coefficients with std 1/K; mixing near identity, zero bias."""
        rng = np.random.default_rng(rng)
        re = rng.normal(0.0, 1.0 / K, size=(D1, K, K))
        im = rng.normal(0.0, 1.0 / K, size=(D1, K, K))
        mix_w = np.eye(D1) + rng.normal(0.0, 0.01, size=(D1, D1))
        return cls(re.astype(dtype), im.astype(dtype), mix_w.astype(dtype), np.zeros(D1, dtype=dtype))

    @classmethod
    def zeros(cls, D1: int, K: int):
        return cls(np.zeros((D1, K, K)), np.zeros((D1, K, K)), np.eye(D1), np.zeros(D1))

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"re": self.re, "im": self.im, "mix_w": self.mix_w, "mix_b": self.mix_b}

    def num_parameters(self) -> int:
        return sum(a.size for a in self.as_dict().values())


def fourier_basis(coords, K: int):
    """cos and sin of 2*pi*(k*x + l*y) for k, l = 1..K; each [K*K, C]."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    freqs = np.arange(1, K + 1, dtype=np.float64)
    # phase[k, l, i] = 2*pi*(k*x_i + l*y_i)
    phase = 2.0 * np.pi * (freqs[:, None, None] * coords[None, None, :, 0]
                           + freqs[None, :, None] * coords[None, None, :, 1])
    phase = phase.reshape(K * K, -1)
    return np.cos(phase), np.sin(phase)


def fourier_scores(params: SpatialAttentionParams, coords, basis=None) -> np.ndarray:
    """Scores a_j(x_i, y_i) for every output j and sensor i, shape [D1, C]."""
    cosb, sinb = basis if basis is not None else fourier_basis(coords, params.K)
    D1, KK = params.D1, params.K * params.K
    dtype = params.re.dtype
    return params.re.reshape(D1, KK) @ cosb.astype(dtype) + params.im.reshape(D1, KK) @ sinb.astype(dtype)


def fourier_score(params: SpatialAttentionParams, j: int, x: float, y: float) -> float:
    if not 0 <= j < params.D1:
        raise IndexError(f"output index {j} out of range for D1={params.D1}")
    if not (np.isfinite(x) and np.isfinite(y)):
        raise ValueError("coordinates must be finite")
    return float(fourier_scores(params, [[x, y]])[j, 0])


@dataclass(frozen=True)
class DropRegion:
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = DROP_RADIUS
    enabled: bool = True

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("drop radius must be non-negative")

    @classmethod
    def disabled(cls):
        return cls(enabled=False)

    def dropped(self, coords) -> np.ndarray:
        """Boolean mask of sensors strictly closer than ``radius`` to the center."""
        coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
        if not self.enabled:
            return np.zeros(len(coords), dtype=bool)
        d = np.hypot(coords[:, 0] - self.center[0], coords[:, 1] - self.center[1])
        return d < self.radius


def sample_drop_region(coords, rng, radius: float = DROP_RADIUS) -> DropRegion:
    """Center a drop region on a uniformly chosen sensor location."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    if len(coords) == 0:
        raise ValueError("coords must be nonempty")
    i = int(rng.integers(len(coords)))
    region = DropRegion((float(coords[i, 0]), float(coords[i, 1])), radius, True)
    if region.dropped(coords).all():
        return DropRegion((region.center), radius, False)
    return region


def keep_mask(coords, D1: int, drop=None) -> np.ndarray:
    """[D1, C] mask of sensors that take part in each output's softmax.

    ``drop`` may be None, one DropRegion shared by all outputs, or a sequence
    of D1 regions. An output whose region would remove every sensor keeps all.
    """
    C = np.asarray(coords).reshape(-1, 2).shape[0]
    if drop is None:
        regions = [DropRegion.disabled()] * D1
    elif isinstance(drop, DropRegion):
        regions = [drop] * D1
    else:
        regions = list(drop)
        if len(regions) != D1:
            raise ShapeError(f"expected {D1} drop regions, got {len(regions)}")
    keep = np.ones((D1, C), dtype=bool)
    for j, region in enumerate(regions):
        row = ~region.dropped(coords)
        if row.any():
            keep[j] = row
    return keep


def spatial_attention_forward(params: SpatialAttentionParams, coords, X, drop=None, basis=None):
    """Attention-weighted channel mixing followed by the 1x1 output mixing.

    ``X`` is [C, T] or a montage-homogeneous batch [N, C, T]. Returns
    ``(Y, cache)`` with ``Y`` shaped like ``X`` but with D1 channels.
    """
    X = np.asarray(X)
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    single = X.ndim == 2
    Xb = X[None] if single else X
    if Xb.ndim != 3:
        raise ShapeError(f"X must be [C, T] or [N, C, T], got {X.shape}")
    C = Xb.shape[1]
    if C == 0:
        raise ShapeError("at least one input channel required")
    if coords.shape[0] != C:
        raise ShapeError(f"{coords.shape[0]} coordinates for {C} channels")
    if np.isnan(Xb).any():
        raise ValueError("NaN in input signal")

    if basis is None:
        basis = fourier_basis(coords, params.K)
    scores = fourier_scores(params, coords, basis)
    keep = keep_mask(coords, params.D1, drop)
    masked = np.where(keep, scores, -np.inf)
    masked = masked - masked.max(axis=1, keepdims=True)
    e = np.exp(masked)
    w = e / e.sum(axis=1, keepdims=True)
    w = w.astype(params.re.dtype)

    sa = np.matmul(w, Xb)                                     # [N, D1, T]
    Y = np.matmul(params.mix_w, sa) + params.mix_b[:, None]
    cache = {"params": params, "basis": basis, "w": w, "keep": keep, "X": Xb, "sa": sa, "single": single}
    return (Y[0] if single else Y), cache


def spatial_attention_backward(cache, dY):
    """Gradients of <dY, Y> w.r.t. X, re, im, mix_w and mix_b."""
    params: SpatialAttentionParams = cache["params"]
    Xb, sa, w = cache["X"], cache["sa"], cache["w"]
    dY = np.asarray(dY)
    dYb = dY[None] if cache["single"] else dY
    expected = (Xb.shape[0], params.D1, Xb.shape[2])
    if dYb.shape != expected:
        raise ShapeError(f"dY shape {dY.shape} does not match forward output {expected}")

    d_mix_b = dYb.sum(axis=(0, 2))
    d_mix_w = np.tensordot(dYb, sa, axes=([0, 2], [0, 2]))
    dsa = np.matmul(params.mix_w.T, dYb)                      # [N, D1, T]
    dX = np.matmul(w.T, dsa)                                  # [N, C, T]
    dw = np.tensordot(dsa, Xb, axes=([0, 2], [0, 2]))         # [D1, C]
    # softmax Jacobian; dropped sensors have w == 0 and get nothing
    da = w * (dw - (w * dw).sum(axis=1, keepdims=True))
    cosb, sinb = cache["basis"]
    K = params.K
    d_re = (da @ cosb.T.astype(da.dtype)).reshape(params.D1, K, K)
    d_im = (da @ sinb.T.astype(da.dtype)).reshape(params.D1, K, K)
    if cache["single"]:
        dX = dX[0]
    return dX, d_re, d_im, d_mix_w, d_mix_b
