"""Reduced VGG classifier (R-VGG) with an optional spatial-attention front end."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import diffcore as dc
from .spatial_attention import (
    SpatialAttentionParams,
    fourier_basis,
    spatial_attention_backward,
    spatial_attention_forward,
)

# (kind, width); widths are divided by ModelSpec.scale except the output layer
RVGG_LAYERS = (
    ("conv", 16), ("conv", 16), ("pool", None),
    ("conv", 32), ("conv", 32), ("pool", None),
    ("conv", 64), ("conv", 64), ("conv", 64), ("pool", None),
    ("fc", 1024), ("dropout", None),
    ("fc", 1024), ("dropout", None),
    ("out", 2),
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Layer-by-layer description of the network.

    ``input_shape`` is (planes, channels, time). With attention enabled the
    channel extent seen by the convolutional trunk is ``attention_D1``.
    """

    input_shape: tuple = (1, 23, 256)
    scale: int = 1
    use_attention: bool = False
    attention_D1: int = 16
    attention_K: int = 32
    attention_bias: bool = True
    layers: tuple = RVGG_LAYERS

    def __post_init__(self):
        shape = tuple(int(v) for v in self.input_shape)
        if len(shape) != 3 or min(shape) < 1:
            raise ConfigError(f"input_shape must be 3 positive extents, got {self.input_shape}")
        if self.scale < 1:
            raise ConfigError("scale must be >= 1")
        if self.use_attention:
            if self.attention_D1 < 1 or self.attention_K < 1:
                raise ConfigError("attention D1 and K must be >= 1")
            shape = (shape[0], self.attention_D1, shape[2])
        object.__setattr__(self, "input_shape", shape)
        object.__setattr__(self, "layers", tuple(tuple(l) for l in self.layers))
        for kind, width in self.scaled_layers():
            if width is not None and width < 1:
                raise ConfigError(f"{kind} layer width drops below 1 at scale {self.scale}")

    def scaled_layers(self):
        out = []
        for kind, width in self.layers:
            if kind in ("conv", "fc"):
                width = width // self.scale
            out.append((kind, width))
        return out

    def shapes(self):
        """Input shape of every layer and the final output width."""
        c, h, w = self.input_shape
        flat = None
        trace = []
        for kind, width in self.scaled_layers():
            trace.append((kind, (c, h, w) if flat is None else (flat,)))
            if kind == "conv":
                c = width
            elif kind == "pool":
                h, w = -(-h // 2), -(-w // 2)
            elif kind in ("fc", "out"):
                if flat is None:
                    flat = c * h * w
                flat = width
        return trace

    def flattened_size(self) -> int:
        for kind, shape in self.shapes():
            if kind in ("fc", "out"):
                return int(np.prod(shape)) if len(shape) == 3 else shape[0]
        raise ConfigError("model has no dense layer")


class RVGG:
    """R-VGG convolutional network with hand-written forward/backward."""

    def __init__(self, spec: ModelSpec, params: dict):
        self.spec = spec
        self.params = params
        self._layer_names = []
        conv_i = fc_i = 0
        for kind, _ in spec.scaled_layers():
            if kind == "conv":
                conv_i += 1
                self._layer_names.append(f"conv{conv_i}")
            elif kind in ("fc", "out"):
                fc_i += 1
                self._layer_names.append(f"fc{fc_i}")
            else:
                self._layer_names.append(kind)
        self._cache = None
        self._basis = {}
        self.want_input_grad = False

    # -- parameters -------------------------------------------------------

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def attention_params(self) -> SpatialAttentionParams:
        p = self.params
        D1 = self.spec.attention_D1
        bias = p["attn.mix_b"] if "attn.mix_b" in p else np.zeros(D1, dtype=self.dtype)
        return SpatialAttentionParams(p["attn.re"], p["attn.im"], p["attn.mix_w"], bias)

    def astype(self, dtype) -> "RVGG":
        return RVGG(self.spec, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "RVGG":
        return RVGG(self.spec, {k: v.copy() for k, v in self.params.items()})

    # -- forward / backward ----------------------------------------------

    def _basis_for(self, coords):
        key = np.asarray(coords, dtype=np.float64).tobytes()
        if key not in self._basis:
            self._basis[key] = fourier_basis(coords, self.spec.attention_K)
        return self._basis[key]

    def forward(self, X, coords=None, training=False, rng=None, drop=None):
        """Logits [N, 2] for a batch X [N, C, T] (or a single sample [C, T])."""
        X = np.asarray(X, dtype=self.dtype)
        single = X.ndim == 2
        if single:
            X = X[None]
        caches = []
        if self.spec.use_attention:
            if coords is None:
                raise ValueError("attention model needs sensor coordinates")
            h, attn_cache = spatial_attention_forward(
                self.attention_params(), coords, X, drop=drop if training else None,
                basis=self._basis_for(coords))
            caches.append(("attn", attn_cache))
        else:
            expected = self.spec.input_shape[1:]
            if X.shape[1:] != expected:
                raise dc.ShapeError(f"input {X.shape[1:]} does not match model input {expected}")
            h = X
        h = h[:, None]   # single-plane image: (channels, time)
        n_layers = len(self._layer_names)
        for idx, (name, (kind, _)) in enumerate(zip(self._layer_names, self.spec.scaled_layers())):
            if kind == "conv":
                h, c = dc.conv2d_3x3(h, self.params[f"{name}.w"], self.params[f"{name}.b"])
                h, mask = dc.relu(h)
                caches.append((kind, (c, mask)))
            elif kind == "pool":
                h, c = dc.maxpool2x2_ceil(h)
                caches.append((kind, c))
            elif kind == "dropout":
                h, mask = dc.dropout50(h, rng, training)
                caches.append((kind, mask))
            else:
                shape = h.shape
                if h.ndim > 2:
                    h = h.reshape(h.shape[0], -1)
                h, c = dc.dense(h, self.params[f"{name}.w"], self.params[f"{name}.b"])
                mask = None
                if kind == "fc" and idx < n_layers - 1:
                    h, mask = dc.relu(h)
                caches.append((kind, (c, mask, shape)))
        self._cache = (caches, single)
        return h[0] if single else h

    def backward(self, dlogits) -> dict:
        """Parameter gradients for upstream gradient ``dlogits``; also sets ``self.input_grad``."""
        caches, single = self._cache
        d = np.asarray(dlogits, dtype=self.dtype)
        if single:
            d = d[None]
        grads = {}
        names = self._layer_names
        trunk = caches[1:] if self.spec.use_attention else caches
        need_input_grad = self.spec.use_attention or self.want_input_grad
        for name, (kind, c) in zip(reversed(names), reversed(trunk)):
            if kind == "conv":
                conv_cache, mask = c
                d = dc.relu_backward(d, mask)
                first = name == "conv1"
                d, grads[f"{name}.w"], grads[f"{name}.b"] = dc.conv2d_3x3_backward(
                    d, conv_cache, need_input_grad=need_input_grad or not first)
                if d is None:
                    break
            elif kind == "pool":
                d = dc.maxpool2x2_ceil_backward(d, c)
            elif kind == "dropout":
                d = dc.dropout50_backward(d, c)
            else:
                dense_cache, mask, shape = c
                if mask is not None:
                    d = dc.relu_backward(d, mask)
                d, grads[f"{name}.w"], grads[f"{name}.b"] = dc.dense_backward(d, dense_cache)
                d = d.reshape(shape)
        if d is None:
            self.input_grad = None
            return {k: grads[k] for k in self.params}
        d = d[:, 0]
        if self.spec.use_attention:
            dX, d_re, d_im, d_mix_w, d_mix_b = spatial_attention_backward(caches[0][1], d)
            grads["attn.re"], grads["attn.im"], grads["attn.mix_w"] = d_re, d_im, d_mix_w
            if "attn.mix_b" in self.params:
                grads["attn.mix_b"] = d_mix_b
            d = dX
        self.input_grad = d[0] if single else d
        return {k: grads[k] for k in self.params}

    def predict(self, X, coords=None) -> np.ndarray:
        return np.argmax(self.forward(X, coords, training=False), axis=-1)


def build_rvgg(spec: ModelSpec, rng=None, dtype=np.float64) -> RVGG:
    """Network of ``spec`` with He-normal weights and zero biases."""
    rng = np.random.default_rng(rng)
    params = {}
    if spec.use_attention:
        attn = SpatialAttentionParams.init(spec.attention_D1, spec.attention_K, rng, dtype)
        params["attn.re"] = attn.re
        params["attn.im"] = attn.im
        params["attn.mix_w"] = attn.mix_w
        if spec.attention_bias:
            params["attn.mix_b"] = attn.mix_b
    conv_i = fc_i = 0
    for (kind, width), (_, shape_in) in zip(spec.scaled_layers(), spec.shapes()):
        if kind == "conv":
            conv_i += 1
            cin = shape_in[0]
            fan_in = cin * 9
            params[f"conv{conv_i}.w"] = rng.normal(0, np.sqrt(2.0 / fan_in), (width, cin, 3, 3)).astype(dtype)
            params[f"conv{conv_i}.b"] = np.zeros(width, dtype=dtype)
        elif kind in ("fc", "out"):
            fc_i += 1
            fan_in = int(np.prod(shape_in))
            params[f"fc{fc_i}.w"] = rng.normal(0, np.sqrt(2.0 / fan_in), (width, fan_in)).astype(dtype)
            params[f"fc{fc_i}.b"] = np.zeros(width, dtype=dtype)
    return RVGG(spec, params)


def attach_spatial_attention(spec: ModelSpec, D1: int, K: int = 32, bias: bool = True) -> ModelSpec:
    """Spec for the same trunk fed by a D1-channel spatial-attention layer."""
    if D1 < 1:
        raise ConfigError("D1 must be >= 1")
    return replace(spec, use_attention=True, attention_D1=D1, attention_K=K, attention_bias=bias)


def count_parameters(model) -> int:
    """Total number of trainable scalars."""
    return int(sum(p.size for p in model.params.values()))
