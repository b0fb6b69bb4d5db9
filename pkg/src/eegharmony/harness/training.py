"""Fixed-epoch training and per-sample evaluation."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datagen import Dataset
from ..diffcore import AdamaxState, adamax_step, softmax_cross_entropy
from ..rvgg import RVGG_LAYERS, ModelSpec, RVGG, build_rvgg
from ..spatial_attention import DropRegion, sample_drop_region

METRICS_SCHEMA = 1
DROP_POLICIES = ("batch", "channel", "none")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 70
    epochs: int = 15
    seed: int = 0
    scale: int = 4
    attention: bool = True
    D1: int = 16
    K: int = 32
    attention_bias: bool = True
    drop_policy: str = "batch"
    drop_radius: float = 0.1
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.001
    decay_mode: str = "l2"
    dtype: str = "float32"
    eval_batch: int = 256
    data: str | None = None
    test_data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.drop_policy not in DROP_POLICIES:
            raise ConfigError(f"drop_policy must be one of {DROP_POLICIES}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def optimizer(self) -> AdamaxState:
        return AdamaxState(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
                           weight_decay=self.weight_decay, decay_mode=self.decay_mode)


@dataclass
class RunMetrics:
    seed: int
    config: dict
    steps: int = 0
    epochs: list = field(default_factory=list)
    test: dict = field(default_factory=dict)
    schema_version: int = METRICS_SCHEMA

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True)


def model_spec_for(config: TrainConfig, train_set: Dataset) -> ModelSpec:
    channels = {len(m) for m in train_set.montages.values()}
    if not config.attention and len(channels) != 1:
        raise ConfigError("a model without spatial attention cannot mix montages of different size")
    n_times = train_set.samples[0].data.shape[1]
    return ModelSpec(input_shape=(1, max(channels), n_times), scale=config.scale,
                     use_attention=config.attention, attention_D1=config.D1,
                     attention_K=config.K, attention_bias=config.attention_bias, layers=RVGG_LAYERS)


def _check_compatible(model: RVGG, ds: Dataset):
    if model.spec.use_attention:
        return
    want = model.spec.input_shape[1]
    bad = sorted(mid for mid, m in ds.montages.items() if len(m) != want)
    if bad:
        raise ConfigError(f"model without attention expects {want} channels; montages {bad} differ")


def _drop_for(config: TrainConfig, D1: int, coords, rng):
    if config.drop_policy == "none" or not config.attention:
        return None
    if config.drop_policy == "batch":
        return sample_drop_region(coords, rng, config.drop_radius)
    return [sample_drop_region(coords, rng, config.drop_radius) for _ in range(D1)]


def epoch_batches(groups: dict, batch_size: int, rng) -> list:
    """Montage-homogeneous batches (partial batches dropped), shuffled across montages."""
    batches = []
    for mid in sorted(groups):
        n = len(groups[mid][1])
        perm = rng.permutation(n)
        for b in range(n // batch_size):
            batches.append((mid, perm[b * batch_size:(b + 1) * batch_size]))
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def evaluate_model(model: RVGG, ds: Dataset, batch: int = 256) -> dict:
    """Eval-mode loss and accuracy, overall and per montage."""
    _check_compatible(model, ds)
    total = correct = 0
    loss_sum = 0.0
    per_montage = {}
    for mid, (X, y, _) in ds.groups(dtype=model.dtype).items():
        coords = ds.montages[mid].layout2d
        c = 0
        for start in range(0, len(y), batch):
            logits = model.forward(X[start:start + batch], coords, training=False)
            yb = y[start:start + batch]
            loss, _ = softmax_cross_entropy(logits.astype(np.float64), yb)
            loss_sum += loss * len(yb)
            c += int((np.argmax(logits, axis=1) == yb).sum())
        per_montage[mid] = {"correct": c, "total": int(len(y)), "accuracy": c / len(y)}
        correct += c
        total += len(y)
    if total == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return {"accuracy": correct / total, "loss": loss_sum / total, "correct": correct,
            "total": total, "per_montage": per_montage}


def evaluate(model: RVGG, ds: Dataset, batch: int = 256) -> float:
    """Per-sample accuracy with dropout and spatial dropout disabled."""
    return evaluate_model(model, ds, batch)["accuracy"]


def train(config: TrainConfig, train_set: Dataset, val_set: Dataset | None = None,
          test_sets: dict | None = None, model: RVGG | None = None):
    """Train for a fixed number of epochs; returns ``(model, metrics, seconds)``."""
    started = time.perf_counter()
    dtype = np.dtype(config.dtype)
    if model is None:
        spec = model_spec_for(config, train_set)
        model = build_rvgg(spec, rng=np.random.default_rng([config.seed, 11]), dtype=dtype)
    _check_compatible(model, train_set)
    rng = np.random.default_rng([config.seed, 12])
    state = config.optimizer()
    groups = train_set.groups(dtype=dtype)
    metrics = RunMetrics(seed=config.seed, config=config.to_dict())
    for epoch in range(config.epochs):
        loss_sum = 0.0
        correct = seen = 0
        for mid, idx in epoch_batches(groups, config.batch_size, rng):
            X, y, _ = groups[mid]
            coords = train_set.montages[mid].layout2d
            drop = _drop_for(config, config.D1, coords, rng)
            logits = model.forward(X[idx], coords, training=True, rng=rng, drop=drop)
            loss, dlogits = softmax_cross_entropy(logits.astype(np.float64), y[idx])
            grads = model.backward(dlogits)
            adamax_step(model.params, grads, state)
            loss_sum += loss * len(idx)
            correct += int((np.argmax(logits, axis=1) == y[idx]).sum())
            seen += len(idx)
        record = {"epoch": epoch + 1, "steps": state.t,
                  "train_loss": loss_sum / seen if seen else None,
                  "train_accuracy": correct / seen if seen else None}
        if val_set is not None and len(val_set):
            ev = evaluate_model(model, val_set, config.eval_batch)
            record["val_loss"] = ev["loss"]
            record["val_accuracy"] = ev["accuracy"]
        metrics.epochs.append(record)
    metrics.steps = state.t
    for name, ds in sorted((test_sets or {}).items()):
        metrics.test[name] = evaluate(model, ds, config.eval_batch)
    return model, metrics, time.perf_counter() - started
