"""The train/test experiment matrix across montages, with the attention ablation."""

from __future__ import annotations

import dataclasses
import json
import multiprocessing
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datagen import Dataset, SynthConfig, make_datasets, read_dataset
from .stats import welch_t_test
from .training import ConfigError, TrainConfig, train

MATRIX_SCHEMA = 1
SETS = ("dense", "sparse", "mixed")
ABLATION_SETS = ("dense", "sparse")


@dataclass
class MatrixConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    # directory holding dense/, sparse/ and mixed/ datasets; replaces synth when set
    data: str | None = None
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "MatrixConfig":
        unknown = sorted(set(d) - {"synth", "train", "data", "workers"})
        if unknown:
            raise ConfigError(f"unknown matrix config keys: {unknown}")
        synth = d.get("synth", {})
        known = {f.name for f in dataclasses.fields(SynthConfig)}
        if set(synth) - known:
            raise ConfigError(f"unknown synth keys: {sorted(set(synth) - known)}")
        workers = int(d.get("workers", 1))
        if workers < 1:
            raise ConfigError("workers must be >= 1")
        return cls(SynthConfig(**synth), TrainConfig.from_dict(d.get("train", {})),
                   d.get("data"), workers)

    @classmethod
    def from_json(cls, path) -> "MatrixConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        # workers is left out: it must not change the metrics files
        return {"synth": dataclasses.asdict(self.synth), "train": self.train.to_dict(),
                "data": self.data}


@dataclass(frozen=True)
class Job:
    seed: int
    trained_on: str
    attention: bool

    @property
    def tag(self) -> str:
        return f"seed{self.seed}_{'att' if self.attention else 'noatt'}_{self.trained_on}"


def matrix_jobs(seeds) -> list[Job]:
    jobs = []
    for s in seeds:
        jobs += [Job(s, name, True) for name in SETS]
        jobs += [Job(s, name, False) for name in ABLATION_SETS]
    return jobs


def load_datasets(config: MatrixConfig) -> dict:
    if config.data is not None:
        root = Path(config.data)
        return {name: read_dataset(root / name) for name in SETS}
    return dict(zip(SETS, make_datasets(config.synth)))


# datasets shared with forked workers
_DATA: dict = {}


def _run_job(args):
    job, train_cfg = args
    ds: Dataset = _DATA[job.trained_on]
    tests = SETS if job.attention else (job.trained_on,)
    cfg = dataclasses.replace(train_cfg, seed=job.seed, attention=job.attention)
    _, metrics, seconds = train(cfg, ds.select("train"), ds.select("val"),
                                {name: _DATA[name].select("test") for name in tests})
    return job, metrics, seconds


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _cell(values) -> dict:
    v = np.asarray(values, dtype=float)
    std = float(v.std(ddof=1)) if v.size > 1 else None
    return {"values": [float(x) for x in v], "mean": float(v.mean()), "std": std}


def _compare(a, b, label_a: str, label_b: str) -> dict:
    out = {"a": label_a, "b": label_b, "mean_a": float(np.mean(a)), "mean_b": float(np.mean(b))}
    try:
        out["t"], out["p"] = welch_t_test(a, b)
    except ValueError as exc:
        out["t"] = out["p"] = None
        out["note"] = str(exc)
    return out


def aggregate(results, seeds) -> dict:
    """Fold per-run test accuracies into mean/std cells and pairwise Welch comparisons."""
    acc = {}
    for job, metrics in results:
        for test_name, value in metrics.test.items():
            acc.setdefault((job.attention, job.trained_on, test_name), {})[job.seed] = value
    ordered = {k: [v[s] for s in seeds] for k, v in acc.items()}
    attention = {tr: {te: _cell(ordered[(True, tr, te)]) for te in SETS} for tr in SETS}
    ablation = {tr: {tr: _cell(ordered[(False, tr, tr)])} for tr in ABLATION_SETS}

    def overall(tr):
        return list(np.mean([ordered[(True, tr, te)] for te in SETS], axis=0))

    comparisons = {
        "attention_vs_none_dense": _compare(ordered[(True, "dense", "dense")],
                                            ordered[(False, "dense", "dense")],
                                            "attention dense->dense", "no attention dense->dense"),
        "attention_vs_none_sparse": _compare(ordered[(True, "sparse", "sparse")],
                                             ordered[(False, "sparse", "sparse")],
                                             "attention sparse->sparse", "no attention sparse->sparse"),
        "mixed_vs_dense_on_sparse": _compare(ordered[(True, "mixed", "sparse")],
                                             ordered[(True, "dense", "sparse")],
                                             "mixed->sparse", "dense->sparse"),
        "mixed_vs_sparse_on_dense": _compare(ordered[(True, "mixed", "dense")],
                                             ordered[(True, "sparse", "dense")],
                                             "mixed->dense", "sparse->dense"),
        "mixed_vs_dense_overall": _compare(overall("mixed"), overall("dense"),
                                           "mixed model, mean of test sets",
                                           "dense model, mean of test sets"),
        "mixed_vs_sparse_overall": _compare(overall("mixed"), overall("sparse"),
                                            "mixed model, mean of test sets",
                                            "sparse model, mean of test sets"),
    }
    return {"attention": attention, "no_attention": ablation, "comparisons": comparisons,
            "overall": {tr: _cell(overall(tr)) for tr in SETS}}


def _fmt(cell) -> str:
    mean = 100 * cell["mean"]
    if cell["std"] is None:
        return f"{mean:.1f}"
    return f"{mean:.1f} ({100 * cell['std']:.1f})"


def format_tables(summary: dict) -> str:
    """Text rendering: the attention ablation, then the train/test matrix, in percent."""
    w = 14
    lines = ["Accuracy % mean (std) by model and attention", " " * 18
             + "".join(f"{n:>{w}s}" for n in ABLATION_SETS)]
    lines.append(f"{'with attention':<18s}" + "".join(
        f"{_fmt(summary['attention'][n][n]):>{w}s}" for n in ABLATION_SETS))
    lines.append(f"{'without attention':<18s}" + "".join(
        f"{_fmt(summary['no_attention'][n][n]):>{w}s}" for n in ABLATION_SETS))
    lines += ["", "Accuracy % mean (std); rows: test data, columns: model trained on",
              " " * 18 + "".join(f"{n:>{w}s}" for n in SETS)]
    for te in SETS:
        lines.append(f"{te:<18s}" + "".join(f"{_fmt(summary['attention'][tr][te]):>{w}s}" for tr in SETS))
    lines.append(f"{'average':<18s}" + "".join(f"{_fmt(summary['overall'][tr]):>{w}s}" for tr in SETS))
    lines += ["", "Welch comparisons"]
    for name, c in summary["comparisons"].items():
        if c["t"] is None:
            lines.append(f"  {name}: {c['note']}")
        else:
            lines.append(f"  {name}: {100 * c['mean_a']:.1f} vs {100 * c['mean_b']:.1f}  "
                         f"t={c['t']:.3f} p={c['p']:.4g}")
    return "\n".join(lines) + "\n"


def run_matrix(config: MatrixConfig, seeds, out=None, datasets: dict | None = None,
               log=None) -> dict:
    """Train every cell for every seed; returns the aggregated summary.

    With ``out`` set, writes ``runs/<tag>.json`` per run plus ``matrix.json``
    and ``table.txt``. Wall-clock times go to ``timing.json`` so the metrics
    files stay byte-identical across reruns.
    """
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ConfigError("run_matrix needs at least two seeds")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")
    _DATA.clear()
    _DATA.update(datasets if datasets is not None else load_datasets(config))
    jobs = [(j, config.train) for j in matrix_jobs(seeds)]
    if out is not None:
        out = Path(out)
        (out / "runs").mkdir(parents=True, exist_ok=True)
    results, timing = [], {}
    try:
        if config.workers > 1:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(config.workers) as pool:
                for item in pool.imap(_run_job, jobs):
                    _collect(item, results, timing, out, log)
        else:
            for args in jobs:
                _collect(_run_job(args), results, timing, out, log)
    finally:
        _DATA.clear()
    summary = {"schema_version": MATRIX_SCHEMA, "seeds": seeds, "config": config.to_dict(),
               "runs": [job.tag for job, _ in results]}
    summary.update(aggregate(results, seeds))
    if out is not None:
        _atomic_write(out / "matrix.json", json.dumps(summary, indent=1, sort_keys=True))
        _atomic_write(out / "table.txt", format_tables(summary))
        _atomic_write(out / "timing.json", json.dumps(timing, indent=1, sort_keys=True))
    return summary


def _collect(item, results, timing, out, log):
    job, metrics, seconds = item
    results.append((job, metrics))
    timing[job.tag] = seconds
    if out is not None:
        _atomic_write(out / "runs" / f"{job.tag}.json", metrics.to_json())
    if log is not None:
        tests = " ".join(f"{k}={v:.3f}" for k, v in sorted(metrics.test.items()))
        log(f"{job.tag}: {tests} ({seconds:.1f}s)")
