"""Command-line entry point.

Exit codes: 0 on success, 1 when inputs or configuration fail validation
(including a failed gradient check), 2 on any other runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..datagen import SynthConfig, make_datasets, read_dataset, write_dataset
from ..montage import GeometryError, MontageFileError
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import format_report, gradcheck_all
from .matrix import MatrixConfig, format_tables, run_matrix
from .stats import welch_df, welch_t_test
from .training import ConfigError, TrainConfig, evaluate_model, train

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

VALIDATION_ERRORS = (ConfigError, CheckpointError, GeometryError, MontageFileError,
                     FileNotFoundError, json.JSONDecodeError, ValueError, KeyError)


def _write_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True), encoding="utf-8")
    tmp.replace(path)


def cmd_synth(args) -> int:
    cfg = SynthConfig(n_subjects=args.subjects, dense=args.dense, sparse=args.sparse,
                      epochs_per_subject=args.epochs_per_subject, seed=args.seed,
                      montage_seed=args.seed, snr_db=args.snr_db)
    if cfg.sparse > cfg.dense:
        raise ConfigError("the sparse montage cannot have more sensors than the dense one")
    out = Path(args.out)
    for name, ds in zip(("dense", "sparse", "mixed"), make_datasets(cfg)):
        write_dataset(ds, out / name)
        print(f"{name}: {len(ds)} epochs, {len(ds.subjects)} subjects -> {out / name}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck_all(args.seed)
    print(format_report(results))
    failed = [r.kernel for r in results if not r.ok]
    if failed:
        print("gradient check failed: " + ", ".join(failed))
        return EXIT_INVALID
    return EXIT_OK


def cmd_train(args) -> int:
    config = TrainConfig.from_json(args.config)
    if config.data is None:
        raise ConfigError("config needs a 'data' directory")
    ds = read_dataset(config.data)
    tests = {name: read_dataset(p).select("test") for name, p in sorted(config.test_data.items())}
    if not tests:
        tests = {"test": ds.select("test")}
    model, metrics, seconds = train(config, ds.select("train"), ds.select("val"), tests)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.ckpt", config.to_dict())
    metrics_path = out / "metrics.json"
    tmp = metrics_path.with_name("metrics.json.tmp")
    tmp.write_text(metrics.to_json(), encoding="utf-8")
    tmp.replace(metrics_path)
    _write_json(out / "timing.json", {"seconds": seconds})
    for name, acc in metrics.test.items():
        print(f"{name}: accuracy {acc:.4f}")
    print(f"{metrics.steps} steps in {seconds:.1f}s -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    ds = read_dataset(args.data)
    if args.split != "all":
        ds = ds.select(args.split)
    result = evaluate_model(model, ds)
    print(json.dumps(result, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_matrix(args) -> int:
    config = MatrixConfig.from_json(args.config)
    if args.workers is not None:
        config.workers = args.workers
    seeds = [config.train.seed + i for i in range(args.seeds)]
    summary = run_matrix(config, seeds, out=args.out, log=lambda s: print(s, flush=True))
    print(format_tables(summary), end="")
    return EXIT_OK


def _read_sample(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8").strip()
    if text.startswith("["):
        values = json.loads(text)
    else:
        values = text.replace(",", " ").split()
    return np.asarray([float(v) for v in values], dtype=float)


def cmd_stats(args) -> int:
    a, b = _read_sample(args.a), _read_sample(args.b)
    t, p = welch_t_test(a, b)
    print(json.dumps({"t": t, "p": p, "df": welch_df(a, b), "mean_a": float(a.mean()),
                      "mean_b": float(b.mean()), "n_a": int(a.size), "n_b": int(b.size)},
                     indent=1, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eegharmony", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate dense, sparse and mixed synthetic datasets")
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--dense", type=int, required=True, help="sensors in the dense montage")
    p.add_argument("--sparse", type=int, required=True, help="sensors in the sparse montage")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs-per-subject", type=int, default=SynthConfig.epochs_per_subject)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr-db", type=float, default=SynthConfig.snr_db)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient kernel")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train one model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("matrix", help="run the full train/test matrix over several seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("stats", help="Welch t-test between two files of accuracies")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
