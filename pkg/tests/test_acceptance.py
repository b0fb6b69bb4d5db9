"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

Criteria 7 and 8 share one ten-seed run of the full experiment matrix on the
default synthetic configuration; on a single core that takes roughly 25 minutes.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from eegharmony.datagen import SynthConfig, synth_montage
from eegharmony.diffcore import AdamaxState, adamax_step
from eegharmony.harness.cli import main
from eegharmony.harness.gradcheck import gradcheck_all
from eegharmony.harness.matrix import MatrixConfig, format_tables, run_matrix
from eegharmony.harness.stats import welch_t_test
from eegharmony.harness.training import TrainConfig
from eegharmony.preprocess import filter_order, fir_bandpass
from eegharmony.rvgg import ModelSpec, build_rvgg, count_parameters
from eegharmony.spatial_attention import (
    DropRegion,
    SpatialAttentionParams,
    fourier_score,
    keep_mask,
    spatial_attention_forward,
)
from oracles import attention_forward_loop, fourier_score_loop

FIXTURES = Path(__file__).parent / "data" / "welch_fixtures.json"


@pytest.fixture
def report(capsys):
    def emit(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}: {detail}")
        return ok
    return emit


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def test_c01_parameter_count(report):
    start = time.perf_counter()
    model = build_rvgg(ModelSpec(input_shape=(1, 23, 256), scale=1), rng=0, dtype=np.float32)
    n = count_parameters(model)
    seconds = time.perf_counter() - start
    ok = n == 7_452_850 and seconds < 1.0
    assert report(1, "architecture arithmetic", ok, f"{n:,} parameters in {seconds:.2f}s")


def test_c02_gradcheck(report):
    start = time.perf_counter()
    results = gradcheck_all(0)
    seconds = time.perf_counter() - start
    worst = {r.kernel: f"{r.max_rel_error:.1e}" for r in results}
    ok = all(r.ok for r in results) and seconds < 120
    assert report(2, "gradient integrity", ok, f"{worst} in {seconds:.1f}s")


def test_c03_oracle_equivalence(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(50):
        K, C, D1, T = (int(rng.integers(1, 5)), int(rng.integers(1, 9)),
                       int(rng.integers(1, 4)), int(rng.integers(1, 9)))
        p = SpatialAttentionParams(rng.normal(size=(D1, K, K)), rng.normal(size=(D1, K, K)),
                                   rng.normal(size=(D1, D1)), rng.normal(size=D1))
        coords = rng.uniform(0.1, 0.9, size=(C, 2))
        X = rng.normal(size=(C, T))
        for j in range(D1):
            for c in range(C):
                got = fourier_score(p, j, *coords[c])
                worst = max(worst, abs(got - fourier_score_loop(p.re, p.im, j, *coords[c])))
        drop = None
        if i % 2:
            drop = DropRegion(tuple(coords[int(rng.integers(C))]), float(rng.uniform(0.05, 0.4)), True)
        dropped = ~keep_mask(coords, D1, drop)
        Y, _ = spatial_attention_forward(p, coords, X, drop)
        ref = attention_forward_loop(p.re, p.im, p.mix_w, p.mix_b, coords, X, dropped)
        worst = max(worst, float(np.max(np.abs(Y - ref))))
    ok = worst <= 1e-10
    assert report(3, "oracle equivalence", ok, f"max abs deviation {worst:.2e} over 50 instances")


def test_c04_harmonization_invariants(report):
    rng = np.random.default_rng(4)
    perm_err = 0.0
    for _ in range(20):
        C = int(rng.integers(2, 24))
        p = SpatialAttentionParams.init(4, 8, rng=rng)
        p.re *= 8
        coords = rng.uniform(0.1, 0.9, size=(C, 2))
        X = rng.normal(size=(C, 16))
        perm = rng.permutation(C)
        Y1, _ = spatial_attention_forward(p, coords, X)
        Y2, _ = spatial_attention_forward(p, coords[perm], X[perm])
        perm_err = max(perm_err, float(np.max(np.abs(Y1 - Y2))))

    p = SpatialAttentionParams(rng.normal(size=(5, 4, 4)), rng.normal(size=(5, 4, 4)), np.eye(5), np.zeros(5))
    X1 = rng.normal(size=(1, 32))
    Y, _ = spatial_attention_forward(p, [(0.42, 0.61)], X1)
    identity = bool(np.array_equal(Y, np.tile(X1, (5, 1))))

    Xc = np.repeat(np.array([[1.0], [2.0], [3.0], [6.0]]), 8, axis=1)
    Y, _ = spatial_attention_forward(SpatialAttentionParams.zeros(3, 4), rng.uniform(0.1, 0.9, (4, 2)), Xc)
    uniform = bool(np.array_equal(Y, np.full((3, 8), 3.0)))

    spec = ModelSpec(input_shape=(1, 23, 256), scale=4, use_attention=True, attention_D1=16, attention_K=32)
    model = build_rvgg(spec, rng=0, dtype=np.float32)
    before = {k: v.copy() for k, v in model.params.items()}
    shapes = []
    for C in (1, 8, 23, 128):
        out = model.forward(np.random.default_rng(C).normal(size=(2, C, 256)), synth_montage(C).layout2d)
        shapes.append(out.shape == (2, 2) and bool(np.all(np.isfinite(out))))
    unchanged = all(np.array_equal(before[k], model.params[k]) for k in before)
    any_c = all(shapes) and unchanged

    ok = perm_err <= 1e-12 and identity and uniform and any_c
    assert report(4, "harmonization invariants", ok,
                  f"permutation {perm_err:.1e}, single-channel identity {identity}, "
                  f"zero-z average {uniform}, C in (1, 8, 23, 128) {any_c}")


def test_c05_adamax_step(report):
    p = {"w": np.array(1.0)}
    state = AdamaxState(weight_decay=0.0, eps=0.0)
    adamax_step(p, {"w": np.array(1.0)}, state)
    exact = float(p["w"]) == 0.998
    p = {"w": np.array(1.0)}
    adamax_step(p, {"w": np.array(1.0)}, AdamaxState(weight_decay=0.0))
    with_eps = float(p["w"])
    ok = exact and abs(with_eps - 0.998) < 1e-10
    assert report(5, "Adamax oracle", ok, f"eps=0 gives {0.998 if exact else 'not'} exactly; "
                                          f"default eps gives {with_eps!r}")


def test_c06_filter(report):
    gains = {}
    for rate in (128.0, 500.0):
        x = np.sin(2 * np.pi * 10 * np.arange(int(40 * rate)) / rate)
        gains[rate] = rms(fir_bandpass(x, rate)) / rms(x)
    T, n = 30000, filter_order(500.0)
    x = np.sin(2 * np.pi * 50 * np.arange(T) / 500.0)
    y = fir_bandpass(x, 500.0)
    # steady state: the filter support lies fully inside the signal
    core = slice(n, T - n)
    atten = 20 * np.log10(rms(y[core]) / rms(x[core]))
    ok = all(abs(g - 1) <= 0.01 for g in gains.values()) and atten <= -40
    assert report(6, "filter behavior", ok,
                  f"10 Hz gain {gains[128.0]:.4f} (128 Hz) / {gains[500.0]:.4f} (500 Hz), "
                  f"50 Hz at 500 Hz {atten:.1f} dB")


@pytest.fixture(scope="module")
def matrix_run(tmp_path_factory):
    config = MatrixConfig(SynthConfig(), TrainConfig(), workers=os.cpu_count() or 1)
    out = tmp_path_factory.mktemp("acceptance_matrix")
    start = time.perf_counter()
    summary = run_matrix(config, list(range(10)), out=out)
    return summary, time.perf_counter() - start, config.workers


def test_c07_attention_ablation(report, matrix_run, capsys):
    summary, seconds, workers = matrix_run
    with capsys.disabled():
        print("\n" + format_tables(summary))
    c = summary["comparisons"]["attention_vs_none_dense"]
    ok = c["mean_a"] >= c["mean_b"] and c["p"] is not None and c["p"] < 0.05 and seconds <= 1800
    assert report(7, "attention ablation, dense montage", ok,
                  f"{100 * c['mean_a']:.1f} vs {100 * c['mean_b']:.1f}, t={c['t']:.3f} p={c['p']:.3g}, "
                  f"{seconds / 60:.1f} min on {workers} core(s)")


def test_c08a_mixed_beats_dense_on_sparse(report, matrix_run):
    c = matrix_run[0]["comparisons"]["mixed_vs_dense_on_sparse"]
    gap = 100 * (c["mean_a"] - c["mean_b"])
    ok = gap >= 5 and c["p"] is not None and c["p"] < 0.05
    assert report("8a", "sparse test data, mixed vs dense model", ok,
                  f"{100 * c['mean_a']:.1f} vs {100 * c['mean_b']:.1f} (gap {gap:.1f}), p={c['p']:.3g}")


def test_c08b_mixed_best_overall(report, matrix_run):
    overall = matrix_run[0]["overall"]
    ok = overall["mixed"]["mean"] >= overall["dense"]["mean"]
    assert report("8b", "average over test sets", ok,
                  ", ".join(f"{k} {100 * v['mean']:.1f}" for k, v in overall.items()))


def test_c09_reproducible(report, tmp_path, capsys):
    def run(*argv):
        assert main(list(argv)) == 0
        return capsys.readouterr().out

    data = tmp_path / "data"
    run("synth", "--subjects", "12", "--dense", "8", "--sparse", "4", "--epochs-per-subject", "2",
        "--out", str(data))
    train = {"scale": 8, "D1": 4, "K": 4, "batch_size": 4, "epochs": 2, "seed": 3}
    (tmp_path / "t.json").write_text(json.dumps({**train, "data": str(data / "mixed")}))
    (tmp_path / "m.json").write_text(json.dumps({"data": str(data), "train": train}))
    (tmp_path / "a.txt").write_text("0.8 0.82 0.79")
    (tmp_path / "b.txt").write_text("0.7 0.74 0.69 0.71")
    outputs = []
    for rep in ("r1", "r2"):
        d = tmp_path / rep
        files = {}
        run("synth", "--subjects", "12", "--dense", "8", "--sparse", "4", "--epochs-per-subject", "2",
            "--out", str(d / "data"))
        files.update({str(p.relative_to(d)): p.read_bytes() for p in (d / "data").rglob("*") if p.is_file()})
        run("train", "--config", str(tmp_path / "t.json"), "--out", str(d / "train"))
        files["train/metrics.json"] = (d / "train" / "metrics.json").read_bytes()
        files["train/model.ckpt"] = (d / "train" / "model.ckpt").read_bytes()
        files["eval"] = run("eval", "--checkpoint", str(d / "train" / "model.ckpt"), "--data",
                            str(data / "dense")).encode()
        run("matrix", "--config", str(tmp_path / "m.json"), "--seeds", "2", "--out", str(d / "matrix"))
        files.update({str(p.relative_to(d)): p.read_bytes() for p in (d / "matrix").rglob("*.json")
                      if p.name != "timing.json"})
        files["stats"] = run("stats", "--a", str(tmp_path / "a.txt"), "--b", str(tmp_path / "b.txt")).encode()
        outputs.append(files)
    same = outputs[0].keys() == outputs[1].keys()
    diff = sorted(k for k in outputs[0] if outputs[0][k] != outputs[1].get(k))
    ok = same and not diff
    assert report(9, "reproducibility", ok, f"{len(outputs[0])} outputs compared, differing: {diff or 'none'}")


def test_c10_welch_fixtures(report):
    fixtures = json.loads(FIXTURES.read_text(encoding="utf-8"))["fixtures"]
    dt = dp = 0.0
    for fx in fixtures:
        t, p = welch_t_test(fx["a"], fx["b"])
        dt, dp = max(dt, abs(t - fx["t"])), max(dp, abs(p - fx["p"]))
    ok = len(fixtures) >= 20 and dt <= 1e-6 and dp <= 1e-4
    assert report(10, "statistics oracle", ok, f"{len(fixtures)} fixtures, max |dt| {dt:.1e}, max |dp| {dp:.1e}")
