"""Synthetic lateralized-dipole EEG, subject splits and mixed-montage datasets."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .montage import Montage, read_montage_csv, subsample_montage, write_montage_csv
from .preprocess import filter_order, preprocess_recording

HEAD_RADIUS = 0.09
CAP_MIN_Z = 0.2
SOURCE_RADIUS = 0.075
SOFTENING = 0.02
GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))
SPLITS = ("train", "val", "test")
SCHEMA_VERSION = 1


@dataclass
class SynthConfig:
    """Generator settings. Amplitudes are in microvolts."""

    n_subjects: int = 200
    dense: int = 32
    sparse: int = 8
    epochs_per_subject: int = 6
    raw_rate: float = 500.0
    rate: float = 128.0
    n_times: int = 256
    seed: int = 0
    montage_seed: int = 0
    # mean-over-sensors signal power relative to per-channel noise power
    snr_db: float = 0.0
    amplitude: float = 10.0
    # log-normal spread of the per-epoch source strength
    amplitude_spread: float = 0.5
    # per-subject source jitter in radians (azimuth; elevation gets half)
    jitter: float = 0.35
    source_elevation: float = 0.35
    # rotation of both sources toward the front of the head (radians)
    source_anterior: float = 0.5
    frequency: float = 10.0
    # windows generated and discarded on each side of a recording; None
    # picks the smallest margin that keeps filter edge transients out
    edge_windows: int | None = None

    def segment_length(self) -> int:
        return int(round(self.n_times / self.rate * self.raw_rate))

    def margin_windows(self) -> int:
        if self.edge_windows is not None:
            return self.edge_windows
        return int(np.ceil((filter_order(self.raw_rate) - 1) / self.segment_length()))


@dataclass
class EpochSample:
    subject_id: int
    montage_id: str
    data: np.ndarray
    label: int


@dataclass
class SubjectInfo:
    subject_id: int
    label: int
    split: str = ""


@dataclass
class Dataset:
    montages: dict
    samples: list
    subjects: dict = field(default_factory=dict)
    sample_rate: float = 128.0
    epochs_per_subject: int = 0

    def __len__(self):
        return len(self.samples)

    def select(self, split: str) -> "Dataset":
        keep = {sid for sid, s in self.subjects.items() if s.split == split}
        samples = [s for s in self.samples if s.subject_id in keep]
        used = {s.montage_id for s in samples}
        return Dataset({k: v for k, v in self.montages.items() if k in used}, samples,
                       {sid: self.subjects[sid] for sid in keep}, self.sample_rate, self.epochs_per_subject)

    def groups(self, dtype=np.float32):
        """Per-montage stacked arrays: {montage_id: (X [n, C, T], labels [n], sample indices)}."""
        out = {}
        for mid in sorted({s.montage_id for s in self.samples}):
            idx = np.array([i for i, s in enumerate(self.samples) if s.montage_id == mid])
            X = np.stack([self.samples[i].data for i in idx]).astype(dtype)
            y = np.array([self.samples[i].label for i in idx], dtype=int)
            out[mid] = (X, y, idx)
        return out

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=int)


# --------------------------------------------------------------------------
# geometry
# --------------------------------------------------------------------------

def synth_montage(n: int, seed: int = 0) -> Montage:
    """``n`` sensors on a Fibonacci lattice over the cap z >= 0.2 (unit sphere).

    The lattice starts at the apex and walks down to the cap rim in equal-area
    steps; ``seed`` fixes a global azimuthal offset.
    """
    if n < 1:
        raise ValueError("need at least one sensor")
    offset = np.random.default_rng(seed).uniform(0, 2 * np.pi)
    if n == 1:
        z = np.array([1.0])
    else:
        z = 1.0 - (1.0 - CAP_MIN_Z) * np.arange(n) / (n - 1)
    r = np.sqrt(np.clip(1.0 - z ** 2, 0.0, None))
    phi = offset + GOLDEN_ANGLE * np.arange(n)
    pos = HEAD_RADIUS * np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    width = len(str(n))
    names = [f"S{i + 1:0{width}d}" for i in range(n)]
    return Montage.from_positions(names, pos)


def spread_subset(m: Montage, k: int) -> list[str]:
    """Greedy farthest-point choice of ``k`` sensor names, starting at the apex-most sensor."""
    if not 1 <= k <= len(m):
        raise ValueError(f"cannot pick {k} of {len(m)} sensors")
    pos = m.positions
    chosen = [int(np.argmax(pos[:, 2]))]
    dmin = np.linalg.norm(pos - pos[chosen[0]], axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.linalg.norm(pos - pos[nxt], axis=1))
    return [m.names[i] for i in chosen]


def mastoid_indices(m: Montage) -> list[int]:
    """Sensors nearest the left and right posterior-inferior cap positions."""
    pos = m.positions / np.linalg.norm(m.positions, axis=1, keepdims=True)
    out = []
    for side in (-1.0, 1.0):
        target = np.array([side * 0.6, -0.75, 0.25])
        target /= np.linalg.norm(target)
        out.append(int(np.argmax(pos @ target)))
    return sorted(set(out))


def subject_source(label: int, subject_id: int, cfg: SynthConfig) -> np.ndarray:
    """Dipole position for a subject: left (label 0) or right (label 1) temporal, jittered."""
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    rng = np.random.default_rng([cfg.seed, 1, int(subject_id)])
    base = np.pi - cfg.source_anterior if label == 0 else cfg.source_anterior
    az = base + rng.normal(0.0, cfg.jitter)
    el = cfg.source_elevation + rng.normal(0.0, cfg.jitter / 2)
    direction = np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    return SOURCE_RADIUS * direction


def leadfield(m: Montage, source) -> np.ndarray:
    """Inverse-square gain, scaled to 1 at 3 cm from the source."""
    d2 = ((m.positions - np.asarray(source)) ** 2).sum(axis=1)
    return (0.03 ** 2 + SOFTENING ** 2) / (d2 + SOFTENING ** 2)


def pink_noise(shape, rng) -> np.ndarray:
    """Unit-RMS noise with 1/f power spectrum along the last axis."""
    n = shape[-1]
    spec = rng.normal(size=shape[:-1] + (n // 2 + 1,)) + 1j * rng.normal(size=shape[:-1] + (n // 2 + 1,))
    f = np.fft.rfftfreq(n)
    scale = np.zeros_like(f)
    scale[1:] = 1.0 / np.sqrt(f[1:])
    x = np.fft.irfft(spec * scale, n=n, axis=-1)
    x -= x.mean(axis=-1, keepdims=True)
    return x / np.sqrt((x ** 2).mean(axis=-1, keepdims=True))


def _noise_rms(gain, cfg: SynthConfig) -> float:
    signal_power = (cfg.amplitude * gain) ** 2 / 2.0
    return float(np.sqrt(signal_power.mean() / 10 ** (cfg.snr_db / 10.0)))


def synth_segment(m: Montage, source, rng, cfg: SynthConfig, rate: float, n_times: int,
                  noise_rms: float | None = None) -> np.ndarray:
    """One [C, n_times] stretch: 10 Hz dipole with random phase and strength, plus pink noise."""
    gain = leadfield(m, source)
    if noise_rms is None:
        noise_rms = _noise_rms(gain, cfg)
    t = np.arange(n_times) / rate
    phase = rng.uniform(0, 2 * np.pi)
    strength = cfg.amplitude * rng.lognormal(0.0, cfg.amplitude_spread)
    wave = strength * np.sin(2 * np.pi * cfg.frequency * t + phase)
    out = gain[:, None] * wave[None, :]
    if noise_rms:
        out += noise_rms * pink_noise((len(m), n_times), rng)
    return out


def synth_epoch(m: Montage, label: int, subject_id: int, rng, cfg: SynthConfig | None = None,
                montage_id: str = "dense") -> EpochSample:
    """A single 2-s epoch at ``cfg.rate`` (no preprocessing)."""
    cfg = cfg or SynthConfig()
    source = subject_source(label, subject_id, cfg)
    data = synth_segment(m, source, rng, cfg, cfg.rate, cfg.n_times)
    return EpochSample(int(subject_id), montage_id, data, int(label))


def synth_recording(m: Montage, label: int, subject_id: int, cfg: SynthConfig) -> np.ndarray:
    """Continuous raw recording at ``cfg.raw_rate`` covering the kept epochs plus edge margins."""
    rng = np.random.default_rng([cfg.seed, 2, int(subject_id)])
    source = subject_source(label, subject_id, cfg)
    seg_len = cfg.segment_length()
    n_seg = cfg.epochs_per_subject + 2 * cfg.margin_windows()
    noise_rms = _noise_rms(leadfield(m, source), cfg)
    # source strength and phase change per window; noise is continuous
    signal = np.concatenate([
        synth_segment(m, source, rng, cfg, cfg.raw_rate, seg_len, noise_rms=0.0)
        for _ in range(n_seg)], axis=1)
    return signal + noise_rms * pink_noise((len(m), n_seg * seg_len), rng)


# --------------------------------------------------------------------------
# splits and dataset assembly
# --------------------------------------------------------------------------

def _interleave_by_class(ids_labels, rng):
    by_class = {0: [], 1: []}
    for sid, lab in ids_labels:
        by_class[int(lab)].append(sid)
    for c in by_class:
        order = rng.permutation(len(by_class[c]))
        by_class[c] = [by_class[c][i] for i in order]
    first = 0 if len(by_class[0]) >= len(by_class[1]) else 1
    a, b = by_class[first], by_class[1 - first]
    out = []
    for i in range(max(len(a), len(b))):
        if i < len(a):
            out.append(a[i])
        if i < len(b):
            out.append(b[i])
    return out


def _largest_remainder(n: int, ratios) -> list[int]:
    raw = np.asarray(ratios, dtype=float) / float(sum(ratios)) * n
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def split_subjects(subjects, ratios=(60, 30, 10), seed: int = 0) -> dict:
    """Class-stratified subject split; returns {subject_id: split name}."""
    subjects = [(int(s), int(l)) for s, l in subjects]
    labels = {l for _, l in subjects}
    if labels != {0, 1}:
        raise ValueError("both classes must be present")
    counts = _largest_remainder(len(subjects), ratios)
    if min(counts) < 1:
        raise ValueError(f"{len(subjects)} subjects are too few for ratios {tuple(ratios)}")
    order = _interleave_by_class(subjects, np.random.default_rng([seed, 3]))
    out = {}
    start = 0
    for name, cnt in zip(SPLITS, counts):
        for sid in order[start:start + cnt]:
            out[sid] = name
        start += cnt
    return out


def generate_dense_dataset(cfg: SynthConfig) -> Dataset:
    """Preprocessed dense-montage epochs for a balanced, split subject pool."""
    m = synth_montage(cfg.dense, cfg.montage_seed)
    refs = mastoid_indices(m)
    labels = [i % 2 for i in range(cfg.n_subjects)]
    split = split_subjects(list(zip(range(cfg.n_subjects), labels)), seed=cfg.seed)
    subjects = {sid: SubjectInfo(sid, labels[sid], split[sid]) for sid in range(cfg.n_subjects)}
    samples = []
    for sid in range(cfg.n_subjects):
        raw = synth_recording(m, labels[sid], sid, cfg)
        epochs = preprocess_recording(raw, cfg.raw_rate, refs, cfg.rate, cfg.n_times)
        edge = cfg.margin_windows()
        kept = epochs[edge:edge + cfg.epochs_per_subject]
        samples += [EpochSample(sid, "dense", e.astype(np.float32), labels[sid]) for e in kept]
    return Dataset({"dense": m}, samples, subjects, cfg.rate, cfg.epochs_per_subject)


def _with_montage(samples, montage_id, rows=None):
    out = []
    for s in samples:
        data = s.data if rows is None else s.data[rows]
        out.append(EpochSample(s.subject_id, montage_id, data, s.label))
    return out


def build_mixed_dataset(dense_set: Dataset, sparse_names, seed: int = 0):
    """Dense-only, sparse-only and mixed variants of a dense dataset.

    Within every split the subjects are halved (class-balanced): in the mixed
    variant one half keeps the dense montage and the other half is reduced to
    ``sparse_names``. The dense-only and sparse-only variants hold every
    subject of every split at one montage.
    """
    (dense_id, dense_m), = dense_set.montages.items()
    sparse_m = subsample_montage(dense_m, list(sparse_names))
    rows = np.array([dense_m.index(n) for n in sparse_names])
    rng = np.random.default_rng([seed, 4])
    sparse_half = set()
    for split in SPLITS:
        for label in (0, 1):
            members = sorted(sid for sid, s in dense_set.subjects.items()
                             if s.split == split and s.label == label)
            order = [members[i] for i in rng.permutation(len(members))]
            # with an odd count, class 0 gives its extra subject to the dense
            # half and class 1 to the sparse half, keeping the halves equal
            start = 0 if (len(order) % 2 and label == 1) else 1
            sparse_half.update(order[start::2])
    dense_samples = _with_montage(dense_set.samples, "dense")
    sparse_samples = _with_montage(dense_set.samples, "sparse", rows)
    mixed_samples = [sp if s.subject_id in sparse_half else d
                     for s, d, sp in zip(dense_set.samples, dense_samples, sparse_samples)]
    common = dict(subjects=dense_set.subjects, sample_rate=dense_set.sample_rate,
                  epochs_per_subject=dense_set.epochs_per_subject)
    return (Dataset({"dense": dense_m}, dense_samples, **common),
            Dataset({"sparse": sparse_m}, sparse_samples, **common),
            Dataset({"dense": dense_m, "sparse": sparse_m}, mixed_samples, **common))


def make_datasets(cfg: SynthConfig):
    """(dense-only, sparse-only, mixed) datasets for a generator config."""
    dense = generate_dense_dataset(cfg)
    names = spread_subset(dense.montages["dense"], cfg.sparse)
    return build_mixed_dataset(dense, names, cfg.seed)


# --------------------------------------------------------------------------
# on-disk format
# --------------------------------------------------------------------------

def _atomic_write(path: Path, payload: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def write_dataset(ds: Dataset, out_dir) -> None:
    """``manifest.json`` + ``epochs.bin`` (little-endian float32, [sample][channel][time]) + montage CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    montage_files = {}
    for mid, m in sorted(ds.montages.items()):
        fname = f"montage_{mid}.csv"
        write_montage_csv(m, out / fname)
        montage_files[mid] = fname
    entries = []
    chunks = []
    offset = 0
    for s in ds.samples:
        arr = np.ascontiguousarray(s.data, dtype="<f4")
        entries.append({"subject_id": s.subject_id, "montage_id": s.montage_id, "label": s.label,
                        "n_channels": int(arr.shape[0]), "n_times": int(arr.shape[1]), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "montages": montage_files,
        "subjects": [asdict(ds.subjects[k]) for k in sorted(ds.subjects)],
        "epochs_per_subject": ds.epochs_per_subject,
        "sample_rate": ds.sample_rate,
        "dtype": "float32",
        "byte_order": "little",
        "layout": "sample,channel,time",
        "samples": entries,
    }
    _atomic_write(out / "epochs.bin", b"".join(chunks))
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=1).encode("utf-8"))


def read_dataset(path) -> Dataset:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported dataset schema {manifest.get('schema_version')}")
    montages = {mid: read_montage_csv(root / fname) for mid, fname in manifest["montages"].items()}
    payload = np.fromfile(root / "epochs.bin", dtype="<f4")
    samples = []
    for e in manifest["samples"]:
        start = e["offset"] // 4
        n = e["n_channels"] * e["n_times"]
        data = payload[start:start + n].reshape(e["n_channels"], e["n_times"]).astype(np.float32)
        if data.shape[0] != len(montages[e["montage_id"]]):
            raise ValueError(f"sample of subject {e['subject_id']} does not match montage {e['montage_id']}")
        samples.append(EpochSample(e["subject_id"], e["montage_id"], data, e["label"]))
    subjects = {s["subject_id"]: SubjectInfo(**s) for s in manifest["subjects"]}
    return Dataset(montages, samples, subjects, manifest["sample_rate"], manifest["epochs_per_subject"])
