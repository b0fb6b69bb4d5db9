import numpy as np
import pytest

from eegharmony.datagen import Dataset, EpochSample, SubjectInfo, SynthConfig, synth_epoch, synth_montage
from eegharmony.montage import subsample_montage


def toy_dataset(n_subjects=10, epochs=2, dense=8, sparse=None, seed=0, splits=None):
    """Unfiltered synthetic epochs; subjects alternate labels, odd ids go sparse when asked."""
    cfg = SynthConfig(seed=seed)
    m = synth_montage(dense)
    montages = {"dense": m}
    rows = None
    if sparse:
        names = m.names[::max(1, dense // sparse)][:sparse]
        montages["sparse"] = subsample_montage(m, names)
        rows = [m.index(n) for n in names]
    rng = np.random.default_rng(seed)
    samples, subjects = [], {}
    for sid in range(n_subjects):
        label = sid % 2
        split = splits[sid] if splits else "train"
        subjects[sid] = SubjectInfo(sid, label, split)
        use_sparse = sparse and (sid // 2) % 2 == 1
        for _ in range(epochs):
            s = synth_epoch(m, label, sid, rng, cfg)
            data = s.data.astype(np.float32)
            if use_sparse:
                samples.append(EpochSample(sid, "sparse", data[rows], label))
            else:
                samples.append(EpochSample(sid, "dense", data, label))
    used = {s.montage_id for s in samples}
    return Dataset({k: v for k, v in montages.items() if k in used}, samples, subjects, 128.0, epochs)


@pytest.fixture
def make_toy():
    return toy_dataset
