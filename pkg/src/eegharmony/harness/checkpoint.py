"""Binary checkpoint: magic, JSON header, little-endian float64 tensors.

Layout::

    b"EEGHCKPT"                 8 bytes
    header length               uint32, little-endian
    header                      UTF-8 JSON
    payload                     concatenated '<f8' tensors, C order

The header holds ``schema_version``, the model ``spec``, the training
``config`` and one ``tensors`` entry per parameter with ``name``,
``shape``, ``dtype`` ("<f8"), ``offset`` and ``nbytes`` (relative to the
payload start).
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
from pathlib import Path

import numpy as np

from ..rvgg import RVGG, ModelSpec

MAGIC = b"EEGHCKPT"
SCHEMA_VERSION = 1


class CheckpointError(ValueError):
    pass


def spec_to_dict(spec: ModelSpec) -> dict:
    d = dataclasses.asdict(spec)
    d["input_shape"] = list(spec.input_shape)
    d["layers"] = [list(l) for l in spec.layers]
    return d


def spec_from_dict(d: dict) -> ModelSpec:
    d = dict(d)
    d["input_shape"] = tuple(d["input_shape"])
    d["layers"] = tuple(tuple(l) for l in d["layers"])
    return ModelSpec(**d)


def save_checkpoint(model: RVGG, path, config: dict | None = None) -> None:
    tensors = []
    chunks = []
    offset = 0
    for name, arr in model.params.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        tensors.append({"name": name, "shape": list(data.shape), "dtype": "<f8",
                        "offset": offset, "nbytes": data.nbytes})
        chunks.append(data.tobytes())
        offset += data.nbytes
    header = {"schema_version": SCHEMA_VERSION, "spec": spec_to_dict(model.spec),
              "config": config or {}, "tensors": tensors}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)


def load_checkpoint(path, dtype=np.float32):
    """Return ``(model, header)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    if header.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(f"{path}: unsupported schema {header.get('schema_version')}")
    payload = memoryview(raw)[12 + hlen:]
    params = {}
    for t in header["tensors"]:
        if t["dtype"] != "<f8":
            raise CheckpointError(f"tensor {t['name']}: unsupported dtype {t['dtype']}")
        buf = payload[t["offset"]:t["offset"] + t["nbytes"]]
        if len(buf) != t["nbytes"]:
            raise CheckpointError(f"tensor {t['name']}: truncated payload")
        params[t["name"]] = np.frombuffer(buf, dtype="<f8").reshape(t["shape"]).astype(dtype)
    return RVGG(spec_from_dict(header["spec"]), params), header
