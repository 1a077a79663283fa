"""Checkpoint format: one JSON manifest line, then a little-endian float32 blob.

    {"format": "abductive-checkpoint/1", "model_kind": ..., "config": {...},
     "dims": {...}, "params": [{"name", "shape", "dtype": "f32", "offset"}, ...]}\\n
    <blob>

``offset`` is the byte offset of each tensor inside the blob.
"""

from __future__ import annotations

import json

import numpy as np

from ..fileio import atomic_write, dumps
from .networks import DataDims, ModelConfig, build_model

FORMAT = "abductive-checkpoint/1"


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(model, extra=None):
    entries, chunks, offset = [], [], 0
    for p in model.store:
        data = np.ascontiguousarray(p.value, dtype="<f4").tobytes()
        entries.append({"name": p.name, "shape": list(p.value.shape), "dtype": "f32",
                        "offset": offset})
        chunks.append(data)
        offset += len(data)
    manifest = {
        "format": FORMAT,
        "model_kind": model.kind,
        "config": model.config.to_json(),
        "dims": {"d_raw": model.dims.d_raw, "d_emb": model.dims.d_emb,
                 "n_actions": model.dims.n_actions},
        "params": entries,
    }
    if extra:
        manifest["extra"] = extra
    return dumps(manifest).encode() + b"\n" + b"".join(chunks)


def save_checkpoint(model, path, extra=None):
    atomic_write(path, checkpoint_bytes(model, extra))


def _field(d, key, where="manifest"):
    if key not in d:
        raise CheckpointError(f"checkpoint {where} is missing field {key!r}")
    return d[key]


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    head, sep, blob = raw.partition(b"\n")
    if not sep:
        raise CheckpointError("checkpoint has no manifest line")
    try:
        manifest = json.loads(head)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"checkpoint manifest is not valid JSON: {exc}") from None
    if _field(manifest, "format") != FORMAT:
        raise CheckpointError(f"checkpoint field 'format' is {manifest['format']!r}, expected {FORMAT!r}")
    kind = _field(manifest, "model_kind")
    try:
        config = ModelConfig(**_field(manifest, "config"))
        dims = DataDims(**_field(manifest, "dims"))
    except TypeError as exc:
        raise CheckpointError(f"checkpoint field 'config'/'dims' is malformed: {exc}") from None
    if config.model_kind != kind:
        raise CheckpointError(f"checkpoint field 'model_kind' ({kind}) disagrees with config")
    model = build_model(config, dims)
    entries = _field(manifest, "params")
    names = [_field(e, "name", "params entry") for e in entries]
    if names != model.store.names():
        missing = set(model.store.names()) ^ set(names)
        raise CheckpointError(f"checkpoint field 'params' does not match the architecture: {sorted(missing)[:5]}")
    for e in entries:
        p = model.store[e["name"]]
        shape = tuple(_field(e, "shape", "params entry"))
        if shape != p.value.shape:
            raise CheckpointError(f"checkpoint field 'shape' of {e['name']} is {shape}, expected {p.value.shape}")
        if _field(e, "dtype", "params entry") != "f32":
            raise CheckpointError(f"checkpoint field 'dtype' of {e['name']} must be 'f32'")
        off = _field(e, "offset", "params entry")
        nbytes = 4 * p.value.size
        if not isinstance(off, int) or off < 0 or off + nbytes > len(blob):
            raise CheckpointError(f"checkpoint field 'offset' of {e['name']} is out of range")
        p.value[...] = np.frombuffer(blob, dtype="<f4", count=p.value.size, offset=off).reshape(shape)
    model.checkpoint_extra = manifest.get("extra", {})
    return model
