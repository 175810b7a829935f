"""Checkpoint file format.

A file is one header line ``bridgeprune-checkpoint <version> <manifest bytes>``,
a JSON manifest, and a single raw blob of little-endian floats. The manifest
lists each tensor's group, name, shape, dtype, offset and byte length along
with the layer list, training config, epoch, RNG state and free-form
metadata.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointManifestError, CheckpointTensorError, CheckpointVersionError
from .graph import Graph, LayerSpec
from .train import OptimizerState

MAGIC = "bridgeprune-checkpoint"
VERSION = 1
_DTYPES = {"<f4": np.float32, "<f8": np.float64}


@dataclass
class Checkpoint:
    graph: Graph
    opt: OptimizerState | None = None
    epoch: int = 0
    config: dict = field(default_factory=dict)
    rng_state: dict | None = None
    meta: dict = field(default_factory=dict)


def _tensor_groups(ck):
    groups = [("params", ck.graph.params), ("buffers", ck.graph.buffers)]
    if ck.opt is not None:
        groups.append(("velocity", ck.opt.velocity))
    return groups


def dumps(ck):
    entries, blobs, offset = [], [], 0
    for group, store in _tensor_groups(ck):
        for name, arr in store.items():
            a = np.ascontiguousarray(arr)
            dt = "<f8" if a.dtype == np.float64 else "<f4"
            raw = a.astype(dt).tobytes()
            entries.append({"group": group, "name": name, "shape": list(a.shape), "dtype": dt,
                            "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
    manifest = {
        "version": VERSION,
        "input_shape": list(ck.graph.input_shape),
        "layers": [l.to_dict() for l in ck.graph.layers],
        "tensors": entries,
        "epoch": ck.epoch,
        "config": ck.config,
        "rng_state": ck.rng_state,
        "meta": ck.meta,
        "optimizer": None if ck.opt is None else {"step": ck.opt.step, "lr": ck.opt.lr},
        "blob_bytes": offset,
    }
    body = json.dumps(manifest, sort_keys=True, indent=1).encode()
    return f"{MAGIC} {VERSION} {len(body)}\n".encode() + body + b"".join(blobs)


def loads(raw):
    nl = raw.find(b"\n")
    try:
        magic, version, size = raw[:nl].decode().split()
        version, size = int(version), int(size)
    except (ValueError, UnicodeDecodeError):
        raise CheckpointManifestError("missing or malformed checkpoint header") from None
    if magic != MAGIC:
        raise CheckpointManifestError(f"not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this build reads {VERSION}")
    try:
        man = json.loads(raw[nl + 1: nl + 1 + size].decode())
        layers = [LayerSpec.from_dict(d) for d in man["layers"]]
        entries = man["tensors"]
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointManifestError(f"corrupt manifest: {e}") from None
    blob = memoryview(raw)[nl + 1 + size:]
    stores = {"params": {}, "buffers": {}, "velocity": {}}
    for e in entries:
        name = e["name"]
        if e["dtype"] not in _DTYPES or e["group"] not in stores:
            raise CheckpointManifestError(f"tensor {name!r}: bad dtype or group")
        dt = np.dtype(_DTYPES[e["dtype"]]).newbyteorder("<")
        count = int(np.prod(e["shape"]))
        if e["nbytes"] != count * dt.itemsize:
            raise CheckpointTensorError(name, f"byte length {e['nbytes']} does not match shape {e['shape']}")
        if e["offset"] + e["nbytes"] > len(blob):
            raise CheckpointTensorError(name, "blob truncated")
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=e["offset"]).reshape(e["shape"])
        stores[e["group"]][name] = arr.astype(arr.dtype.newbyteorder("="))
    if len(blob) != man.get("blob_bytes", len(blob)):
        raise CheckpointManifestError(f"blob has {len(blob)} bytes, manifest expects {man['blob_bytes']}")
    graph = Graph(layers, tuple(man["input_shape"]), stores["params"], stores["buffers"])
    graph.check()
    opt = None
    if man.get("optimizer") is not None:
        opt = OptimizerState(stores["velocity"], man["optimizer"]["step"], man["optimizer"]["lr"])
    return Checkpoint(graph, opt, man["epoch"], man["config"], man["rng_state"], man["meta"])


def save_checkpoint(path, ck):
    """Write atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(ck))
    os.replace(tmp, path)


def load_checkpoint(path):
    return loads(Path(path).read_bytes())
