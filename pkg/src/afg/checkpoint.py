"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    bytes 0..7    magic b"AFGCKPT1"
    bytes 8..15   uint64 header length H
    bytes 16..    UTF-8 JSON header of length H
    then          raw parameter buffers, C-order, little-endian, at the
                  offsets the header manifest states (relative to data start)

Header keys: format_version, model_config, params (list of
{name, shape, dtype, offset, trainable}), adapters (list of
{target, r, alpha, base_trainable}). Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .lora import LoraAdapter
from .model import Model, ModelConfig
from .numerics import ParamStore
from .tokenizer import CharTokenizer

MAGIC = b"AFGCKPT1"
FORMAT_VERSION = 1


def save_checkpoint(model: Model, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    store = model.store
    manifest = []
    buffers = []
    offset = 0
    for name in store.names():
        t = store[name]
        arr = np.ascontiguousarray(t.data)
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        manifest.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.str.replace(">", "<"),
                "offset": offset,
                "trainable": bool(t.requires_grad),
            }
        )
        buffers.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "params": manifest,
        "adapters": [
            {
                "target": a.target,
                "r": a.r,
                "alpha": a.alpha,
                "base_trainable": a.base_trainable,
            }
            for _, a in sorted(store.adapters.items())
        ],
    }
    header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for raw in buffers:
            f.write(raw)


def load_checkpoint(path) -> Model:
    path = Path(path)
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    if header["format_version"] != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {header['format_version']}")
    config = ModelConfig(**header["model_config"])
    data = blob[16 + hlen :]
    dtype = np.dtype(header["params"][0]["dtype"]) if header["params"] else np.float64
    store = ParamStore(dtype=dtype)
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        edt = np.dtype(entry["dtype"])
        arr = np.frombuffer(data, dtype=edt, count=int(np.prod(shape)), offset=entry["offset"])
        store.add(entry["name"], arr.reshape(shape).copy(), trainable=entry["trainable"])
    for a in header["adapters"]:
        store.adapters[a["target"]] = LoraAdapter(
            target=a["target"], r=a["r"], alpha=a["alpha"], base_trainable=a["base_trainable"]
        )
    return Model(config, store, CharTokenizer(config.charset))
