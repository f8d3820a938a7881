"""Self-describing model checkpoints.

Layout: magic "ATCK", version u32, header length u64, JSON header, raw blob.
The header carries the full model config, the charset, and a directory of
tensors (name, shape, dtype, byte offset); tensor bytes are little-endian,
concatenated in directory order. Everything needed to rebuild and decode is
inside the file.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .attention import AttnConfig
from .charset import Charset
from .encoder import EncoderConfig
from .model import Model, ModelConfig

CHECKPOINT_MAGIC = b"ATCK"
CHECKPOINT_VERSION = 1


def _config_to_dict(cfg: ModelConfig) -> dict:
    e, a = cfg.encoder, cfg.attn
    return {
        "encoder": {
            "in_dim": e.in_dim, "layers": e.layers, "cells_per_dir": e.cells_per_dir,
            "bidirectional": e.bidirectional, "stack": e.stack, "skip": e.skip,
            "proj_dim": e.proj_dim,
        },
        "attn": {
            "tau": a.tau, "mode": a.mode, "n": a.n, "K": a.K,
            "n_f": a.n_f, "w_f": a.w_f, "gamma": a.gamma,
        },
    }


def _config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(**d["encoder"]),
        attn=AttnConfig(**d["attn"]),
    )


def save_checkpoint(path, model: Model, charset: Charset) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, t in model.named_parameters():
        arr = np.ascontiguousarray(t.data)
        dtype = "<f8" if arr.dtype == np.float64 else "<f4"
        raw = arr.astype(dtype).tobytes()
        entries.append({
            "name": name, "shape": list(arr.shape), "dtype": dtype,
            "offset": offset, "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = {
        "config": _config_to_dict(model.cfg),
        "charset": {
            "symbols": charset.symbols,
            "blank_id": charset.blank_id,
            "space_id": charset.space_id,
        },
        "tensors": entries,
    }
    hbytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[Model, Charset]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        blob = fh.read()

    cfg = _config_from_dict(header["config"])
    cs = Charset(**header["charset"])
    model = Model(cfg, np.random.default_rng(0))  # weights replaced below

    arrays = {}
    for e in header["tensors"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise ValueError(f"checkpoint truncated at tensor {e['name']}")
        arrays[e["name"]] = np.frombuffer(raw, dtype=e["dtype"]).reshape(e["shape"]).astype(np.float64)

    loaded = set()
    for name, t in model.named_parameters():
        if name not in arrays:
            raise ValueError(f"checkpoint missing tensor {name}")
        if tuple(arrays[name].shape) != t.data.shape:
            raise ValueError(
                f"tensor {name}: checkpoint shape {arrays[name].shape} != model {t.data.shape}"
            )
        t.data = arrays[name].copy()
        loaded.add(name)
    extra = set(arrays) - loaded
    if extra:
        raise ValueError(f"checkpoint has unknown tensors: {sorted(extra)}")
    return model, cs
