"""Checkpoint files: JSON header + concatenated VTEN blocks with an offset index."""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import ShapeError
from ..nd.vten import read_vten_bytes, write_vten_bytes
from .unet import InpaintUNet, ModelConfig

MAGIC = b"ILCK"


def save_checkpoint(path, model: InpaintUNet, step=0, rng_state=None, extra=None):
    params = model.parameters()
    blobs = []
    index = {}
    offset = 0
    for name in sorted(params):
        raw = write_vten_bytes(params[name].data.astype(np.float32))
        index[name] = [offset, len(raw)]
        blobs.append(raw)
        offset += len(raw)
    header = {
        "config": model.config.to_dict(),
        "step": int(step),
        "rng_state": rng_state,
        "index": index,
    }
    if extra:
        header["extra"] = extra
    head = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path, dtype=np.float32):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ShapeError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        blob = fh.read()
    config = ModelConfig.from_dict(header["config"])
    model = InpaintUNet(config, dtype=dtype)
    params = model.parameters()
    index = header["index"]
    if set(index) != set(params):
        missing = set(params) ^ set(index)
        raise ShapeError(f"checkpoint/model parameter mismatch: {sorted(missing)[:5]}")
    for name, (off, size) in index.items():
        arr = read_vten_bytes(blob[off:off + size])
        if arr.shape != params[name].shape:
            raise ShapeError(f"{name}: checkpoint shape {arr.shape} vs model {params[name].shape}")
        params[name].data = arr.astype(dtype)
    return model, header
