"""Writers for the tensor interchange format consumed by attnseg.

Layout (little-endian): magic ``ADZT`` | u32 version = 1 | u32 ndim = 4 |
4 x u32 dims (all equal) | float32 payload, row-major in (I, J, y, x).
The manifest is a JSON file listing one ``{layer_id, resolution, file}``
entry per exported layer, with paths relative to the manifest directory.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"ADZT"
VERSION = 1


def tensor_bytes(data: np.ndarray) -> bytes:
    if data.ndim != 4 or len(set(data.shape)) != 1:
        raise ValueError(f"expected a square 4-D tensor, got shape {data.shape}")
    if not np.isfinite(data).all():
        raise ValueError("tensor contains non-finite values")
    w = data.shape[0]
    header = MAGIC + struct.pack("<IIIIII", VERSION, 4, w, w, w, w)
    return header + np.ascontiguousarray(data, dtype="<f4").tobytes()


def write_tensor(data: np.ndarray, path: str | os.PathLike) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(tensor_bytes(data))
    os.replace(tmp, path)


def write_manifest(
    path: str | os.PathLike,
    *,
    image_id: str,
    latent_resolution: int,
    timestep: int,
    extractor_info: str,
    entries: list[dict],
) -> None:
    doc = {
        "image_id": image_id,
        "latent_resolution": latent_resolution,
        "timestep": timestep,
        "extractor_info": extractor_info,
        "entries": entries,
    }
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    os.replace(tmp, path)
