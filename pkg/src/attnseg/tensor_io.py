"""Reading, writing, and validation of self-attention tensors.

File format (ADZT, little-endian):

    magic   4 bytes  b"ADZT"
    version u32      1
    ndim    u32      4
    dims    4 x u32  (w, w, w, w), all equal
    payload float32, row-major, index order (I, J, y, x)

A tensor holds one self-attention layer: the slice ``data[I, J]`` is the
attention probability map of location (I, J) over all spatial locations,
so every slice must sum to 1.

A tensor-set manifest is a JSON file describing one image's export: a list
of ``{layer_id, resolution, file}`` entries with paths relative to the
manifest's directory.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"ADZT"
VERSION = 1
HEADER_SIZE = 4 + 4 + 4 + 16

# Slice sums may drift from 1 in reduced-precision exports. Drift up to
# SUM_WARN is repaired silently, up to SUM_ERROR repaired with a warning
# count, beyond that the file is considered corrupt.
SUM_WARN = 1e-4
SUM_ERROR = 1e-2


class AdztError(Exception):
    """Base class for tensor file and manifest errors."""


class BadMagic(AdztError):
    pass


class UnsupportedVersion(AdztError):
    pass


class ShapeMismatch(AdztError):
    pass


class NonFiniteValue(AdztError):
    pass


class ManifestError(AdztError):
    pass


class InvalidTensor(AdztError):
    pass


@dataclass
class AttentionTensor:
    """One 4-D self-attention tensor at square resolution ``resolution``."""

    layer_id: int
    resolution: int
    data: np.ndarray  # float32, shape (w, w, w, w), slices sum to 1

    def validate(self) -> None:
        w = self.resolution
        if self.data.shape != (w, w, w, w):
            raise InvalidTensor(
                f"layer {self.layer_id}: data shape {self.data.shape} does not "
                f"match resolution {w}"
            )
        if self.data.dtype != np.float32:
            raise InvalidTensor(f"layer {self.layer_id}: dtype must be float32")
        if not np.isfinite(self.data).all():
            raise InvalidTensor(f"layer {self.layer_id}: non-finite values")
        if (self.data < 0).any():
            raise InvalidTensor(f"layer {self.layer_id}: negative values")
        sums = self.data.reshape(w * w, w * w).sum(axis=1)
        drift = np.abs(sums - 1.0).max() if sums.size else 0.0
        if drift > SUM_WARN:
            raise InvalidTensor(
                f"layer {self.layer_id}: slice sums deviate from 1 by {drift:.2e}"
            )

    def freeze(self) -> "AttentionTensor":
        self.data.flags.writeable = False
        return self


@dataclass
class ManifestEntry:
    layer_id: int
    resolution: int
    file: str


@dataclass
class TensorSetManifest:
    image_id: str
    latent_resolution: int
    timestep: int
    extractor_info: str
    entries: list[ManifestEntry]

    def to_json(self) -> str:
        doc = {
            "image_id": self.image_id,
            "latent_resolution": self.latent_resolution,
            "timestep": self.timestep,
            "extractor_info": self.extractor_info,
            "entries": [
                {"layer_id": e.layer_id, "resolution": e.resolution, "file": e.file}
                for e in self.entries
            ],
        }
        return json.dumps(doc, indent=2)


@dataclass
class LoadedTensorSet:
    tensors: list[AttentionTensor]
    manifest: TensorSetManifest
    renormalized_slices: int = 0
    max_sum_drift: float = 0.0
    per_resolution_counts: dict[int, int] = field(default_factory=dict)


def write_tensor(tensor: AttentionTensor, sink) -> None:
    """Serialize ``tensor`` to a binary sink; round-trips bit-identically."""
    tensor.validate()
    w = tensor.resolution
    header = MAGIC + struct.pack("<IIIIII", VERSION, 4, w, w, w, w)
    sink.write(header)
    payload = np.ascontiguousarray(tensor.data, dtype="<f4")
    sink.write(payload.tobytes())


def write_tensor_file(tensor: AttentionTensor, path: str | os.PathLike) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        write_tensor(tensor, f)
    os.replace(tmp, path)


def read_tensor(source, layer_id: int = 0) -> AttentionTensor:
    """Parse one ADZT tensor; rejects malformed input without partial results."""
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    header = source.read(HEADER_SIZE)
    if len(header) < HEADER_SIZE:
        raise ShapeMismatch(
            f"file truncated inside the {HEADER_SIZE}-byte header "
            f"(got {len(header)} bytes)"
        )
    if header[:4] != MAGIC:
        raise BadMagic(f"bad magic {header[:4]!r} at byte offset 0")
    version, ndim, d0, d1, d2, d3 = struct.unpack("<IIIIII", header[4:28])
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported version {version} at byte offset 4")
    if ndim != 4:
        raise ShapeMismatch(f"ndim is {ndim}, expected 4, at byte offset 8")
    dims = (d0, d1, d2, d3)
    if min(dims) < 1:
        raise ShapeMismatch(f"zero-sized dims {dims} declared at byte offset 12")
    if len(set(dims)) != 1:
        raise ShapeMismatch(
            f"non-square pairing: dims {d0}x{d1}x{d2}x{d3} declared at byte offset 12"
        )
    w = d0
    count = w ** 4
    raw = source.read()
    if len(raw) != 4 * count:
        raise ShapeMismatch(
            f"payload is {len(raw)} bytes at byte offset {HEADER_SIZE}, "
            f"expected {4 * count} for dims {d0}x{d1}x{d2}x{d3}"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(w, w, w, w)
    finite = np.isfinite(data)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.ravel())[0])
        raise NonFiniteValue(
            f"non-finite value at flat index {bad} "
            f"(byte offset {HEADER_SIZE + 4 * bad})"
        )
    return AttentionTensor(layer_id=layer_id, resolution=w, data=data.copy())


def read_tensor_file(path: str | os.PathLike, layer_id: int = 0) -> AttentionTensor:
    with open(path, "rb") as f:
        return read_tensor(f, layer_id=layer_id)


def parse_manifest(doc: dict, *, where: str = "manifest") -> TensorSetManifest:
    def need(key, typ):
        if key not in doc:
            raise ManifestError(f"{where}: missing key {key!r}")
        val = doc[key]
        if not isinstance(val, typ) or isinstance(val, bool):
            raise ManifestError(f"{where}: key {key!r} must be {typ.__name__}")
        return val

    image_id = need("image_id", str)
    latent_resolution = need("latent_resolution", int)
    timestep = need("timestep", int)
    extractor_info = need("extractor_info", str)
    raw_entries = need("entries", list)
    if not raw_entries:
        raise ManifestError(f"{where}: entries list is empty")
    entries = []
    seen = set()
    for i, e in enumerate(raw_entries):
        if not isinstance(e, dict):
            raise ManifestError(f"{where}: entries[{i}] is not an object")
        for key, typ in (("layer_id", int), ("resolution", int), ("file", str)):
            if key not in e or isinstance(e[key], bool) or not isinstance(e[key], typ):
                raise ManifestError(
                    f"{where}: entries[{i}] needs {key!r} of type {typ.__name__}"
                )
        if e["layer_id"] in seen:
            raise ManifestError(f"{where}: duplicate layer_id {e['layer_id']}")
        seen.add(e["layer_id"])
        if e["resolution"] < 1:
            raise ManifestError(f"{where}: entries[{i}] resolution must be >= 1")
        entries.append(
            ManifestEntry(layer_id=e["layer_id"], resolution=e["resolution"], file=e["file"])
        )
    if latent_resolution < 1:
        raise ManifestError(f"{where}: latent_resolution must be >= 1")
    if all(e.resolution != latent_resolution for e in entries):
        raise ManifestError(
            f"{where}: no entry at latent_resolution {latent_resolution}; "
            "the aggregation target must be present"
        )
    return TensorSetManifest(
        image_id=image_id,
        latent_resolution=latent_resolution,
        timestep=timestep,
        extractor_info=extractor_info,
        entries=entries,
    )


def load_tensor_set(manifest_path: str | os.PathLike) -> LoadedTensorSet:
    """Load a manifest and every tensor it references.

    Slices whose sum drifts from 1 by more than ``SUM_WARN`` are counted as
    renormalized; drift beyond ``SUM_ERROR`` is an error. All slices are
    renormalized so the returned tensors satisfy the sum-to-1 invariant
    exactly; tensors are returned read-only.
    """
    manifest_path = os.fspath(manifest_path)
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{manifest_path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ManifestError(f"{manifest_path}: top level must be an object")
    manifest = parse_manifest(doc, where=manifest_path)

    base = os.path.dirname(manifest_path)
    tensors = []
    renormalized = 0
    max_drift = 0.0
    counts: dict[int, int] = {}
    for entry in manifest.entries:
        path = os.path.join(base, entry.file)
        if not os.path.exists(path):
            raise ManifestError(f"missing tensor file: {path}")
        try:
            tensor = read_tensor_file(path, layer_id=entry.layer_id)
        except AdztError as exc:
            raise type(exc)(f"{path}: {exc}") from None
        if tensor.resolution != entry.resolution:
            raise ShapeMismatch(
                f"{path}: resolution {tensor.resolution} does not match "
                f"manifest entry {entry.resolution}"
            )
        if (tensor.data < 0).any():
            raise InvalidTensor(f"{path}: negative attention values")
        w = tensor.resolution
        flat = tensor.data.reshape(w * w, w * w)
        sums = flat.sum(axis=1, dtype=np.float64)
        drift = np.abs(sums - 1.0)
        worst = float(drift.max())
        max_drift = max(max_drift, worst)
        if worst > SUM_ERROR:
            raise InvalidTensor(
                f"{path}: slice sums deviate from 1 by {worst:.2e} (limit {SUM_ERROR})"
            )
        renormalized += int((drift > SUM_WARN).sum())
        data = (flat / sums[:, None]).astype(np.float32).reshape(w, w, w, w)
        tensors.append(
            AttentionTensor(entry.layer_id, w, data).freeze()
        )
        counts[w] = counts.get(w, 0) + 1

    return LoadedTensorSet(
        tensors=tensors,
        manifest=manifest,
        renormalized_slices=renormalized,
        max_sum_drift=max_drift,
        per_resolution_counts=dict(sorted(counts.items(), reverse=True)),
    )


def write_manifest(manifest: TensorSetManifest, path: str | os.PathLike) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(manifest.to_json())
        f.write("\n")
    os.replace(tmp, path)
