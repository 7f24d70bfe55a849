"""Label masks: non-maximum suppression over proposals, region selection,
overlay rendering, and the mask file formats.

Masks are exported as 8-bit PGM (P5) while the label count fits, and as a
raw little-endian u16 grid behind an 8-byte width/height header otherwise.
Overlays are written as 8-bit RGB PNG through a dependency-free encoder
(stored DEFLATE blocks) so identical inputs always produce identical
bytes.
"""

from __future__ import annotations

import colorsys
import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .attention_core import interp_matrix
from .merging import ProposalList


@dataclass
class LabelMask:
    width: int
    height: int
    labels: np.ndarray  # int32, shape (height, width)
    num_labels: int

    def validate(self) -> None:
        if self.labels.shape != (self.height, self.width):
            raise ValueError("label grid shape does not match width/height")
        if self.num_labels < 1:
            raise ValueError("num_labels must be >= 1")
        if self.labels.min() < 0 or self.labels.max() >= self.num_labels:
            raise ValueError("labels out of range [0, num_labels)")


@dataclass
class BinaryMask:
    width: int
    height: int
    membership: np.ndarray  # bool, shape (height, width)


def nms_mask(proposals: ProposalList, out_width: int, out_height: int) -> LabelMask:
    """Per-pixel argmax over upsampled proposals; ties pick the lowest index."""
    n = len(proposals)
    if n < 1:
        raise ValueError("proposal list is empty")
    res = proposals.resolution
    if out_width < res or out_height < res:
        raise ValueError(
            f"output {out_width}x{out_height} smaller than proposal resolution {res}"
        )
    m_y = None if out_height == res else interp_matrix(res, out_height)
    m_x = None if out_width == res else interp_matrix(res, out_width)

    labels = np.zeros((out_height, out_width), dtype=np.int32)
    best = None
    for k in range(n):
        up = proposals.proposals[k]
        if m_y is not None:
            up = m_y @ up
        if m_x is not None:
            up = up @ m_x.T
        if best is None:
            best = np.array(up, dtype=np.float64, copy=True)
            continue
        better = up > best
        labels[better] = k
        best[better] = up[better]
    return LabelMask(width=out_width, height=out_height, labels=labels, num_labels=n)


def select_region(mask: LabelMask, point: tuple[int, int]) -> BinaryMask:
    """All pixels sharing the label found at ``point`` (x, y)."""
    x, y = point
    if not (0 <= x < mask.width and 0 <= y < mask.height):
        raise ValueError(
            f"point ({x}, {y}) out of bounds for {mask.width}x{mask.height}"
        )
    label = mask.labels[y, x]
    return BinaryMask(
        width=mask.width, height=mask.height, membership=mask.labels == label
    )


def _boundary(grid: np.ndarray) -> np.ndarray:
    """Pixels whose value differs from the left or top neighbor (one-sided,
    so a straight two-region split yields a single 1-pixel line)."""
    edge = np.zeros(grid.shape, dtype=bool)
    edge[:, 1:] |= grid[:, 1:] != grid[:, :-1]
    edge[1:, :] |= grid[1:, :] != grid[:-1, :]
    return edge


def region_palette(n: int) -> np.ndarray:
    """Deterministic, well-separated RGB colors for n regions."""
    colors = []
    for i in range(n):
        hue = (i * 0.6180339887498949) % 1.0
        r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 1.0)
        colors.append((round(r * 255), round(g * 255), round(b * 255)))
    return np.array(colors, dtype=np.uint8)


def render_overlay(
    image: np.ndarray,
    mask: LabelMask,
    selected: BinaryMask | None = None,
    *,
    fill_opacity: float = 0.0,
) -> np.ndarray:
    """Draw region boundaries (green) over ``image``; ``selected`` adds the
    boundary of a reference binary mask in red. ``fill_opacity`` > 0 tints
    each region with a deterministic palette color."""
    if image.shape != (mask.height, mask.width, 3):
        raise ValueError(
            f"image shape {image.shape} does not match mask "
            f"{mask.height}x{mask.width}"
        )
    if not 0.0 <= fill_opacity <= 1.0:
        raise ValueError("fill_opacity must be in [0, 1]")
    out = np.array(image, dtype=np.uint8, copy=True)
    if fill_opacity > 0.0:
        fills = region_palette(mask.num_labels)[mask.labels]
        blended = (1.0 - fill_opacity) * out + fill_opacity * fills
        out = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
    out[_boundary(mask.labels)] = (0, 255, 0)
    if selected is not None:
        if selected.membership.shape != mask.labels.shape:
            raise ValueError("selected mask dimensions do not match")
        out[_boundary(selected.membership.astype(np.uint8))] = (255, 0, 0)
    return out


# ------------------------------------------------------------ file formats

def _atomic_write(path: str | os.PathLike, data: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def pgm_bytes(grid: np.ndarray) -> bytes:
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError("PGM grid must be 2-D")
    if grid.min() < 0 or grid.max() > 255:
        raise ValueError("PGM values must fit in [0, 255]")
    h, w = grid.shape
    return b"P5\n%d %d\n255\n" % (w, h) + grid.astype(np.uint8).tobytes()


def write_pgm(grid: np.ndarray, path: str | os.PathLike) -> None:
    _atomic_write(path, pgm_bytes(grid))


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if not 0 < maxval < 256:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    data = raw[pos : pos + w * h]
    if len(data) != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


RAW16_HEADER = struct.Struct("<II")


def mask_u16_bytes(mask: LabelMask) -> bytes:
    if mask.labels.max() > 0xFFFF:
        raise ValueError("label values exceed u16")
    head = RAW16_HEADER.pack(mask.width, mask.height)
    return head + mask.labels.astype("<u2").tobytes()


def read_mask_u16(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < RAW16_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    w, h = RAW16_HEADER.unpack_from(raw)
    data = raw[RAW16_HEADER.size :]
    if len(data) != 2 * w * h:
        raise ValueError(f"{path}: expected {2 * w * h} payload bytes")
    return np.frombuffer(data, dtype="<u2").reshape(h, w).astype(np.int32)


def write_label_mask(mask: LabelMask, path_base: str | os.PathLike) -> str:
    """Write a label mask, choosing PGM for <= 255 labels, raw u16 above.

    ``path_base`` carries no extension; the chosen one is appended and the
    final path returned.
    """
    mask.validate()
    if mask.num_labels <= 255:
        path = f"{path_base}.pgm"
        write_pgm(mask.labels, path)
    else:
        path = f"{path_base}.u16"
        _atomic_write(path, mask_u16_bytes(mask))
    return path


def load_label_raster(path: str | os.PathLike) -> np.ndarray:
    """Read a label raster previously written as PGM or raw u16."""
    name = os.fspath(path)
    if name.endswith(".u16"):
        return read_mask_u16(name)
    return read_pgm(name).astype(np.int32)


_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    body = tag + payload
    return struct.pack(">I", len(payload)) + body + struct.pack(
        ">I", zlib.crc32(body)
    )


def _deflate_stored(data: bytes) -> bytes:
    """Uncompressed zlib stream with fixed framing; bit-stable everywhere."""
    pieces = [data[i : i + 0xFFFF] for i in range(0, len(data), 0xFFFF)] or [b""]
    out = [b"\x78\x01"]
    for i, piece in enumerate(pieces):
        final = i == len(pieces) - 1
        out.append(b"\x01" if final else b"\x00")
        out.append(struct.pack("<HH", len(piece), len(piece) ^ 0xFFFF))
        out.append(piece)
    out.append(struct.pack(">I", zlib.adler32(data)))
    return b"".join(out)


def png_bytes(image: np.ndarray) -> bytes:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an (h, w, 3) uint8 image")
    h, w, _ = image.shape
    raw = b"".join(b"\x00" + image[r].tobytes() for r in range(h))
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return (
        _PNG_SIG
        + _png_chunk(b"IHDR", ihdr)
        + _png_chunk(b"IDAT", _deflate_stored(raw))
        + _png_chunk(b"IEND", b"")
    )


def write_png(image: np.ndarray, path: str | os.PathLike) -> None:
    _atomic_write(path, png_bytes(image))
