"""Synthetic attention tensor sets with a planted segmentation.

Each tensor's slice at (I, J) blends a uniform distribution over the
pixels of (I, J)'s region with a uniform floor over all pixels,
controlled by the noise level; noise > 0 additionally applies seeded
multiplicative jitter per slice (independent Gamma draws with shape
1/noise, i.e. a Dirichlet-style perturbation) before renormalizing.

Random scenes are axis-aligned mosaics aligned to the coarsest block
grid. Alignment makes all resolutions see exactly the same regions, and
axis-aligned (stair-free) boundaries keep the end-to-end argmax exact:
at a staircase corner, a neighbor region's interpolated coarse maps can
outweigh the home region's own evidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor_io import AttentionTensor, ManifestEntry, TensorSetManifest

DEFAULT_CENSUS = {64: 5, 32: 5, 16: 5, 8: 1}


@dataclass
class PlantedScene:
    resolution: int
    region_map: np.ndarray  # int32 (resolution, resolution), labels 0..K-1
    noise: float  # blend toward uniform plus jitter strength, in [0, 1]
    seed: int

    @property
    def num_regions(self) -> int:
        return int(self.region_map.max()) + 1

    def validate(self) -> None:
        r = self.resolution
        if self.region_map.shape != (r, r):
            raise ValueError("region map shape does not match resolution")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")
        if self.region_map.min() < 0:
            raise ValueError("region labels must be nonnegative")
        present = np.unique(self.region_map)
        if len(present) != self.num_regions:
            raise ValueError("every region label in 0..K-1 must be non-empty")


@dataclass
class SynthTensorSet:
    tensors: list[AttentionTensor]
    manifest: TensorSetManifest
    dropped: list[tuple[int, int]] = field(default_factory=list)
    # (layer_id, region) pairs lost to downsampling at that layer


def _split_rect(rect, count, rng, jitter):
    """Recursively split a rect into ``count`` near-equal rectangles.

    Cuts run across the longer side at the position proportional to the
    region counts assigned to each child, with optional +-1 jitter. Keeping
    areas near-equal matters: downstream argmax recovery tolerates only
    modest area ratios between touching regions before a small region's
    interpolated coarse maps outweigh a large neighbor's own evidence.
    """
    if count == 1:
        return [rect]
    n1 = count // 2
    n2 = count - n1
    if bool(rng.integers(0, 2)):
        n1, n2 = n2, n1
    x, y, w, h = rect
    along_x = w > h or (w == h and bool(rng.integers(0, 2)))
    side = w if along_x else h
    ideal = side * n1 / count
    options = [c for c in {round(ideal) + d for d in (-jitter, 0, jitter)}
               if n1 <= c <= side - n2]
    lo = side * n1 / count - 0.75
    hi = side * n1 / count + 0.75
    safe = [c for c in options if lo <= c <= hi] or [
        min(max(round(ideal), n1), side - n2)
    ]
    cut = int(sorted(safe)[rng.integers(0, len(safe))])
    if along_x:
        first, second = (x, y, cut, h), (x + cut, y, w - cut, h)
    else:
        first, second = (x, y, w, cut), (x, y + cut, w, h - cut)
    return _split_rect(first, n1, rng, jitter) + _split_rect(second, n2, rng, jitter)


def random_scene(
    num_regions: int,
    resolution: int = 64,
    seed: int = 0,
    noise: float = 0.0,
    block: int = 8,
) -> PlantedScene:
    """Random block-aligned mosaic of ``num_regions`` near-equal rectangles."""
    if resolution % block != 0:
        raise ValueError("block size must divide the scene resolution")
    grid = resolution // block
    if not 1 <= num_regions <= grid * grid:
        raise ValueError(f"num_regions must be in [1, {grid * grid}]")
    rng = np.random.default_rng(seed)
    rects = _split_rect((0, 0, grid, grid), num_regions, rng, jitter=1)

    order = rng.permutation(num_regions)
    blocks = np.zeros((grid, grid), dtype=np.int32)
    for label, (x, y, w, h) in zip(order, rects):
        blocks[y : y + h, x : x + w] = label
    region_map = np.repeat(np.repeat(blocks, block, axis=0), block, axis=1)
    scene = PlantedScene(
        resolution=resolution, region_map=region_map, noise=noise, seed=seed
    )
    scene.validate()
    return scene


def downsample_majority(region_map: np.ndarray, w: int) -> np.ndarray:
    """Majority-vote downsampling; ties go to the lowest label."""
    r = region_map.shape[0]
    if r % w != 0:
        raise ValueError(f"resolution {r} not divisible by {w}")
    f = r // w
    blocks = (
        region_map.reshape(w, f, w, f).transpose(0, 2, 1, 3).reshape(w * w, f * f)
    )
    num = int(region_map.max()) + 1
    votes = np.stack([(blocks == label).sum(axis=1) for label in range(num)])
    return votes.argmax(axis=0).astype(np.int32).reshape(w, w)


def _layer_tensor(
    scene: PlantedScene, w: int, layer_id: int, rng: np.random.Generator
) -> tuple[AttentionTensor, list[int]]:
    region_w = downsample_majority(scene.region_map, w)
    num = scene.num_regions
    alpha = scene.noise
    flat_regions = region_w.ravel()
    cells = w * w

    base = np.full((num, cells), alpha / cells, dtype=np.float32)
    present = np.unique(flat_regions)
    for label in present:
        members = flat_regions == label
        base[label, members] += np.float32((1.0 - alpha) / members.sum())
    dropped = sorted(set(range(num)) - set(int(p) for p in present))

    maps = base[flat_regions]
    if alpha > 0.0:
        jitter = rng.standard_gamma(
            1.0 / alpha, size=maps.shape, dtype=np.float32
        )
        maps *= jitter
    maps /= maps.sum(axis=1, keepdims=True)
    tensor = AttentionTensor(
        layer_id=layer_id, resolution=w, data=maps.reshape(w, w, w, w)
    )
    return tensor, dropped


def generate_tensor_set(
    scene: PlantedScene, census: dict[int, int] | None = None
) -> SynthTensorSet:
    """Deterministically realize the scene as a multi-resolution tensor set."""
    scene.validate()
    if census is None:
        census = DEFAULT_CENSUS
    if scene.resolution not in census:
        raise ValueError(
            f"census must include the scene resolution {scene.resolution}"
        )
    layout = []
    for res in sorted(census, reverse=True):
        if census[res] < 1:
            raise ValueError(f"census count for {res} must be >= 1")
        if scene.resolution % res != 0:
            raise ValueError(
                f"census resolution {res} does not divide scene resolution "
                f"{scene.resolution}"
            )
        layout.extend([res] * census[res])

    streams = np.random.SeedSequence(scene.seed).spawn(len(layout))
    tensors = []
    entries = []
    dropped = []
    for layer_id, res in enumerate(layout):
        tensor, lost = _layer_tensor(
            scene, res, layer_id, np.random.default_rng(streams[layer_id])
        )
        tensors.append(tensor)
        entries.append(
            ManifestEntry(
                layer_id=layer_id,
                resolution=res,
                file=f"layer_{layer_id:02d}_res{res}.adzt",
            )
        )
        dropped.extend((layer_id, region) for region in lost)

    info = (
        f"synth mosaic: regions={scene.num_regions} noise={scene.noise} "
        f"seed={scene.seed}"
    )
    if dropped:
        info += f" dropped={dropped}"
    manifest = TensorSetManifest(
        image_id=f"synthetic-k{scene.num_regions}-seed{scene.seed}",
        latent_resolution=scene.resolution,
        timestep=0,
        extractor_info=info,
        entries=entries,
    )
    return SynthTensorSet(tensors=tensors, manifest=manifest, dropped=dropped)
