"""Multi-resolution attention aggregation.

Every layer's attention maps are bilinearly upsampled to the target
resolution, summed with per-tensor weights proportional to their source
resolution, and renormalized per slice into a single aggregated tensor
whose slices are again probability maps.

Interpolation uses half-pixel sample centers: the source coordinate of
output pixel p is ``(p + 0.5) * w / target - 0.5``, clamped to
``[0, w - 1]``. Proposal geometry downstream depends on this convention,
so it is fixed here and reused by the mask stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_io import AttentionTensor


@dataclass
class WeightVector:
    """Per-tensor aggregation weights summing to 1."""

    weights: np.ndarray  # float64, one entry per tensor

    def validate(self) -> None:
        if self.weights.ndim != 1 or self.weights.size == 0:
            raise ValueError("weights must be a non-empty 1-D vector")
        if (self.weights < 0).any():
            raise ValueError("weights must be nonnegative")
        total = float(self.weights.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total}, expected 1 within 1e-9")


@dataclass
class AggregatedTensor:
    """Resolution-unified attention tensor; every slice sums to 1."""

    target_resolution: int
    data: np.ndarray  # float64, shape (t, t, t, t)

    @property
    def maps(self) -> np.ndarray:
        """All slices as rows: shape (t*t, t*t), row-major over (I, J)."""
        t = self.target_resolution
        return self.data.reshape(t * t, t * t)

    def validate(self) -> None:
        t = self.target_resolution
        if self.data.shape != (t, t, t, t):
            raise ValueError(f"data shape {self.data.shape} != target {t}")
        if not np.isfinite(self.data).all() or (self.data < 0).any():
            raise ValueError("aggregated tensor must be finite and nonnegative")
        sums = self.maps.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-5:
            raise ValueError("aggregated slices must sum to 1 within 1e-5")


def interp_matrix(source: int, target: int) -> np.ndarray:
    """Row-stochastic (target, source) matrix realizing 1-D half-pixel
    bilinear interpolation; target == source yields the identity."""
    if target < source:
        raise ValueError(f"target {target} < source {source}")
    if source < 1:
        raise ValueError("source size must be >= 1")
    coords = (np.arange(target, dtype=np.float64) + 0.5) * source / target - 0.5
    coords = np.clip(coords, 0.0, source - 1.0)
    lo = np.floor(coords).astype(np.int64)
    lo = np.minimum(lo, source - 1)
    hi = np.minimum(lo + 1, source - 1)
    frac = coords - lo
    matrix = np.zeros((target, source), dtype=np.float64)
    rows = np.arange(target)
    matrix[rows, lo] += 1.0 - frac
    matrix[rows, hi] += frac
    return matrix


def upsample_bilinear(map2d: np.ndarray, target: int) -> np.ndarray:
    """Upsample a square 2-D map to target x target."""
    if map2d.ndim != 2 or map2d.shape[0] != map2d.shape[1]:
        raise ValueError(f"expected a square 2-D map, got shape {map2d.shape}")
    w = map2d.shape[0]
    if target == w:
        return map2d.astype(np.float64, copy=True)
    m = interp_matrix(w, target)
    return m @ map2d.astype(np.float64) @ m.T


def compute_weights(resolutions: list[int]) -> WeightVector:
    """Resolution-proportional weights: R_k = w_k / sum_j w_j."""
    if not resolutions:
        raise ValueError("resolutions list is empty")
    res = np.asarray(resolutions, dtype=np.float64)
    if (res < 1).any():
        raise ValueError("resolutions must be >= 1")
    vec = WeightVector(weights=res / res.sum())
    vec.validate()
    return vec


def aggregate(
    tensors: list[AttentionTensor],
    weights: WeightVector,
    target: int,
    *,
    normalize: bool = True,
) -> AggregatedTensor:
    """Sum upsampled attention tensors into one target-resolution tensor.

    The slice at output location (I, J) receives tensor k's slice at
    (I // delta_k, J // delta_k) with delta_k = target / w_k, upsampled to
    the target resolution and scaled by weights[k]; contributions are
    accumulated in ascending k. With ``normalize`` each output slice is
    divided by its sum afterwards (an all-zero slice becomes uniform).
    """
    weights.validate()
    if len(tensors) != weights.weights.size:
        raise ValueError(
            f"{len(tensors)} tensors but {weights.weights.size} weights"
        )
    for t in tensors:
        if target % t.resolution != 0:
            raise ValueError(
                f"layer {t.layer_id}: resolution {t.resolution} does not divide "
                f"target {target}"
            )
        if t.data.shape != (t.resolution,) * 4:
            raise ValueError(f"layer {t.layer_id}: malformed tensor shape")

    out = np.zeros((target, target, target, target), dtype=np.float64)
    out_blocks = out.reshape(target, target, target * target)
    scratch = None  # reused per full-resolution layer to avoid temporaries
    for k, tensor in enumerate(tensors):
        w = tensor.resolution
        delta = target // w
        r_k = float(weights.weights[k])
        if w == target:
            if scratch is None:
                scratch = np.empty_like(out_blocks)
            np.copyto(scratch, tensor.data.reshape(w, w, -1))  # f32 -> f64
            scratch *= r_k
            out_blocks += scratch
            continue
        m = interp_matrix(w, target)
        up = m @ (tensor.data.astype(np.float64) @ m.T)  # rows, then columns
        up = up.reshape(w, w, target * target)
        up *= r_k
        view = out.reshape(w, delta, w, delta, target * target)
        for a in range(delta):
            for b in range(delta):
                view[:, a, :, b, :] += up
    result = AggregatedTensor(target_resolution=target, data=out)
    if normalize:
        renormalize_slices(result)
    return result


def renormalize_slices(agg: AggregatedTensor) -> None:
    """Divide each slice by its sum in place; zero-sum slices become uniform."""
    t = agg.target_resolution
    flat = agg.maps
    sums = flat.sum(axis=1)
    zero = sums == 0.0
    if zero.any():
        flat[zero] = 1.0 / (t * t)
        sums[zero] = 1.0
    flat /= sums[:, None]
