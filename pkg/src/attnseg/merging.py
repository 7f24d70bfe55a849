"""Iterative merging of attention maps into object proposals.

Maps are sampled at an evenly spaced anchor grid; each anchor absorbs
every map within a symmetric-KL threshold and the absorbed sets are
averaged into proposals. Further iterations merge proposals pairwise
under the same threshold. Provenance (which grid cells a proposal
absorbed, with multiplicity) is tracked so every proposal is exactly a
weighted mean of original maps regardless of merge order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention_core import AggregatedTensor


@dataclass
class MergeConfig:
    grid_size: int = 16  # M: anchors per axis
    iterations: int = 1 + 2  # N: anchor pass + proposal passes
    threshold: float = 1.0  # tau, in nats; +inf merges everything
    epsilon: float = 1e-12  # clamp floor applied before KL

    def validate(self, resolution: int) -> None:
        if not 1 <= self.grid_size <= resolution:
            raise ValueError(
                f"grid_size {self.grid_size} out of range [1, {resolution}]"
            )
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if math.isnan(self.threshold) or self.threshold < 0:
            raise ValueError("threshold must be >= 0 (inf allowed)")
        if not 0 < self.epsilon <= 1e-3:
            raise ValueError("epsilon must be in (0, 1e-3]")


@dataclass
class ProposalList:
    """Ordered stack of merged attention maps (object proposals)."""

    resolution: int
    proposals: np.ndarray  # (N_p, t, t) float64, each a distribution
    provenance: list[dict[int, int]] = field(default_factory=list)
    # provenance[p] maps a flat grid index of the source tensor to the
    # number of times that map was absorbed into proposal p

    def __len__(self) -> int:
        return self.proposals.shape[0]

    def validate(self) -> None:
        n = len(self)
        t = self.resolution
        if n < 1:
            raise ValueError("proposal list is empty")
        if self.proposals.shape != (n, t, t):
            raise ValueError("malformed proposal stack")
        if (self.proposals < 0).any():
            raise ValueError("proposals must be nonnegative")
        sums = self.proposals.reshape(n, -1).sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-5:
            raise ValueError("each proposal must sum to 1 within 1e-5")
        if len(self.provenance) != n:
            raise ValueError("provenance length mismatch")


def anchor_grid(grid_size: int, resolution: int) -> list[tuple[int, int]]:
    """Evenly spaced anchor coordinates, row-major over the grid."""
    if not 1 <= grid_size <= resolution:
        raise ValueError(f"grid_size {grid_size} out of range [1, {resolution}]")
    centers = [
        (m * 2 + 1) * resolution // (2 * grid_size) for m in range(grid_size)
    ]
    return [(i, j) for i in centers for j in centers]


def _clamp_renorm(rows: np.ndarray, epsilon: float) -> np.ndarray:
    out = np.maximum(rows, epsilon)
    out /= out.sum(axis=1, keepdims=True)
    return out


def kl_distance(p: np.ndarray, q: np.ndarray, epsilon: float = 1e-12) -> float:
    """Symmetric KL distance 0.5 * (KL(P||Q) + KL(Q||P)) in nats.

    Both arguments are clamped elementwise to >= epsilon and renormalized
    first, so the result is finite for disjoint supports. Computed as
    0.5 * sum((P - Q) * (log P - log Q)), which is exactly symmetric,
    elementwise nonnegative, and exactly 0 for identical inputs.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    if not (np.isfinite(p).all() and np.isfinite(q).all()):
        raise ValueError("non-finite input")
    pc = _clamp_renorm(p.reshape(1, -1), epsilon)[0]
    qc = _clamp_renorm(q.reshape(1, -1), epsilon)[0]
    d = float(0.5 * np.sum((pc - qc) * (np.log(pc) - np.log(qc))))
    return max(0.0, d)  # each summand is >= 0 up to log rounding


def _distance_block(
    p_rows: np.ndarray,
    log_p: np.ndarray,
    h_p: np.ndarray,
    q_rows: np.ndarray,
    log_q: np.ndarray,
    h_q: np.ndarray,
) -> np.ndarray:
    """Pairwise symmetric KL between clamped row sets: (len(p), len(q))."""
    cross_pq = p_rows @ log_q.T
    cross_qp = log_p @ q_rows.T
    d = 0.5 * (h_p[:, None] - cross_pq + h_q[None, :] - cross_qp)
    np.maximum(d, 0.0, out=d)  # distances are nonnegative; clip GEMM rounding
    return d


def _rows_entropy(rows: np.ndarray, log_rows: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", rows, log_rows)


def _group_equal_rows(rows: np.ndarray) -> dict[bytes, np.ndarray]:
    """Indices of bitwise-identical rows, keyed by their raw bytes."""
    groups: dict[bytes, list[int]] = {}
    for i in range(rows.shape[0]):
        groups.setdefault(rows[i].tobytes(), []).append(i)
    return {key: np.array(idx) for key, idx in groups.items()}


def iterative_merge(agg: AggregatedTensor, config: MergeConfig) -> ProposalList:
    """Merge all maps of an aggregated tensor into object proposals.

    Pass 1 absorbs, per anchor, every map within ``threshold`` of it and
    averages the absorbed maps; anchors whose absorbed set is contained in
    an earlier anchor's set (and that lie within the threshold of that
    anchor) collapse into it. Passes 2..iterations greedily merge
    proposals closer than the threshold, weighting by how many maps each
    proposal already absorbed. A threshold of 0 degenerates to exact
    equality of (clamped) maps, so anchors always absorb themselves.
    """
    res = agg.target_resolution
    config.validate(res)
    tau = config.threshold
    maps64 = agg.maps
    n_maps = maps64.shape[0]

    # distance work runs in float32: decisions compare against tau, which
    # is far above float32 noise, and the GEMMs dominate the runtime
    maps32 = maps64.astype(np.float32)
    q = _clamp_renorm(maps32, np.float32(config.epsilon))
    anchors = anchor_grid(config.grid_size, res)
    grid_idx = np.array([i * res + j for i, j in anchors], dtype=np.int64)

    if tau == 0.0:
        groups = _group_equal_rows(q)
        absorbed = np.zeros((len(grid_idx), n_maps), dtype=bool)
        for a, g in enumerate(grid_idx):
            absorbed[a, groups[q[g].tobytes()]] = True
    else:
        log_q = np.log(q)
        h_q = _rows_entropy(q, log_q)
        p_rows = q[grid_idx]
        dist = _distance_block(
            p_rows, log_q[grid_idx], h_q[grid_idx], q, log_q, h_q
        )
        dist[np.arange(len(grid_idx)), grid_idx] = 0.0  # a map to itself
        absorbed = dist <= tau

    # collapse anchors subsumed by an earlier anchor
    kept: list[int] = []
    for a in range(len(grid_idx)):
        merged = False
        for b in kept:
            within = (
                absorbed[b, grid_idx[a]]
                if tau == 0.0
                else dist[b, grid_idx[a]] <= tau
            )
            if within and not (absorbed[a] & ~absorbed[b]).any():
                merged = True  # subset of b: provenance union changes nothing
                break
        if not merged:
            kept.append(a)

    counts = absorbed[kept].astype(np.int64)

    # passes 2..N: greedy pairwise merging of proposals, distances frozen
    # at the start of each pass
    for _ in range(config.iterations - 1):
        if counts.shape[0] <= 1:
            break
        prop_maps = _mean_maps(counts, maps32)
        pc = _clamp_renorm(prop_maps, config.epsilon)
        if tau == 0.0:
            alive = _greedy_pass_equal(pc, counts)
        else:
            log_pc = np.log(pc)
            h_pc = _rows_entropy(pc, log_pc)
            dist = _distance_block(pc, log_pc, h_pc, pc, log_pc, h_pc)
            alive = _greedy_pass(dist, tau, counts)
        counts = counts[alive]

    prop_maps = _mean_maps(counts, maps32)
    prop_maps /= prop_maps.sum(axis=1, keepdims=True)
    provenance = [
        {int(i): int(c) for i, c in zip(np.flatnonzero(row), row[row > 0])}
        for row in counts
    ]
    result = ProposalList(
        resolution=res,
        proposals=prop_maps.reshape(-1, res, res),
        provenance=provenance,
    )
    result.validate()
    return result


def _mean_maps(counts: np.ndarray, maps32: np.ndarray) -> np.ndarray:
    weighted = counts.astype(np.float32) @ maps32
    totals = counts.sum(axis=1, dtype=np.float64)
    out = weighted.astype(np.float64)
    out /= totals[:, None]
    return out


def _greedy_pass(dist: np.ndarray, tau: float, counts: np.ndarray) -> np.ndarray:
    n = dist.shape[0]
    alive = np.ones(n, dtype=bool)
    for i in range(n):
        if not alive[i]:
            continue
        for j in range(i + 1, n):
            if alive[j] and dist[i, j] <= tau:
                counts[i] += counts[j]
                alive[j] = False
    return alive


def _greedy_pass_equal(rows: np.ndarray, counts: np.ndarray) -> np.ndarray:
    n = rows.shape[0]
    alive = np.ones(n, dtype=bool)
    for i in range(n):
        if not alive[i]:
            continue
        for j in range(i + 1, n):
            if alive[j] and np.array_equal(rows[i], rows[j]):
                counts[i] += counts[j]
                alive[j] = False
    return alive
