"""Patch standardization: every cell becomes exactly M points.

Oversized cells are reduced with farthest point sampling (greedy
max-min over xyz distance, ties to the smallest index); undersized
cells are replicated cyclically. Points inside a patch are sorted by
the (z, y, x, r, g, b) tuple so the flattened vector is independent of
input order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TargetExceedsInput


@dataclass(frozen=True)
class Patch:
    """Exactly M standardized points plus their source indices."""

    index: tuple[int, int, int]
    points: np.ndarray  # (M, 6)
    provenance: np.ndarray  # (M,) source point indices, duplicates allowed

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        prov = np.asarray(self.provenance, dtype=np.int64)
        if pts.ndim != 2 or pts.shape[1] != 6:
            raise ValueError(f"patch points must be (M, 6), got {pts.shape}")
        if prov.shape != (pts.shape[0],):
            raise ValueError("provenance length must match point count")
        pts.setflags(write=False)
        prov.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "provenance", prov)

    @property
    def m(self) -> int:
        return self.points.shape[0]


def _sq_dist_to(xyz: np.ndarray, ref: np.ndarray) -> np.ndarray:
    # Columnwise (dx*dx + dy*dy) + dz*dz, matching the scalar oracle's
    # operation order exactly so tie-breaking is reproducible.
    dx = xyz[:, 0] - ref[0]
    dy = xyz[:, 1] - ref[1]
    dz = xyz[:, 2] - ref[2]
    return dx * dx + dy * dy + dz * dz


def fps(points: np.ndarray, target: int, seed_index: int) -> np.ndarray:
    """Greedy farthest point sampling over xyz coordinates.

    Returns `target` distinct indices starting at `seed_index`; each
    step picks the point maximizing its minimum distance to the
    selected set, ties broken by smallest index.
    """
    pts = np.asarray(points, dtype=np.float64)
    xyz = pts[:, 0:3] if pts.shape[1] >= 3 else pts
    n = xyz.shape[0]
    if not 1 <= target <= n:
        raise TargetExceedsInput(f"target {target} for {n} candidate points")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed index {seed_index} out of range")

    selected = np.empty(target, dtype=np.int64)
    selected[0] = seed_index
    min_d2 = _sq_dist_to(xyz, xyz[seed_index])
    min_d2[seed_index] = -np.inf
    for t in range(1, target):
        nxt = int(np.argmax(min_d2))  # first occurrence == smallest index
        selected[t] = nxt
        np.minimum(min_d2, _sq_dist_to(xyz, xyz[nxt]), out=min_d2)
        min_d2[nxt] = -np.inf
    return selected


def nearest_centroid_index(points: np.ndarray) -> int:
    """Index of the point closest to the xyz centroid (ties: smallest)."""
    xyz = np.asarray(points, dtype=np.float64)[:, 0:3]
    centroid = xyz.mean(axis=0)
    return int(np.argmin(_sq_dist_to(xyz, centroid)))


def canonical_order(points: np.ndarray) -> np.ndarray:
    """Sort permutation by the (z, y, x, r, g, b) tuple, ascending."""
    p = np.asarray(points)
    return np.lexsort((p[:, 5], p[:, 4], p[:, 3], p[:, 0], p[:, 1], p[:, 2]))


def standardize(
    cell_points: np.ndarray,
    cell_member_indices: np.ndarray,
    m: int,
    index: tuple[int, int, int] = (0, 0, 0),
) -> Patch:
    """Force a non-empty cell to exactly m points.

    FPS (seeded at the point nearest the centroid) shrinks oversized
    cells; cyclic replication grows undersized ones. The result is
    canonically sorted.
    """
    pts = np.asarray(cell_points, dtype=np.float64)
    members = np.asarray(cell_member_indices, dtype=np.int64)
    n = pts.shape[0]
    if n < 1:
        raise ValueError("cell must be non-empty")
    if members.shape != (n,):
        raise ValueError("member indices must match cell points")
    if m < 1:
        raise ValueError("m must be >= 1")

    if n > m:
        keep = fps(pts, m, nearest_centroid_index(pts))
        chosen, prov = pts[keep], members[keep]
    elif n < m:
        reps = np.arange(m, dtype=np.int64) % n
        chosen, prov = pts[reps], members[reps]
    else:
        chosen, prov = pts, members

    order = canonical_order(chosen)
    return Patch(index=index, points=chosen[order], provenance=prov[order])


def flatten(patch: Patch) -> np.ndarray:
    """Row-major flattening to a length M·6 vector."""
    return patch.points.reshape(-1).copy()
