"""Adaptive hierarchical Z→Y→X partitioning of normalized point clouds.

Split counts per axis are clamp(floor(n / n_target), 1, K) with the
target shrinking down the hierarchy: M·K² for Z layers, M·K for Y rows,
M for X patches. Cell boundaries divide each axis's global range into
equal intervals; intervals are half-open except the last, which is
closed so the axis maximum is not orphaned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import AxisBounds, PointCloud
from .errors import OutOfBounds

BOUNDS_TOL = 1e-9


def compute_splits(n_points: int, n_target: int, k_max: int) -> int:
    """Adaptive split count: clamp(floor(n_points / n_target), 1, k_max)."""
    if n_points < 1 or n_target < 1 or k_max < 1:
        raise ValueError("n_points, n_target and k_max must all be >= 1")
    return max(1, min(k_max, n_points // n_target))


@dataclass(frozen=True)
class SplitPlan:
    """Per-axis split counts; Y counts per Z layer, X counts per (Z, Y) row."""

    splits_z: int
    splits_y_per_layer: tuple[int, ...]
    splits_x_per_row: tuple[tuple[int, ...], ...]
    m: int
    k: int

    def __post_init__(self):
        if len(self.splits_y_per_layer) != self.splits_z:
            raise ValueError("splits_y_per_layer must have splits_z entries")
        if len(self.splits_x_per_row) != self.splits_z:
            raise ValueError("splits_x_per_row must have splits_z layers")
        for z, sy in enumerate(self.splits_y_per_layer):
            if len(self.splits_x_per_row[z]) != sy:
                raise ValueError(f"layer {z}: X rows do not match splits_y={sy}")
        for s in self._all_counts():
            if not 1 <= s <= self.k:
                raise ValueError(f"split count {s} outside [1, {self.k}]")

    def _all_counts(self):
        yield self.splits_z
        yield from self.splits_y_per_layer
        for row in self.splits_x_per_row:
            yield from row

    @property
    def max_split(self) -> int:
        return max(self._all_counts())


@dataclass(frozen=True)
class PatchGrid:
    """Map from realized (z, y, x) cells to member point indices."""

    cells: dict[tuple[int, int, int], np.ndarray]
    plan: SplitPlan
    bounds: AxisBounds

    def __post_init__(self):
        for (z, y, x), members in self.cells.items():
            if len(members) == 0:
                raise ValueError(f"cell {(z, y, x)} stored empty")
            if not (
                0 <= z < self.plan.splits_z
                and 0 <= y < self.plan.splits_y_per_layer[z]
                and 0 <= x < self.plan.splits_x_per_row[z][y]
            ):
                raise ValueError(f"cell index {(z, y, x)} outside split plan")

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def sorted_cells(self) -> list[tuple[int, int, int]]:
        return sorted(self.cells.keys())

    def dump(self) -> str:
        """One line per cell, `z y x count`, sorted lexicographically."""
        lines = [
            f"{z} {y} {x} {len(self.cells[(z, y, x)])}"
            for z, y, x in self.sorted_cells()
        ]
        return "\n".join(lines) + "\n"


def _axis_indices(values: np.ndarray, lo: float, hi: float, splits: int) -> np.ndarray:
    """Vectorized equal-interval index: min(floor((v-lo)/width), splits-1)."""
    if splits == 1:
        return np.zeros(len(values), dtype=np.int64)
    width = (hi - lo) / splits
    if width == 0.0:
        return np.zeros(len(values), dtype=np.int64)
    idx = np.floor((values - lo) / width).astype(np.int64)
    return np.clip(idx, 0, splits - 1)


def cell_of(
    point: np.ndarray,
    bounds: AxisBounds,
    splits: tuple[int, int, int],
) -> tuple[int, int, int]:
    """Cell index (z, y, x) of a single point under per-axis split counts.

    `splits` is ordered (splits_z, splits_y, splits_x). Raises OutOfBounds
    if the point lies outside `bounds` by more than 1e-9.
    """
    p = np.asarray(point, dtype=np.float64)
    if p.shape != (3,):
        raise ValueError("point must be a 3-vector (x, y, z)")
    if (p < bounds.min - BOUNDS_TOL).any() or (p > bounds.max + BOUNDS_TOL).any():
        raise OutOfBounds(f"point {p.tolist()} outside bounds")
    out = []
    for axis, n_splits in zip((2, 1, 0), splits):  # z, y, x storage columns
        idx = _axis_indices(
            p[axis : axis + 1], bounds.min[axis], bounds.max[axis], n_splits
        )
        out.append(int(idx[0]))
    return (out[0], out[1], out[2])


def partition(
    cloud: PointCloud,
    m: int,
    k: int,
    *,
    global_counts: bool = False,
) -> PatchGrid:
    """Partition a normalized cloud into the adaptive (z, y, x) grid.

    Split counts derive from the parent layer/row populations; pass
    `global_counts=True` to always use the full cloud size instead (the
    ablatable always-global variant). Boundaries always divide the global
    per-axis range. Only non-empty cells are stored; member index lists
    preserve input order.
    """
    if m < 1 or k < 1:
        raise ValueError("m and k must be >= 1")
    bounds = AxisBounds.of_cloud(cloud)
    xs, ys, zs = cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]
    n = cloud.n

    splits_z = compute_splits(n, m * k * k, k)
    z_idx = _axis_indices(zs, bounds.min[2], bounds.max[2], splits_z)

    y_idx = np.zeros(n, dtype=np.int64)
    splits_y_per_layer = []
    for z in range(splits_z):
        mask = z_idx == z
        count = int(mask.sum())
        basis = n if global_counts else count
        sy = compute_splits(basis, m * k, k) if basis > 0 else 1
        splits_y_per_layer.append(sy)
        if count:
            y_idx[mask] = _axis_indices(ys[mask], bounds.min[1], bounds.max[1], sy)

    x_idx = np.zeros(n, dtype=np.int64)
    splits_x_per_row = []
    for z in range(splits_z):
        row_counts = []
        for y in range(splits_y_per_layer[z]):
            mask = (z_idx == z) & (y_idx == y)
            count = int(mask.sum())
            basis = n if global_counts else count
            sx = compute_splits(basis, m, k) if basis > 0 else 1
            row_counts.append(sx)
            if count:
                x_idx[mask] = _axis_indices(xs[mask], bounds.min[0], bounds.max[0], sx)
        splits_x_per_row.append(tuple(row_counts))

    plan = SplitPlan(
        splits_z=splits_z,
        splits_y_per_layer=tuple(splits_y_per_layer),
        splits_x_per_row=tuple(splits_x_per_row),
        m=m,
        k=k,
    )

    # Group point indices per cell; a stable sort keeps input order inside
    # each cell.
    order = np.lexsort((x_idx, y_idx, z_idx))
    cells: dict[tuple[int, int, int], np.ndarray] = {}
    if n:
        sorted_keys = np.stack(
            [z_idx[order], y_idx[order], x_idx[order]], axis=1
        )
        change = np.nonzero(np.any(np.diff(sorted_keys, axis=0) != 0, axis=1))[0] + 1
        starts = np.concatenate(([0], change))
        ends = np.concatenate((change, [n]))
        for s, e in zip(starts, ends):
            key = (
                int(sorted_keys[s, 0]),
                int(sorted_keys[s, 1]),
                int(sorted_keys[s, 2]),
            )
            members = np.sort(order[s:e])  # restore input order
            members.setflags(write=False)
            cells[key] = members
    return PatchGrid(cells=cells, plan=plan, bounds=bounds)
