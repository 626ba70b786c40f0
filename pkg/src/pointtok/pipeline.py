"""End-to-end tokenization: cloud -> normalize -> grid -> patches -> tokens.

Both the CLI and the bindings package go through this module so their
outputs are identical by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, normalize
from .partition import PatchGrid, partition
from .patches import Patch, standardize
from .sequence import (
    FPS_SAMPLING,
    ZYX,
    OrderingStrategy,
    TokenSequence,
    build_sequence,
    default_curve_order,
)


@dataclass(frozen=True)
class TokenizedCloud:
    cloud: PointCloud  # normalized
    grid: PatchGrid
    patches: list[Patch]
    sequence: TokenSequence


def standardize_grid(cloud: PointCloud, grid: PatchGrid) -> list[Patch]:
    """Standardize every realized cell of a grid to plan.m points."""
    return [
        standardize(cloud.points[members], members, grid.plan.m, index=key)
        for key, members in grid.cells.items()
    ]


def resolve_strategy(
    tag: str,
    grid: PatchGrid,
    curve_order: int | None = None,
    sample_count: int | None = None,
) -> OrderingStrategy:
    """Fill strategy parameters from the grid where the caller left them out."""
    if tag in ("hilbert", "morton") and curve_order is None:
        curve_order = default_curve_order(grid.plan.max_split)
    return OrderingStrategy(tag=tag, curve_order=curve_order, sample_count=sample_count)


def tokenize_cloud(
    cloud: PointCloud,
    m: int,
    k: int,
    strategy_tag: str = ZYX,
    separators: bool = True,
    curve_order: int | None = None,
    sample_count: int | None = None,
) -> TokenizedCloud:
    """Run the full pipeline on an (un)normalized cloud."""
    norm = normalize(cloud)
    grid = partition(norm, m, k)
    patches = standardize_grid(norm, grid)
    strategy = resolve_strategy(strategy_tag, grid, curve_order, sample_count)
    seq = build_sequence(
        grid,
        patches,
        strategy,
        emit_separators=separators,
        cloud=norm if strategy_tag == FPS_SAMPLING else None,
    )
    return TokenizedCloud(cloud=norm, grid=grid, patches=patches, sequence=seq)


def tokenize_points(
    points: np.ndarray,
    m: int,
    k: int,
    strategy_tag: str = ZYX,
    separators: bool = True,
    source_id: str = "",
    **kwargs,
) -> TokenizedCloud:
    """Tokenize a raw (N, 6) array; convenience wrapper over tokenize_cloud."""
    cloud = PointCloud(np.asarray(points, dtype=np.float64), source_id=source_id)
    return tokenize_cloud(cloud, m, k, strategy_tag, separators, **kwargs)
