import numpy as np
import pytest

from pointtok import PointCloud


def lattice_cloud(nz=2, ny=3, nx=3, per_cell=8, spread=0.02) -> PointCloud:
    """Clusters of `per_cell` points centered on a nz*ny*nx grid of cells.

    Cluster offsets are the 8 corners of a small cube, so point counts
    and cell membership are exact by construction.
    """
    offsets = (
        np.array([((i >> 2) & 1, (i >> 1) & 1, i & 1) for i in range(8)], float) - 0.5
    ) * spread
    rows = []
    for iz in range(nz):
        for iy in range(ny):
            for ix in range(nx):
                center = np.array(
                    [(ix + 0.5) / nx, (iy + 0.5) / ny, (iz + 0.5) / nz]
                )
                for j in range(per_cell):
                    rows.append([*(center + offsets[j % 8]), 0.5, 0.5, 0.5])
    return PointCloud(np.array(rows))


def random_cloud(rng: np.random.Generator, n: int) -> PointCloud:
    pts = np.empty((n, 6))
    pts[:, 0:3] = rng.random((n, 3))
    pts[:, 3:6] = rng.random((n, 3))
    return PointCloud(pts)


@pytest.fixture
def lattice_2x3x3():
    return lattice_cloud()
