"""Point cloud loading, validation and normalization.

The canonical in-memory representation is an (N, 6) float64 array of
(x, y, z, r, g, b) rows: coordinates are dimensionless, colors live in
[0, 1]. Two disk formats are supported: whitespace-separated XYZ text
(3 or 6 columns, ``#`` comments) and a subset of ASCII PLY.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyCloud, ParseError, UnsupportedFormat


@dataclass(frozen=True)
class PointCloud:
    """N points, each (x, y, z, r, g, b); rgb in [0, 1]."""

    points: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 6:
            raise ValueError(f"expected (N, 6) points array, got shape {pts.shape}")
        if pts.shape[0] < 1:
            raise EmptyCloud("point cloud must contain at least one point")
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite values")
        rgb = pts[:, 3:6]
        if (rgb < 0.0).any() or (rgb > 1.0).any():
            raise ValueError("rgb channels must lie in [0, 1]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, 0:3]

    @property
    def rgb(self) -> np.ndarray:
        return self.points[:, 3:6]


@dataclass(frozen=True)
class AxisBounds:
    """Axis-aligned bounding box; min/max are (x, y, z) vectors."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64)
        hi = np.asarray(self.max, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("bounds must be 3-vectors")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("bounds must be finite")
        if (lo > hi).any():
            raise ValueError("min must not exceed max")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def of_cloud(cls, cloud: PointCloud) -> "AxisBounds":
        return cls(cloud.xyz.min(axis=0), cloud.xyz.max(axis=0))


MID_GRAY = 0.5  # fill for missing color channels


def _parse_row(fields: list[str], line_no: int) -> list[float]:
    """One XYZ row: 3 or 6 numeric columns, rgb defaulting to mid-gray."""
    if len(fields) not in (3, 6):
        raise ParseError(f"expected 3 or 6 columns, got {len(fields)}", line_no)
    try:
        vals = [float(f) for f in fields]
    except ValueError:
        raise ParseError("non-numeric field", line_no) from None
    if not all(np.isfinite(vals)):
        raise ParseError("non-finite coordinate", line_no)
    if len(vals) == 3:
        vals += [MID_GRAY, MID_GRAY, MID_GRAY]
    elif any(c < 0.0 or c > 1.0 for c in vals[3:6]):
        raise ParseError("rgb values must lie in [0, 1]", line_no)
    return vals


def load_xyz(path: str | Path) -> PointCloud:
    """Load whitespace-separated XYZ text; ``#`` lines are comments.

    3-column files get mid-gray color. Raises ParseError with the
    offending line number, EmptyCloud if no points remain.
    """
    path = Path(path)
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            rows.append(_parse_row(stripped.split(), line_no))
    if not rows:
        raise EmptyCloud(f"no points in {path}")
    return PointCloud(np.array(rows, dtype=np.float64), source_id=str(path))


def write_xyz(cloud: PointCloud, path: str | Path) -> None:
    """Write 6-column XYZ text with enough digits to round-trip exactly."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for row in cloud.points:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


_PLY_FLOAT_TYPES = {"float", "float32", "double", "float64"}
_PLY_UCHAR_TYPES = {"uchar", "uint8"}


def load_ply_ascii(path: str | Path) -> PointCloud:
    """Load an ASCII PLY vertex cloud.

    Supports float x/y/z properties plus optional uchar red/green/blue
    (scaled by 1/255). Binary PLY is rejected with UnsupportedFormat.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", errors="replace") as fh:
        lines = fh.read().splitlines()

    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1)

    n_vertices = None
    properties: list[tuple[str, str]] = []  # (type, name) of the vertex element
    in_vertex_element = False
    body_start = None
    for i, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if line.startswith("comment") or not line:
            continue
        if line.startswith("format"):
            if "ascii" not in line:
                raise UnsupportedFormat(f"binary PLY not supported: {line!r}")
            continue
        if line.startswith("element"):
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"malformed element line: {line!r}", i)
            in_vertex_element = parts[1] == "vertex"
            if in_vertex_element:
                try:
                    n_vertices = int(parts[2])
                except ValueError:
                    raise ParseError(f"bad vertex count: {parts[2]!r}", i) from None
            continue
        if line.startswith("property"):
            if in_vertex_element:
                parts = line.split()
                if len(parts) != 3:
                    raise ParseError(f"unsupported property: {line!r}", i)
                properties.append((parts[1], parts[2]))
            continue
        if line == "end_header":
            body_start = i  # 1-based index of end_header; body follows
            break
        raise ParseError(f"unexpected header line: {line!r}", i)

    if body_start is None:
        raise ParseError("missing end_header")
    if n_vertices is None:
        raise ParseError("no vertex element declared")
    if n_vertices < 1:
        raise EmptyCloud(f"PLY declares {n_vertices} vertices")

    names = [name for _, name in properties]
    for coord in ("x", "y", "z"):
        if coord not in names:
            raise ParseError(f"vertex element lacks property '{coord}'")
        ptype = properties[names.index(coord)][0]
        if ptype not in _PLY_FLOAT_TYPES:
            raise UnsupportedFormat(f"property {coord} has non-float type {ptype!r}")
    has_color = all(c in names for c in ("red", "green", "blue"))
    if has_color:
        for c in ("red", "green", "blue"):
            ptype = properties[names.index(c)][0]
            if ptype not in _PLY_UCHAR_TYPES:
                raise UnsupportedFormat(f"property {c} has non-uchar type {ptype!r}")

    body = [
        (idx, ln)
        for idx, ln in enumerate(lines[body_start:], start=body_start + 1)
        if ln.strip()
    ]
    if len(body) < n_vertices:
        raise ParseError(
            f"header declares {n_vertices} vertices but body has {len(body)} rows"
        )

    col = {name: idx for idx, name in enumerate(names)}
    rows = np.empty((n_vertices, 6), dtype=np.float64)
    for v in range(n_vertices):
        line_no, line = body[v]
        fields = line.split()
        if len(fields) != len(names):
            raise ParseError(
                f"expected {len(names)} columns, got {len(fields)}", line_no
            )
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            raise ParseError("non-numeric field", line_no) from None
        rows[v, 0:3] = (vals[col["x"]], vals[col["y"]], vals[col["z"]])
        if has_color:
            rgb = (vals[col["red"]], vals[col["green"]], vals[col["blue"]])
            if any(c < 0 or c > 255 for c in rgb):
                raise ParseError("uchar color out of range", line_no)
            rows[v, 3:6] = np.array(rgb) / 255.0
        else:
            rows[v, 3:6] = MID_GRAY
    return PointCloud(rows, source_id=str(path))


def load_cloud(path: str | Path) -> PointCloud:
    """Dispatch on extension: .ply goes to the PLY reader, anything else XYZ."""
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return load_ply_ascii(path)
    return load_xyz(path)


def normalize(cloud: PointCloud) -> PointCloud:
    """Map coordinates to [0, 1] with a single isotropic scale.

    p' = (p - min) / s with s the longest axis extent, so aspect ratio is
    preserved and the tightest bounding box touches 0 on every axis and 1
    on the longest one. A fully coincident cloud maps to the cube center.
    Idempotent: renormalizing a normalized cloud is a bitwise no-op.
    """
    xyz = cloud.xyz
    lo = xyz.min(axis=0)
    extent = xyz.max(axis=0) - lo
    s = extent.max()
    out = np.empty_like(cloud.points)
    if s == 0.0:
        out[:, 0:3] = 0.5
    else:
        out[:, 0:3] = (xyz - lo) / s
    out[:, 3:6] = cloud.rgb
    return PointCloud(out, source_id=cloud.source_id)
