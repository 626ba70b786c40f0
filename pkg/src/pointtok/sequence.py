"""Token sequence construction, ordering strategies, and export.

The default ZYX ordering walks realized cells lexicographically and
drops a LSEP between Z layers and an RSEP between Y rows. Alternate
orderings (Hilbert / Morton space-filling curves, global-FPS patch
sampling) exist for the ablation harness and emit no separators.

Wire formats:
  token text   one token per line (PCSTART, PATCH <slot>, LSEP, RSEP,
               PCEND, TEXT <id>); a leading `# ordering=<tag>` comment
               carries the strategy tag for round-trips.
  matrix       16-byte header (magic "PTKM", u32 rows, u32 cols, u32
               reserved), then row-major float64 little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .errors import IndexOutOfRange, IoError, ParseError, StrategyParamMissing
from .ioutil import atomic_write
from .partition import PatchGrid
from .patches import Patch, flatten, fps, nearest_centroid_index, standardize

PCSTART = "PCSTART"
PCEND = "PCEND"
PATCH = "PATCH"
LSEP = "LSEP"
RSEP = "RSEP"
TEXT = "TEXT"

_VALUED_KINDS = {PATCH, TEXT}
_KINDS = {PCSTART, PCEND, PATCH, LSEP, RSEP, TEXT}

ZYX = "zyx"
HILBERT = "hilbert"
MORTON = "morton"
FPS_SAMPLING = "fps"

MATRIX_MAGIC = b"PTKM"
MATRIX_HEADER = struct.Struct("<4sIII")  # magic, rows, cols, reserved


@dataclass(frozen=True)
class Token:
    kind: str
    value: int | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown token kind {self.kind!r}")
        if (self.value is not None) != (self.kind in _VALUED_KINDS):
            raise ValueError(f"token {self.kind} value mismatch: {self.value!r}")

    def line(self) -> str:
        return self.kind if self.value is None else f"{self.kind} {self.value}"


@dataclass(frozen=True)
class OrderingStrategy:
    """Patch ordering: zyx | hilbert | morton | fps.

    `curve_order` is required for the space-filling curves;
    `sample_count` optionally overrides the FPS baseline's patch count
    (default: as many patches as the grid realizes).
    """

    tag: str
    curve_order: int | None = None
    sample_count: int | None = None

    def __post_init__(self):
        if self.tag not in (ZYX, HILBERT, MORTON, FPS_SAMPLING):
            raise ValueError(f"unknown ordering strategy {self.tag!r}")
        if self.curve_order is not None and self.curve_order < 1:
            raise ValueError("curve order must be >= 1")
        if self.sample_count is not None and self.sample_count < 1:
            raise ValueError("sample count must be >= 1")


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[Token, ...]
    patch_matrix: np.ndarray  # (P, M*6)
    ordering: str

    def __post_init__(self):
        mat = np.asarray(self.patch_matrix, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] < 1:
            raise ValueError("patch matrix must be (P >= 1, M*6)")
        violations = validate_grammar(list(self.tokens))
        if violations:
            raise ValueError("invalid token stream: " + "; ".join(violations))
        n_patches = sum(1 for t in self.tokens if t.kind == PATCH)
        if n_patches != mat.shape[0]:
            raise ValueError(
                f"{n_patches} PATCH tokens but matrix has {mat.shape[0]} rows"
            )
        mat.setflags(write=False)
        object.__setattr__(self, "patch_matrix", mat)
        object.__setattr__(self, "tokens", tuple(self.tokens))

    @property
    def n_patches(self) -> int:
        return self.patch_matrix.shape[0]

    def count(self, kind: str) -> int:
        return sum(1 for t in self.tokens if t.kind == kind)

    def with_text(self, ids: list[int]) -> "TokenSequence":
        """Append TEXT tokens (question/answer ids) after the envelope."""
        extra = tuple(Token(TEXT, int(i)) for i in ids)
        return TokenSequence(self.tokens + extra, self.patch_matrix, self.ordering)


def validate_grammar(tokens: list[Token]) -> list[str]:
    """Structural checks on a token stream; returns violation messages."""
    bad: list[str] = []
    if not tokens:
        return ["empty token stream"]
    if tokens[0].kind != PCSTART:
        bad.append("first token must be PCSTART")
    if sum(1 for t in tokens if t.kind == PCSTART) != 1:
        bad.append("exactly one PCSTART required")
    ends = [i for i, t in enumerate(tokens) if t.kind == PCEND]
    if len(ends) != 1:
        bad.append("exactly one PCEND required")
        return bad
    end = ends[0]
    inside = tokens[1:end]
    if any(t.kind not in (PATCH, LSEP, RSEP) for t in inside):
        bad.append("only PATCH/LSEP/RSEP allowed inside the envelope")
    if any(t.kind != TEXT for t in tokens[end + 1 :]):
        bad.append("only TEXT tokens allowed after PCEND")
    slots = [t.value for t in inside if t.kind == PATCH]
    if not slots:
        bad.append("at least one PATCH required")
    elif slots != list(range(len(slots))):
        bad.append("PATCH slots must be 0..P-1 strictly increasing")
    for i, t in enumerate(inside):
        if t.kind in (LSEP, RSEP):
            if i == 0:
                bad.append(f"leading separator {t.kind}")
            elif i == len(inside) - 1:
                bad.append(f"trailing separator {t.kind}")
            elif inside[i - 1].kind in (LSEP, RSEP):
                bad.append("consecutive separators")
    return bad


def morton_rank(index: tuple[int, int, int], order: int) -> int:
    """Bit-interleaved Z-order rank with z most significant per group."""
    _check_index(index, order)
    z, y, x = index
    rank = 0
    for bit in range(order):
        rank |= ((z >> bit) & 1) << (3 * bit + 2)
        rank |= ((y >> bit) & 1) << (3 * bit + 1)
        rank |= ((x >> bit) & 1) << (3 * bit)
    return rank


def hilbert_rank(index: tuple[int, int, int], order: int) -> int:
    """3D Hilbert curve rank (Skilling's transpose algorithm).

    Consecutive ranks sit one grid step apart, so curve traversal keeps
    spatial locality without separator tokens.
    """
    _check_index(index, order)
    x = list(index)  # axes ordered (z, y, x); z interleaves most significant
    n = 3
    m = 1 << (order - 1)
    q = m
    while q > 1:  # inverse undo excess work
        p = q - 1
        for i in range(n):
            if x[i] & q:
                x[0] ^= p
            else:
                t = (x[0] ^ x[i]) & p
                x[0] ^= t
                x[i] ^= t
        q >>= 1
    for i in range(1, n):  # Gray encode
        x[i] ^= x[i - 1]
    t = 0
    q = m
    while q > 1:
        if x[n - 1] & q:
            t ^= q - 1
        q >>= 1
    for i in range(n):
        x[i] ^= t
    rank = 0
    for bit in range(order - 1, -1, -1):
        for axis in range(n):
            rank = (rank << 1) | ((x[axis] >> bit) & 1)
    return rank


def _check_index(index: tuple[int, int, int], order: int) -> None:
    if order < 1:
        raise ValueError("curve order must be >= 1")
    limit = 1 << order
    for comp in index:
        if not 0 <= comp < limit:
            raise IndexOutOfRange(f"component {comp} does not fit order {order}")


def default_curve_order(max_split: int) -> int:
    """Smallest curve order whose cube contains indices 0..max_split-1."""
    return max(1, int(np.ceil(np.log2(max(1, max_split)))))


def _zyx_tokens(patches: list[Patch], emit_separators: bool):
    ordered = sorted(patches, key=lambda p: p.index)
    tokens = [Token(PCSTART)]
    prev = None
    for slot, patch in enumerate(ordered):
        if prev is not None and emit_separators:
            if patch.index[0] != prev[0]:
                tokens.append(Token(LSEP))
            elif patch.index[1] != prev[1]:
                tokens.append(Token(RSEP))
        tokens.append(Token(PATCH, slot))
        prev = patch.index
    tokens.append(Token(PCEND))
    return tokens, ordered


def _curve_tokens(patches: list[Patch], strategy: OrderingStrategy):
    if strategy.curve_order is None:
        raise StrategyParamMissing(f"{strategy.tag} ordering requires a curve order")
    rank_fn = hilbert_rank if strategy.tag == HILBERT else morton_rank
    ordered = sorted(patches, key=lambda p: rank_fn(p.index, strategy.curve_order))
    tokens = [Token(PCSTART)]
    tokens += [Token(PATCH, slot) for slot in range(len(ordered))]
    tokens.append(Token(PCEND))
    return tokens, ordered


def fps_sample_patches(cloud: PointCloud, sample_count: int, m: int) -> list[Patch]:
    """PointBERT-style baseline: global FPS centers, nearest-center groups.

    Every point joins its nearest center's group (ties to the earlier
    center); each group is standardized to m points. Groups emptied by
    duplicate centers are dropped.
    """
    n = cloud.n
    count = max(1, min(sample_count, n))
    centers = fps(cloud.points, count, nearest_centroid_index(cloud.points))
    diff = cloud.xyz[:, None, :] - cloud.xyz[centers][None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    owner = np.argmin(d2, axis=1)  # first occurrence: earliest center wins
    patches = []
    slot = 0
    for rank in range(count):
        members = np.nonzero(owner == rank)[0]
        if len(members) == 0:
            continue
        patches.append(
            standardize(cloud.points[members], members, m, index=(0, 0, slot))
        )
        slot += 1
    return patches


def build_sequence(
    grid: PatchGrid,
    patches: list[Patch],
    strategy: OrderingStrategy,
    emit_separators: bool = True,
    cloud: PointCloud | None = None,
) -> TokenSequence:
    """Assemble the token stream and paired patch matrix.

    `patches` must correspond 1:1 with the grid's realized cells (the
    FPS baseline ignores both and resamples from `cloud`). Separators
    are only ever emitted for the ZYX strategy.
    """
    if strategy.tag == FPS_SAMPLING:
        if cloud is None:
            raise StrategyParamMissing("fps ordering requires the source cloud")
        count = strategy.sample_count or grid.n_cells
        ordered = fps_sample_patches(cloud, count, grid.plan.m)
        tokens = [Token(PCSTART)]
        tokens += [Token(PATCH, slot) for slot in range(len(ordered))]
        tokens.append(Token(PCEND))
    else:
        if {p.index for p in patches} != set(grid.cells.keys()):
            raise ValueError("patches do not correspond 1:1 with grid cells")
        if strategy.tag == ZYX:
            tokens, ordered = _zyx_tokens(patches, emit_separators)
        else:
            tokens, ordered = _curve_tokens(patches, strategy)

    matrix = np.stack([flatten(p) for p in ordered])
    return TokenSequence(tuple(tokens), matrix, strategy.tag)


# ---------------------------------------------------------------------------
# export / import


def default_matrix_path(token_path: str | Path) -> Path:
    return Path(str(token_path) + ".mat")


def export(
    seq: TokenSequence,
    token_path: str | Path,
    matrix_path: str | Path | None = None,
) -> None:
    """Write the token text file and its binary matrix sidecar."""
    token_path = Path(token_path)
    matrix_path = (
        default_matrix_path(token_path) if matrix_path is None else Path(matrix_path)
    )
    rows, cols = seq.patch_matrix.shape
    if rows < 1:
        raise IoError("refusing to export an empty patch matrix")

    # sidecar first: a visible token file implies its matrix exists
    header = MATRIX_HEADER.pack(MATRIX_MAGIC, rows, cols, 0)
    payload = np.ascontiguousarray(seq.patch_matrix, dtype="<f8").tobytes()
    atomic_write(matrix_path, header + payload)

    lines = [f"# ordering={seq.ordering}"]
    lines += [t.line() for t in seq.tokens]
    atomic_write(token_path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_token_file(path: str | Path) -> tuple[str, list[Token]]:
    """Parse a token text file into (ordering tag, raw token list).

    Grammar is *not* validated here; use validate_grammar (or
    load_sequence, which builds the checked TokenSequence).
    """
    ordering = ZYX
    tokens: list[Token] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if body.startswith("ordering="):
                    ordering = body.split("=", 1)[1]
                continue
            parts = line.split()
            kind = parts[0]
            if kind not in _KINDS:
                raise ParseError(f"unknown token {kind!r}", line_no)
            if kind in _VALUED_KINDS:
                if len(parts) != 2:
                    raise ParseError(f"{kind} requires one argument", line_no)
                try:
                    tokens.append(Token(kind, int(parts[1])))
                except ValueError:
                    raise ParseError(f"bad {kind} argument {parts[1]!r}", line_no)
            else:
                if len(parts) != 1:
                    raise ParseError(f"{kind} takes no argument", line_no)
                tokens.append(Token(kind))
    return ordering, tokens


def read_matrix_file(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < MATRIX_HEADER.size:
        raise IoError(f"matrix file {path} shorter than header")
    magic, rows, cols, _ = MATRIX_HEADER.unpack_from(raw)
    if magic != MATRIX_MAGIC:
        raise IoError(f"bad matrix magic {magic!r}")
    expected = MATRIX_HEADER.size + rows * cols * 8
    if len(raw) != expected:
        raise IoError(f"matrix file {path}: {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f8", offset=MATRIX_HEADER.size)
    return data.reshape(rows, cols).astype(np.float64)


def load_sequence(
    token_path: str | Path,
    matrix_path: str | Path | None = None,
) -> TokenSequence:
    """Inverse of export; the round-trip is exact."""
    matrix_path = (
        default_matrix_path(token_path) if matrix_path is None else Path(matrix_path)
    )
    ordering, tokens = read_token_file(token_path)
    matrix = read_matrix_file(matrix_path)
    return TokenSequence(tuple(tokens), matrix, ordering)
