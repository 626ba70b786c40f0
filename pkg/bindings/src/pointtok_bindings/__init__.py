"""In-process bindings for the pointtok tokenizer core.

External ML pipelines call `tokenize_array` / `tokenize_file` and get a
BoundSequence: a plain (kind, value) token list plus a read-only patch
matrix, bit-identical to what the CLI exports for the same input. Only
tokenization is exposed; the toy model stays internal to the core.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

import pointtok
from pointtok import errors as _core_errors

__version__ = pointtok.__version__


class BindingError(Exception):
    """Base class for errors crossing the binding boundary."""


class ArgumentError(BindingError):
    """Invalid argument rejected before any core call."""


class ParseError(BindingError):
    pass


class EmptyCloud(BindingError):
    pass


class UnsupportedFormat(BindingError):
    pass


class OutOfBounds(BindingError):
    pass


class TargetExceedsInput(BindingError):
    pass


class StrategyParamMissing(BindingError):
    pass


class IndexOutOfRange(BindingError):
    pass


class IoError(BindingError):
    pass


class ShapeMismatch(BindingError):
    pass


_ERROR_MAP: dict[type, type] = {
    _core_errors.ParseError: ParseError,
    _core_errors.EmptyCloud: EmptyCloud,
    _core_errors.UnsupportedFormat: UnsupportedFormat,
    _core_errors.OutOfBounds: OutOfBounds,
    _core_errors.TargetExceedsInput: TargetExceedsInput,
    _core_errors.StrategyParamMissing: StrategyParamMissing,
    _core_errors.IndexOutOfRange: IndexOutOfRange,
    _core_errors.IoError: IoError,
    _core_errors.ShapeMismatch: ShapeMismatch,
}


def _translate(exc: Exception) -> BindingError:
    for core_kind, binding_kind in _ERROR_MAP.items():
        if isinstance(exc, core_kind):
            return binding_kind(str(exc))
    return BindingError(str(exc))


@dataclass(frozen=True)
class BoundSequence:
    """Token stream plus its P x (M*6) patch matrix (read-only)."""

    tokens: tuple[tuple[str, int | None], ...]
    patch_matrix: np.ndarray
    ordering: str

    def __post_init__(self):
        mat = np.asarray(self.patch_matrix, dtype=np.float64)
        mat.setflags(write=False)
        object.__setattr__(self, "patch_matrix", mat)

    @property
    def n_patches(self) -> int:
        return self.patch_matrix.shape[0]


def _bind(seq: pointtok.TokenSequence) -> BoundSequence:
    return BoundSequence(
        tokens=tuple((t.kind, t.value) for t in seq.tokens),
        patch_matrix=seq.patch_matrix,
        ordering=seq.ordering,
    )


def tokenize_array(
    points: np.ndarray,
    m: int = 512,
    k: int = 5,
    strategy: str = "zyx",
    separators: bool = True,
    sample_count: int | None = None,
) -> BoundSequence:
    """Tokenize an (N, 6) array of (x, y, z, r, g, b) rows."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 6:
        raise ArgumentError(f"expected an (N, 6) array, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ArgumentError("need at least one point")
    if not np.isfinite(arr).all():
        raise ArgumentError("array contains non-finite values")
    if m < 1 or k < 1:
        raise ArgumentError("m and k must be >= 1")
    try:
        tc = pointtok.tokenize_points(
            arr, m, k, strategy, separators, sample_count=sample_count
        )
    except Exception as exc:  # noqa: BLE001 - boundary translation
        raise _translate(exc) from exc
    return _bind(tc.sequence)


def tokenize_file(
    path: str | Path,
    m: int = 512,
    k: int = 5,
    strategy: str = "zyx",
    separators: bool = True,
    sample_count: int | None = None,
) -> BoundSequence:
    """Load an XYZ or ASCII PLY file and tokenize it."""
    try:
        cloud = pointtok.load_cloud(path)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except Exception as exc:  # noqa: BLE001
        raise _translate(exc) from exc
    return tokenize_array(
        cloud.points, m, k, strategy, separators, sample_count=sample_count
    )


def export(
    bound: BoundSequence,
    token_path: str | Path,
    matrix_path: str | Path | None = None,
) -> None:
    """Write the CLI-compatible token text + matrix sidecar pair."""
    try:
        seq = pointtok.TokenSequence(
            tuple(pointtok.Token(kind, value) for kind, value in bound.tokens),
            bound.patch_matrix,
            bound.ordering,
        )
        pointtok.export(seq, token_path, matrix_path)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except Exception as exc:  # noqa: BLE001
        raise _translate(exc) from exc


__all__ = [
    "BoundSequence",
    "tokenize_array",
    "tokenize_file",
    "export",
    "BindingError",
    "ArgumentError",
    "ParseError",
    "EmptyCloud",
    "UnsupportedFormat",
    "OutOfBounds",
    "TargetExceedsInput",
    "StrategyParamMissing",
    "IndexOutOfRange",
    "IoError",
    "ShapeMismatch",
    "__version__",
]
