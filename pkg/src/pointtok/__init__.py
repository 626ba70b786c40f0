"""pointtok: point-cloud patch tokenization with spatial separator tokens.

Pipeline: load -> normalize -> adaptive Z/Y/X partition -> FPS/replicate
patch standardization -> ordered token sequence + patch matrix. A small
float64 decoder-only model (`pointtok.model`) and synthetic curriculum
(`pointtok.curriculum`) validate the mechanism end to end.
"""

from . import errors
from .cloud import (
    AxisBounds,
    PointCloud,
    load_cloud,
    load_ply_ascii,
    load_xyz,
    normalize,
    write_xyz,
)
from .partition import PatchGrid, SplitPlan, cell_of, compute_splits, partition
from .patches import Patch, flatten, fps, standardize
from .pipeline import TokenizedCloud, tokenize_cloud, tokenize_points
from .sequence import (
    FPS_SAMPLING,
    HILBERT,
    LSEP,
    MORTON,
    PATCH,
    PCEND,
    PCSTART,
    RSEP,
    TEXT,
    ZYX,
    OrderingStrategy,
    Token,
    TokenSequence,
    build_sequence,
    export,
    hilbert_rank,
    load_sequence,
    morton_rank,
    validate_grammar,
)

__version__ = "0.1.0"

__all__ = [
    "AxisBounds",
    "PointCloud",
    "load_cloud",
    "load_ply_ascii",
    "load_xyz",
    "normalize",
    "write_xyz",
    "PatchGrid",
    "SplitPlan",
    "cell_of",
    "compute_splits",
    "partition",
    "Patch",
    "flatten",
    "fps",
    "standardize",
    "TokenizedCloud",
    "tokenize_cloud",
    "tokenize_points",
    "OrderingStrategy",
    "Token",
    "TokenSequence",
    "build_sequence",
    "export",
    "hilbert_rank",
    "load_sequence",
    "morton_rank",
    "validate_grammar",
    "errors",
    "ZYX",
    "HILBERT",
    "MORTON",
    "FPS_SAMPLING",
    "PCSTART",
    "PCEND",
    "PATCH",
    "LSEP",
    "RSEP",
    "TEXT",
    "__version__",
]
