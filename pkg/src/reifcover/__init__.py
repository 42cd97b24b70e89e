"""reifcover: multiscale plane analysis and covering certificates for point clouds.

The package takes a finite point sample of a k-dimensional set, classifies
balls across a geometric ladder of scales as plane-like or degenerate,
builds a smooth field of approximating subspaces glued by a partition of
unity, extracts an approximating manifold as the zero set of a quadratic
defect functional, checks it against an almost-calibration, and emits a
recursive covering certificate with an explicit k-dimensional measure
upper bound.
"""

from ._backend import backend_name
from .errors import (
    ConfigError,
    DegenerateInput,
    DepthExceeded,
    EigengapTooSmall,
    FiberDegenerate,
    InputUnreadable,
    NoConvergence,
    NotCovered,
    RankMismatch,
    ReifError,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "backend_name",
    "ReifError",
    "ConfigError",
    "InputUnreadable",
    "DepthExceeded",
    "DegenerateInput",
    "RankMismatch",
    "EigengapTooSmall",
    "NoConvergence",
    "FiberDegenerate",
    "NotCovered",
]
