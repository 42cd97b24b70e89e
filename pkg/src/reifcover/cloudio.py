"""Point cloud file formats: CSV (one point per row) and JSON."""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import InputUnreadable

# full round-trip precision so regenerated files are byte-identical
CSV_FORMAT = "%.17g"


def read_points(path) -> np.ndarray:
    """Load an (m, n) float array from a .csv or .json cloud file."""
    if not os.path.exists(path):
        raise InputUnreadable(f"input file does not exist: {path}")
    ext = os.path.splitext(str(path))[1].lower()
    try:
        if ext == ".json":
            with open(path) as fh:
                data = json.load(fh)
            pts = np.asarray(data["points"] if isinstance(data, dict) else data, dtype=np.float64)
        else:
            pts = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InputUnreadable(f"cannot parse point cloud {path}: {exc}") from exc
    if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] < 2:
        raise InputUnreadable(
            f"point cloud {path} must be a nonempty 2-d table, got shape {pts.shape}"
        )
    if not np.all(np.isfinite(pts)):
        raise InputUnreadable(f"point cloud {path} contains non-finite entries")
    return pts


def write_points(path, points: np.ndarray) -> None:
    np.savetxt(path, np.asarray(points, dtype=np.float64), delimiter=",", fmt=CSV_FORMAT)
