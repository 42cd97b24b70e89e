"""Kernel backend selection.

The compiled extension is preferred when importable; REIF_FORCE_PURE=1
forces the numpy fallback (used by tests and the kernel benchmark).
"""

from __future__ import annotations

import os

from . import _purekernels

_impl = None
if os.environ.get("REIF_FORCE_PURE") != "1":
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = None

if _impl is None:
    _impl = _purekernels
    BACKEND = "pure"
else:
    BACKEND = "compiled"

greedy_pack = _impl.greedy_pack
goodness_scan = _impl.goodness_scan


def backend_name() -> str:
    return BACKEND
