"""Backend selection for the RK4 hot loop.

The compiled extension is used when it imports; set TBGFLOW_PURE_PYTHON=1
to force the pure-Python implementation.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_py


def _load() -> tuple[ModuleType, bool]:
    if os.environ.get("TBGFLOW_PURE_PYTHON", "") not in ("", "0"):
        return _kernels_py, False
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        return _kernels_py, False
    return _kernels, True


backend, HAVE_EXTENSION = _load()
BACKEND_NAME = "cython" if HAVE_EXTENSION else "python"
python_backend = _kernels_py
