"""Kernel backend selection.

The compiled module is used when it imports; otherwise the NumPy twin. Set
``NETCAUSAL_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_py


def _load_compiled() -> ModuleType | None:
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        return None
    return _kernels


compiled: ModuleType | None = _load_compiled()
python: ModuleType = _kernels_py


def get_kernels(name: str | None = None) -> ModuleType:
    """Return kernels by name ("compiled" or "python"); default follows the env var."""
    choice = name or os.environ.get("NETCAUSAL_BACKEND", "auto")
    if choice == "python":
        return python
    if choice == "compiled":
        if compiled is None:
            raise ImportError("compiled kernels are not built")
        return compiled
    return compiled if compiled is not None else python


def backend_name(kernels: ModuleType) -> str:
    return "compiled" if kernels is compiled and compiled is not None else "python"
