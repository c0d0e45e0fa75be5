"""Kernel backend selection.

The compiled extension is used when importable; otherwise the NumPy
fallback. Set ``BARSEG_BACKEND=python`` to force the fallback, or
``BARSEG_BACKEND=compiled`` to fail loudly when the extension is missing.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _fallback

_choice = os.environ.get("BARSEG_BACKEND", "auto").lower()

_compiled: ModuleType | None
try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None
    if _choice == "compiled":
        raise

kernels: ModuleType = _compiled if (_compiled is not None and _choice != "python") else _fallback
name = "compiled" if kernels is _compiled else "python"


def available() -> dict[str, ModuleType]:
    out = {"python": _fallback}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out


def use(backend: str) -> None:
    """Switch the active kernel module at runtime ("compiled" or "python")."""
    global kernels, name
    mods = available()
    if backend not in mods:
        raise ValueError(f"backend {backend!r} not available; have {sorted(mods)}")
    kernels = mods[backend]
    name = backend
