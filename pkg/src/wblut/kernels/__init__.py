"""Trilinear kernel backend selection.

Two interchangeable implementations of the hot LUT loops exist: a Cython
extension (``_trilinear``) and a numpy fallback (``pybackend``). The
active one is chosen once, at import time:

* ``WBLUT_KERNEL=python``   always use the numpy fallback.
* ``WBLUT_KERNEL=compiled`` require the extension; ImportError if missing.
* unset or ``auto``         prefer the extension, fall back silently.

``trilerp_apply(lut, pixels)`` and ``trilerp_backward(lut, pixels,
grad_out)`` are re-exported from the active backend; ``backend_name``
records which one won.
"""

from __future__ import annotations

import os

from . import pybackend

try:
    from . import _trilinear as _compiled
except ImportError:
    _compiled = None


def available_backends() -> tuple[str, ...]:
    return ("compiled", "python") if _compiled is not None else ("python",)


def get_backend(name: str):
    """Returns the named backend module ('compiled' or 'python')."""
    if name == "python":
        return pybackend
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled trilinear kernel is not built (pip install -e .)")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r} (expected 'compiled' or 'python')")


def _select():
    choice = os.environ.get("WBLUT_KERNEL", "auto").strip().lower()
    if choice in ("", "auto"):
        return _compiled if _compiled is not None else pybackend
    return get_backend(choice)


_active = _select()
backend_name: str = _active.name
trilerp_apply = _active.trilerp_apply
trilerp_backward = _active.trilerp_backward

__all__ = [
    "available_backends",
    "get_backend",
    "backend_name",
    "trilerp_apply",
    "trilerp_backward",
]
