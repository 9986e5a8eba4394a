"""Kernel backend selection.

The compiled extension is preferred; set ``GAZEMASK_BACKEND=python`` to force
the NumPy fallback. Both expose the same four functions.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_py


def _load() -> tuple[str, ModuleType]:
    if os.environ.get("GAZEMASK_BACKEND", "").lower() == "python":
        return "python", _kernels_py
    try:
        from . import _ckernels
    except ImportError:
        return "python", _kernels_py
    return "cython", _ckernels


BACKEND, kernels = _load()


def get_kernels(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` ("cython" or "python"), default active."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
