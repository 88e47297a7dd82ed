"""Backend selection for the Monte Carlo hot loops.

The compiled extension is used when it imports; setting the environment
variable ``MODDEV_PURE_PYTHON=1`` forces the numpy fallback.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

from . import _kernels_py

__all__ = ["BACKEND", "wilcoxon_counts", "censored_sup", "get_backend", "available_backends"]


def _load_compiled():
    try:
        from . import _kernels_c
    except ImportError:
        return None
    return _kernels_c


_compiled = None if os.environ.get("MODDEV_PURE_PYTHON") else _load_compiled()
_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = "cython" if _compiled is not None else "python"

wilcoxon_counts = _impl.wilcoxon_counts
censored_sup = _impl.censored_sup


def available_backends() -> list[str]:
    names = ["python"]
    if _load_compiled() is not None:
        names.insert(0, "cython")
    return names


def get_backend(name: str) -> SimpleNamespace:
    """Return the kernels of a named backend (``cython`` or ``python``)."""
    if name == "python":
        mod = _kernels_py
    elif name == "cython":
        mod = _load_compiled()
        if mod is None:
            raise ImportError("compiled kernels are not built")
    else:
        raise ValueError(f"unknown backend {name!r}")
    return SimpleNamespace(name=name, wilcoxon_counts=mod.wilcoxon_counts, censored_sup=mod.censored_sup)
