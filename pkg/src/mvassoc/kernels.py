"""Kernel dispatch: compiled extension if importable, NumPy fallback otherwise.

Set ``MVASSOC_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("MVASSOC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        pass

project_simplex = _impl.project_simplex
simplex_lsq = _impl.simplex_lsq
forward_stepwise = _impl.forward_stepwise

__all__ = ["BACKEND", "project_simplex", "simplex_lsq", "forward_stepwise"]
