"""Kernel backend selection.

Prefers the compiled Cython SLIC kernels; falls back to the pure-NumPy
implementation when the extension is missing or when
``SYNTHSCOPE_PURE_PY=1`` is set (useful for benchmarking and equivalence
testing).  Both backends are bit-identical by construction.
"""

import os

if os.environ.get("SYNTHSCOPE_PURE_PY") == "1":
    from . import slic_py as slic_kernels
else:
    try:
        from . import _slic as slic_kernels  # type: ignore[no-redef]
    except ImportError:
        from . import slic_py as slic_kernels  # type: ignore[no-redef]

KERNEL_BACKEND = slic_kernels.BACKEND

__all__ = ["slic_kernels", "KERNEL_BACKEND"]
