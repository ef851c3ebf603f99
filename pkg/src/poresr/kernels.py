"""Kernel backend selection: compiled extension if available, numpy fallback otherwise.

Set PORESR_PURE_PYTHON=1 to force the fallback (used by the benchmark and
by tests that compare the two backends).
"""

import os

if os.environ.get("PORESR_PURE_PYTHON"):
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _impl

        BACKEND = "python"

splat_gaussians = _impl.splat_gaussians
suppress_sorted = _impl.suppress_sorted
match_scan = _impl.match_scan

__all__ = ["BACKEND", "splat_gaussians", "suppress_sorted", "match_scan"]
