"""Kernel backend selection.

Prefers the compiled extension; falls back to the pure-numpy versions when
it is missing or when the environment variable REPMATCH_PURE is set (any
nonempty value).  ``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from . import _kernels_py

if os.environ.get("REPMATCH_PURE"):
    _impl = _kernels_py
    USING_COMPILED = False
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        USING_COMPILED = True
    except ImportError:
        _impl = _kernels_py
        USING_COMPILED = False

sinkhorn_iterate = _impl.sinkhorn_iterate
sinkhorn_backward = _impl.sinkhorn_backward
solve_assignment = _impl.solve_assignment


def backend_name() -> str:
    return "compiled" if USING_COMPILED else "pure-python"
