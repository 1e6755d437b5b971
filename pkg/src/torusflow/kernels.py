"""Backend selection for the hot time-stepping loops.

The compiled extension (torusflow._accel, Cython) is used when it imported
cleanly; otherwise the pure-numpy fallback.  Set TORUSFLOW_PURE_PYTHON=1 to
force the fallback, e.g. to benchmark or to debug.  Both backends implement
the same scheme; results agree to within the rounding of the dense
matrix-vector products.
"""

from __future__ import annotations

import os

from . import _fallback

__all__ = ["BACKEND", "run_frozen_loop", "run_bridged_loop"]

if os.environ.get("TORUSFLOW_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "fallback"
else:
    try:
        from . import _accel as _impl  # type: ignore[no-redef]

        BACKEND = "accel"
    except ImportError:
        _impl = _fallback
        BACKEND = "fallback"

run_frozen_loop = _impl.run_frozen_loop
run_bridged_loop = _impl.run_bridged_loop
