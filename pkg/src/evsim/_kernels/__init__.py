"""Backend selection for the per-tick vehicle update.

The compiled extension and the pure-Python module implement the same
``advance`` function with identical expression ordering, so a scenario
produces bit-identical trajectories whichever backend is active.  The
compiled one is picked when available; EVSIM_PURE=1 forces the fallback.
"""

import os

if os.environ.get("EVSIM_PURE"):
    from . import pure as _impl
    BACKEND = "pure"
else:
    try:
        from . import _speedups as _impl  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:
        from . import pure as _impl
        BACKEND = "pure"

advance = _impl.advance

__all__ = ["advance", "BACKEND"]
