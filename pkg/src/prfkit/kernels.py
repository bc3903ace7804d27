"""Selects the hot-loop kernel implementation at import time.

The compiled extension is preferred when it built successfully; setting
``PRF_NO_EXT=1`` forces the pure numpy fallback (useful for benchmarking
and for debugging suspected kernel differences). Both implementations
share one contract and are interchangeable result-for-result.
"""

from __future__ import annotations

import os

if os.environ.get("PRF_NO_EXT"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

topk_dot = _impl.topk_dot
BACKEND: str = _impl.BACKEND

__all__ = ["topk_dot", "BACKEND"]
