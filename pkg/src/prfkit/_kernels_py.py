"""Pure numpy fallback for the top-k cosine kernel.

Same contract as the compiled extension: scores are float64 dot products
of float32 inputs cast back to float32, and the k best rows come back
ordered by (score descending, row index ascending).
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def topk_dot(rows: np.ndarray, query: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (indices, scores) of the k highest dot products.

    ``rows`` is (n, d) float32, ``query`` is (d,) float32. A full stable
    sort keeps ties in ascending row order, matching the compiled kernel's
    tie rule exactly.
    """
    scores = (rows.astype(np.float64) @ query.astype(np.float64)).astype(np.float32)
    k = min(k, len(scores))
    order = np.argsort(-scores, kind="stable")[:k]
    return order.astype(np.int64), scores[order]
