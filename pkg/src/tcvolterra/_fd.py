"""Central differences with power-of-two steps."""
from __future__ import annotations

import math

import numpy as np

from .errors import InvalidArgument

REL_STEP = 1e-5


def step_for(scale: float, rel: float = REL_STEP) -> float:
    """Largest power of two not above ``rel * max(scale, 1)``.

    A power of two makes ``x + h`` and ``x - h`` exact in binary for moderate
    ``x``, so linear functions differentiate without rounding noise.
    """
    s = float(np.max(np.abs(scale))) if np.ndim(scale) else abs(float(scale))
    target = rel * max(s, 1.0)
    if not np.isfinite(target) or target <= 0:
        raise InvalidArgument(f"cannot pick a difference step at scale {scale!r}")
    h = 2.0 ** math.floor(math.log2(target))
    if h < 1e3 * np.finfo(float).tiny:
        raise InvalidArgument(f"difference step underflows at scale {scale!r}")
    return h


def central(f, x, h=None):
    """``(f(x + h) - f(x - h)) / 2h`` with ``f`` vectorised over paths."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = step_for(x)
    return (np.asarray(f(x + h), float) - np.asarray(f(x - h), float)) / (2.0 * h)
