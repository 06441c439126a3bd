"""Hot-loop kernels, compiled when available.

The Cython extension ``stylerec._kernels`` is used if it was built; otherwise
the numpy fallback in ``_kernels_py`` is selected. Set ``STYLEREC_KERNELS=python``
to force the fallback. ``BACKEND`` names the active implementation.
"""
from __future__ import annotations

import logging
import os

import numpy as np

from . import _kernels_py

log = logging.getLogger(__name__)

_compiled = None
if os.environ.get("STYLEREC_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _compiled  # type: ignore[no-redef]
    except ImportError:
        log.debug("compiled kernels unavailable, using numpy fallback")

_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = "cython" if _compiled is not None else "python"


def backends() -> dict:
    """Every importable backend, keyed by name."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["cython"] = _compiled
    return out


def set_backend(name: str) -> str:
    """Switch the active implementation; returns the previous backend name."""
    global _impl, BACKEND
    impls = backends()
    if name not in impls:
        raise ValueError(f"kernel backend {name!r} unavailable (have {', '.join(impls)})")
    prev = BACKEND
    _impl, BACKEND = impls[name], name
    return prev


def lstm_gates_forward(z, c_prev):
    """Activate the 4H gate pre-activations and advance the cell.

    Returns ``(gates, cell, tanh(cell), hidden)``.
    """
    return _impl.lstm_gates_forward(
        np.ascontiguousarray(z, dtype=np.float64),
        np.ascontiguousarray(c_prev, dtype=np.float64),
    )


def lstm_gates_backward(gates, c_prev, tanh_c, dh, dc):
    """Backpropagate through one gate block; returns ``(dz, dc_prev)``."""
    arrs = [np.ascontiguousarray(a, dtype=np.float64) for a in (gates, c_prev, tanh_c, dh, dc)]
    return _impl.lstm_gates_backward(*arrs)


def ranks_from_scores(scores, positions) -> np.ndarray:
    """1-based rank of each position under (score descending, index ascending)."""
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    positions = np.ascontiguousarray(positions, dtype=np.int64)
    if positions.size and (positions.min() < 0 or positions.max() >= scores.shape[0]):
        raise ValueError("position outside the score vector")
    return _impl.ranks_from_scores(scores, positions)


def cumulative_counts(ranks, z: int) -> np.ndarray:
    return _impl.cumulative_counts(np.ascontiguousarray(ranks, dtype=np.int64), int(z))
