"""Pure numpy versions of the compiled kernels (same signatures, same results)."""
from __future__ import annotations

import numpy as np

from .numerics import sigmoid


def lstm_gates_forward(z: np.ndarray, c_prev: np.ndarray):
    B, H = c_prev.shape
    if z.shape != (B, 4 * H):
        raise ValueError("lstm_gates_forward: shape mismatch")
    gates = np.empty_like(z)
    gates[:, : 3 * H] = sigmoid(z[:, : 3 * H])
    gates[:, 3 * H :] = np.tanh(z[:, 3 * H :])
    ig, fg, og, cand = (gates[:, k * H : (k + 1) * H] for k in range(4))
    c = fg * c_prev + ig * cand
    tc = np.tanh(c)
    return gates, c, tc, og * tc


def lstm_gates_backward(gates, c_prev, tanh_c, dh, dc):
    H = c_prev.shape[1]
    if gates.shape[1] != 4 * H:
        raise ValueError("lstm_gates_backward: shape mismatch")
    ig, fg, og, cand = (gates[:, k * H : (k + 1) * H] for k in range(4))
    dct = dc + dh * og * (1.0 - tanh_c * tanh_c)
    dz = np.empty_like(gates)
    dz[:, :H] = dct * cand * ig * (1.0 - ig)
    dz[:, H : 2 * H] = dct * c_prev * fg * (1.0 - fg)
    dz[:, 2 * H : 3 * H] = dh * tanh_c * og * (1.0 - og)
    dz[:, 3 * H :] = dct * ig * (1.0 - cand * cand)
    return dz, dct * fg


def ranks_from_scores(scores: np.ndarray, positions: np.ndarray) -> np.ndarray:
    s = scores[positions][:, None]
    idx = np.arange(scores.shape[0])[None, :]
    ahead = (scores[None, :] > s) | ((scores[None, :] == s) & (idx < positions[:, None]))
    return 1 + ahead.sum(axis=1).astype(np.int64)


def cumulative_counts(ranks: np.ndarray, z: int) -> np.ndarray:
    if ranks.size and (ranks.min() < 1 or ranks.max() > z):
        raise ValueError(f"ranks outside [1, {z}]")
    counts = np.bincount(ranks, minlength=z + 1)
    counts[0] = 0
    return np.cumsum(counts).astype(np.int64)
