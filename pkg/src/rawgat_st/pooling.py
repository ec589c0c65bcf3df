"""Top-k graph pooling with a learnable projection vector and sigmoid gating."""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np

from . import ops
from .layers import Module, fan_in_uniform, param
from .tensor import Tensor


def pooled_count(n_nodes: int, ratio: float) -> int:
    """Nodes kept by pooling: ``max(1, floor(ratio * n_nodes))``."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"pooling ratio must lie in (0, 1], got {ratio}")
    # tolerance absorbs products such as 0.29 * 100 = 28.999999999999996
    return max(1, math.floor(ratio * n_nodes + 1e-9))


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores per row, returned in ascending (graph) order.

    Ties go to the lower node index.
    """
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :k]
    return np.sort(order, axis=-1)


def pool(x: Tensor, q: Tensor, ratio: float) -> Tuple[Tensor, np.ndarray]:
    """Keep the top-scoring nodes of ``x`` (B, N, d) and gate them by sigmoid(score).

    Scores are ``x @ q``. Returns the pooled graph (B, N', d) and the retained
    indices (B, N'). The selection is not differentiated; gradients reach ``q``
    through the gate and reach ``x`` only on retained rows.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.shape[-1] != q.shape[0]:
        raise ops.ShapeError(f"projection vector has {q.shape[0]} entries, nodes have {x.shape[-1]}")
    scores = ops.matmul(x, q.reshape(-1, 1))  # (B, N, 1)
    k = pooled_count(x.shape[1], ratio)
    idx = top_k_indices(scores.data[..., 0], k)
    kept = ops.gather_rows(x, idx)
    gate = ops.sigmoid(ops.gather_rows(scores, idx))
    out = kept * gate
    if squeeze:
        return out.reshape(out.shape[1:]), idx[0]
    return out, idx


class GraphPool(Module):
    def __init__(self, dim: int, ratio: float, rng: np.random.Generator, dtype=np.float32):
        pooled_count(1, ratio)  # validates the ratio
        self.ratio = ratio
        self.q = param(fan_in_uniform(rng, (dim,), dim), dtype)

    def forward(self, x: Tensor) -> Tuple[Tensor, np.ndarray]:
        return pool(x, self.q, self.ratio)
