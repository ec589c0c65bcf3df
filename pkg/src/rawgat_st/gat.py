"""Graph attention layer over a complete graph with self-loops.

For node features ``h`` (N, d) and an attention map ``w_map`` (d,):

    alpha[u, n] = softmax over u of  w_map . (h_n * h_u)
    m_n         = sum_u alpha[u, n] h_u
    o_n         = SeLU(BN(W_att m_n + W_res h_n))

Every node attends to every node including itself, so no adjacency is stored.
BN normalises each of the d' output features using all nodes (and all batch
items) as the population.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .layers import BatchNorm, Dense, Module, fan_in_uniform, param
from .tensor import Tensor


def _attention_rows(h: Tensor, w_map: Tensor) -> Tensor:
    # A[b, n, u] = alpha[u, n]; softmax runs over the last axis (contributors u)
    logits = ops.matmul(h * w_map, ops.swapaxes(h, -1, -2))
    return ops.softmax(logits, axis=-1)


def attention_weights(h: Tensor, w_map: Tensor) -> Tensor:
    """Return alpha with ``alpha[..., u, n]``; each column n sums to one."""
    if not np.all(np.isfinite(h.data)):
        raise FloatingPointError("attention_weights: non-finite node features")
    if h.shape[-1] != w_map.shape[-1]:
        raise ops.ShapeError(f"w_map has {w_map.shape[-1]} entries, nodes have {h.shape[-1]} features")
    return ops.swapaxes(_attention_rows(h, w_map), -1, -2)


class GatLayer(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        self.d_in, self.d_out = d_in, d_out
        self.w_map = param(fan_in_uniform(rng, (d_in,), d_in), dtype)
        self.att = Dense(d_in, d_out, rng, dtype)
        self.res = Dense(d_in, d_out, rng, dtype)
        self.bn = BatchNorm(d_out, dtype=dtype, axis=-1)

    def forward(self, h: Tensor) -> Tensor:
        squeeze = h.ndim == 2
        if squeeze:
            h = h.reshape(1, *h.shape)
        if h.ndim != 3 or h.shape[-1] != self.d_in:
            raise ops.ShapeError(f"GAT layer expects (B, N, {self.d_in}), got {h.shape}")
        if not np.all(np.isfinite(h.data)):
            raise FloatingPointError("GAT layer: non-finite node features")
        a = _attention_rows(h, self.w_map)
        m = ops.matmul(a, h)
        o = ops.selu(self.bn(self.att(m) + self.res(h)))
        return o.reshape(o.shape[1:]) if squeeze else o
