"""Model-level fusion of the spectral and temporal graphs.

Both pooled graphs are first mapped to a common node count by an affine map
along the node axis (features untouched), then combined elementwise or by
feature concatenation. Concatenation puts the spectral features first.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import ops
from .layers import Dense, Module
from .tensor import Tensor

FUSED_NODES = 12


class FusionMode(str, Enum):
    ADD = "add"
    MUL = "mul"
    CONCAT = "concat"


def fused_dim(mode, d: int) -> int:
    return 2 * d if FusionMode(mode) is FusionMode.CONCAT else d


class NodeProjection(Module):
    """Affine transform over the node axis: (B, N, d) -> (B, target, d)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32):
        self.n_in, self.n_out = n_in, n_out
        self.proj = Dense(n_in, n_out, rng, dtype)

    def forward(self, g: Tensor) -> Tensor:
        if g.shape[-2] != self.n_in:
            raise ops.ShapeError(f"node projection expects {self.n_in} nodes, got {g.shape[-2]}")
        return ops.swapaxes(self.proj(ops.swapaxes(g, -1, -2)), -1, -2)


def project_nodes(g: Tensor, weight: Tensor, bias: Tensor = None) -> Tensor:
    """Functional form of :class:`NodeProjection`; ``weight`` is (N, target)."""
    if g.shape[-2] != weight.shape[0]:
        raise ops.ShapeError(f"projection weight expects {weight.shape[0]} nodes, got {g.shape[-2]}")
    return ops.swapaxes(ops.dense(ops.swapaxes(g, -1, -2), weight, bias), -1, -2)


def fuse(gf: Tensor, gt: Tensor, mode) -> Tensor:
    mode = FusionMode(mode)
    if gf.shape != gt.shape:
        raise ops.ShapeError(f"fusion operands differ in shape: {gf.shape} vs {gt.shape}")
    if mode is FusionMode.ADD:
        return gf + gt
    if mode is FusionMode.MUL:
        return gf * gt
    return ops.concat([gf, gt], axis=-1)
