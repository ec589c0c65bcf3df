"""2-D residual encoder producing the (C, F, T) feature map.

Block wiring (pre-activation)::

    x -> BN -> SeLU -> conv(2,3) -> BN -> SeLU -> conv(2,3) --(+)--> maxpool(1,3)
    x ----------------- [1x1 conv if channels change] ---------'

Convolutions use "same" padding with the spare row on the trailing side, so
the frequency extent never changes and only the pools shrink time:
21490 -> 7163 -> 2387 -> 795 -> 265 -> 88 -> 29 at full input length.
"""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

from . import ops
from .layers import BatchNorm, Conv2d, Module
from .tensor import Tensor

KERNEL = (2, 3)
DEFAULT_STACKS: Tuple[Tuple[int, int], ...] = ((32, 2), (64, 4))


class ResBlock(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float32):
        self.bn1 = BatchNorm(c_in, dtype=dtype)
        self.conv1 = Conv2d(c_in, c_out, KERNEL, rng, dtype)
        self.bn2 = BatchNorm(c_out, dtype=dtype)
        self.conv2 = Conv2d(c_out, c_out, KERNEL, rng, dtype)
        self.skip = Conv2d(c_in, c_out, (1, 1), rng, dtype, padding="valid") if c_in != c_out else None

    def forward(self, x: Tensor) -> Tensor:
        y = self.conv1(ops.selu(self.bn1(x)))
        y = self.conv2(ops.selu(self.bn2(y)))
        identity = self.skip(x) if self.skip is not None else x
        return ops.maxpool2d(y + identity, (1, 3))


class ResidualEncoder(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int = 1,
        stacks: Sequence[Tuple[int, int]] = DEFAULT_STACKS,
        dtype=np.float32,
    ):
        self.stack_sizes = [n for _, n in stacks]
        blocks = []
        c = in_channels
        for c_out, n in stacks:
            for _ in range(n):
                blocks.append(ResBlock(c, c_out, rng, dtype))
                c = c_out
        self.blocks = blocks
        self.out_channels = c

    def forward(self, x: Tensor, trace=None) -> Tensor:
        if x.ndim != 4:
            raise ops.ShapeError(f"encoder expects (B, C, F, T), got {x.shape}")
        i = 0
        for stack, n in enumerate(self.stack_sizes):
            for _ in range(n):
                x = self.blocks[i](x)
                i += 1
            if trace is not None:
                trace(f"res_stack{stack + 1}", x.shape[1:])
        return x


def encoder_output_width(width: int, n_blocks: int = 6) -> int:
    for _ in range(n_blocks):
        width //= 3
    return width
