"""The full spectro-temporal graph attention network and its ablations.

Pipeline (default configuration, shapes as (features, nodes) for graphs)::

    wave (64600,) -> sinc (70, 64472) -> pool/BN/SeLU (1, 23, 21490)
      -> residual encoder (64, 23, 29)
      -> spectral readout max_T|S| (64, 23) -> GAT (32, 23) -> pool (32, 14) -> project (32, 12)
      -> temporal readout max_F|S| (64, 29) -> GAT (32, 29) -> pool (32, 23) -> project (32, 12)
      -> fuse (32, 12) [add/mul] or (64, 12) [concat]
      -> GAT (16, 12) -> pool (16, 7) -> dense 16->1 per node (1, 7) -> FC(2)

Ablations: ``use_spectral=False`` / ``use_temporal=False`` drop one branch and
the surviving branch (projected to 12 nodes) passes straight to the final
block; ``use_pooling=False`` removes all three pooling layers, so the branch
projections start from 23 and 29 nodes and the output layer reads 12 values.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import ops
from .encoder import ResidualEncoder, encoder_output_width
from .frontend import KERNEL_LENGTH, NUM_FILTERS, SEGMENT_LENGTH, SincFrontend, build_filterbank
from .fusion import FUSED_NODES, FusionMode, NodeProjection, fuse, fused_dim
from .gat import GatLayer
from .layers import Dense, Module, count_parameters
from .pooling import GraphPool, pooled_count
from .tensor import Tensor

SPOOF, BONA = 0, 1

# Stage output shapes for the default 64600-sample input.
# Graph rows read (features, nodes); paired rows are (spectral, temporal).
STANDARD_SHAPES: Dict[str, Dict[str, tuple]] = {
    mode: {
        "sinc": (70, 64472),
        "add_channel": (1, 70, 64472),
        "maxpool": (1, 23, 21490),
        "res_stack1": (32, 23, 2387),
        "res_stack2": (64, 23, 29),
        "readout": ((64, 23), (64, 29)),
        "gat": ((32, 23), (32, 29)),
        "pool": ((32, 14), (32, 23)),
        "projection": ((32, 12), (32, 12)),
        "fusion": (64, 12) if mode == "concat" else (32, 12),
        "st_gat": (16, 12),
        "st_pool": (16, 7),
        "st_projection": (1, 7),
        "output": (2,),
    }
    for mode in ("add", "mul", "concat")
}


class ConfigError(ValueError):
    """Invalid model or training configuration value."""


@dataclass
class ModelConfig:
    fusion: str = "mul"
    k_spec: float = 0.64
    k_temp: float = 0.81
    k_st: float = 0.64
    use_spectral: bool = True
    use_temporal: bool = True
    use_pooling: bool = True
    mask_limit: int = 14
    seed: int = 0
    segment_length: int = SEGMENT_LENGTH
    num_filters: int = NUM_FILTERS
    kernel_length: int = KERNEL_LENGTH
    res_channels: Tuple[int, int] = (32, 64)
    res_blocks: Tuple[int, int] = (2, 4)
    gat_dim: int = 32
    st_dim: int = 16
    fused_nodes: int = FUSED_NODES
    dtype: str = "float32"

    def validate(self) -> "ModelConfig":
        try:
            FusionMode(self.fusion)
        except ValueError:
            raise ConfigError(f"fusion: unknown mode {self.fusion!r} (add, mul, concat)") from None
        for name in ("k_spec", "k_temp", "k_st"):
            k = getattr(self, name)
            if not 0.0 < k <= 1.0:
                raise ConfigError(f"{name}: pooling ratio must lie in (0, 1], got {k}")
        if not (self.use_spectral or self.use_temporal):
            raise ConfigError("use_spectral/use_temporal: at least one branch must stay enabled")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype: expected float32 or float64, got {self.dtype!r}")
        if self.kernel_length % 2 == 0:
            raise ConfigError("kernel_length: must be odd")
        if self.frequency_rows < 1:
            raise ConfigError("num_filters: need at least 3 filters for the 3x3 pool")
        if not 0 <= self.mask_limit <= self.frequency_rows:
            raise ConfigError(f"mask_limit: must lie in [0, {self.frequency_rows}], got {self.mask_limit}")
        if self.time_frames < 1:
            raise ConfigError(
                f"segment_length: {self.segment_length} samples leave no time frames after the encoder"
            )
        return self

    # derived extents
    @property
    def frequency_rows(self) -> int:
        return self.num_filters // 3

    @property
    def frontend_width(self) -> int:
        return (self.segment_length - self.kernel_length + 1) // 3

    @property
    def time_frames(self) -> int:
        return encoder_output_width(self.frontend_width, sum(self.res_blocks))

    @property
    def st_in_dim(self) -> int:
        if self.use_spectral and self.use_temporal:
            return fused_dim(self.fusion, self.gat_dim)
        return self.gat_dim

    def branch_nodes(self) -> Tuple[int, int]:
        f, t = self.frequency_rows, self.time_frames
        if self.use_pooling:
            return pooled_count(f, self.k_spec), pooled_count(t, self.k_temp)
        return f, t

    @property
    def output_nodes(self) -> int:
        return pooled_count(self.fused_nodes, self.k_st) if self.use_pooling else self.fused_nodes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["res_channels"] = list(self.res_channels)
        d["res_blocks"] = list(self.res_blocks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config key(s): {sorted(unknown)}")
        d = dict(d)
        for key in ("res_channels", "res_blocks"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def spectral_readout(S: Tensor) -> Tensor:
    """max over time of |S|: (B, C, F, T) -> graph (B, F, C)."""
    squeeze = S.ndim == 3
    if squeeze:
        S = S.reshape(1, *S.shape)
    if S.ndim != 4:
        raise ops.ShapeError(f"readout expects (C, F, T) feature map, got {S.shape}")
    g = ops.swapaxes(ops.max(ops.abs(S), axis=3), 1, 2)
    return g.reshape(g.shape[1:]) if squeeze else g


def temporal_readout(S: Tensor) -> Tensor:
    """max over frequency of |S|: (B, C, F, T) -> graph (B, T, C)."""
    squeeze = S.ndim == 3
    if squeeze:
        S = S.reshape(1, *S.shape)
    if S.ndim != 4:
        raise ops.ShapeError(f"readout expects (C, F, T) feature map, got {S.shape}")
    g = ops.swapaxes(ops.max(ops.abs(S), axis=2), 1, 2)
    return g.reshape(g.shape[1:]) if squeeze else g


def mask_rows(x: Tensor, start: int, width: int) -> Tensor:
    """Zero rows [start, start + width) of the frequency axis (-2) for every batch item."""
    if width <= 0:
        return x
    mask = np.ones(x.shape[-2], dtype=x.dtype)
    mask[start : start + width] = 0.0
    return x * mask[:, None]


def _graph_shape(g: Tensor) -> tuple:
    # (B, N, d) -> (d, N), the layout used in shape traces
    return (g.shape[-1], g.shape[-2])


class _Branch(Module):
    def __init__(self, d_in: int, d_out: int, n_nodes: int, n_kept: int, ratio: float, pooling: bool, n_target: int, rng, dtype):
        self.gat = GatLayer(d_in, d_out, rng, dtype)
        self.pool = GraphPool(d_out, ratio, rng, dtype) if pooling else None
        self.proj = NodeProjection(n_kept, n_target, rng, dtype)
        self.n_nodes = n_nodes

    def forward(self, g: Tensor):
        h = self.gat(g)
        gh = h
        if self.pool is not None:
            h, _ = self.pool(h)
        return gh, h, self.proj(h)


class RawGatST(Module):
    def __init__(self, config: Optional[ModelConfig] = None):
        self.config = cfg = (config or ModelConfig()).validate()
        dtype = np.dtype(cfg.dtype).type
        rng = np.random.default_rng(cfg.seed)
        bank = build_filterbank(cfg.num_filters, cfg.kernel_length, dtype=dtype)
        self.frontend = SincFrontend(bank, cfg.segment_length, dtype)
        self.encoder = ResidualEncoder(rng, 1, tuple(zip(cfg.res_channels, cfg.res_blocks)), dtype)
        c = self.encoder.out_channels
        n_spec, n_temp = cfg.branch_nodes()
        self.spectral = (
            _Branch(c, cfg.gat_dim, cfg.frequency_rows, n_spec, cfg.k_spec, cfg.use_pooling, cfg.fused_nodes, rng, dtype)
            if cfg.use_spectral
            else None
        )
        self.temporal = (
            _Branch(c, cfg.gat_dim, cfg.time_frames, n_temp, cfg.k_temp, cfg.use_pooling, cfg.fused_nodes, rng, dtype)
            if cfg.use_temporal
            else None
        )
        self.st_gat = GatLayer(cfg.st_in_dim, cfg.st_dim, rng, dtype)
        self.st_pool = GraphPool(cfg.st_dim, cfg.k_st, rng, dtype) if cfg.use_pooling else None
        self.st_proj = Dense(cfg.st_dim, 1, rng, dtype)
        self.out = Dense(cfg.output_nodes, 2, rng, dtype)

    def forward(
        self,
        wave,
        mask: Optional[Tuple[int, int]] = None,
        trace: Optional[Callable[[str, tuple], None]] = None,
    ) -> Tensor:
        """Waveforms (B, L) or (L,) -> logits (B, 2) / (2,). Column 1 is bona fide.

        ``mask=(start, width)`` zeroes front-end rows, and only in training mode.
        """
        wave = wave if isinstance(wave, Tensor) else Tensor(np.asarray(wave, dtype=self.config.dtype))
        squeeze = wave.ndim == 1
        if squeeze:
            wave = wave.reshape(1, -1)
        x = self.frontend(wave, trace=trace)
        if mask is not None and self.training:
            x = mask_rows(x, *mask)
        S = self.encoder(x, trace=trace)

        graphs, rows = [], {"readout": [], "gat": [], "pool": [], "projection": []}
        for branch, readout in ((self.spectral, spectral_readout), (self.temporal, temporal_readout)):
            if branch is None:
                for key in rows:
                    rows[key].append(None)
                continue
            g = readout(S)
            h, pooled, projected = branch(g)
            rows["readout"].append(_graph_shape(g))
            rows["gat"].append(_graph_shape(h))
            rows["pool"].append(_graph_shape(pooled) if branch.pool is not None else None)
            rows["projection"].append(_graph_shape(projected))
            graphs.append(projected)
        if trace is not None:
            for key, pair in rows.items():
                trace(key, tuple(pair))

        if len(graphs) == 2:
            fused = fuse(graphs[0], graphs[1], self.config.fusion)
        else:
            fused = graphs[0]
        if trace is not None:
            trace("fusion", _graph_shape(fused))

        h = self.st_gat(fused)
        if trace is not None:
            trace("st_gat", _graph_shape(h))
        if self.st_pool is not None:
            h, _ = self.st_pool(h)
            if trace is not None:
                trace("st_pool", _graph_shape(h))
        else:
            if trace is not None:
                trace("st_pool", None)
        h = self.st_proj(h)  # (B, K, 1)
        if trace is not None:
            trace("st_projection", _graph_shape(h))
        logits = self.out(h.reshape(h.shape[0], h.shape[1]))
        if trace is not None:
            trace("output", logits.shape[1:])
        if not np.all(np.isfinite(logits.data)):
            raise FloatingPointError("model produced non-finite logits")
        return logits.reshape(2) if squeeze else logits

    def num_parameters(self) -> int:
        return count_parameters(self)


def scores_from_logits(logits: np.ndarray) -> np.ndarray:
    """Countermeasure score: log-softmax(bona) - log-softmax(spoof), i.e. the logit gap."""
    logits = np.asarray(logits)
    return logits[..., BONA] - logits[..., SPOOF]


def expected_shapes(config: ModelConfig) -> Dict[str, object]:
    """Trace the shape column by arithmetic alone, for any configuration."""
    cfg = config
    f, w0, t = cfg.frequency_rows, cfg.frontend_width, cfg.time_frames
    L1 = cfg.segment_length - cfg.kernel_length + 1
    w1 = w0
    for _ in range(cfg.res_blocks[0]):
        w1 //= 3
    n_spec, n_temp = cfg.branch_nodes()
    c, d = cfg.res_channels[-1], cfg.gat_dim

    def pair(spec, temp):
        return (spec if cfg.use_spectral else None, temp if cfg.use_temporal else None)

    fused = (cfg.st_in_dim, cfg.fused_nodes)
    k = cfg.output_nodes
    return {
        "sinc": (cfg.num_filters, L1),
        "add_channel": (1, cfg.num_filters, L1),
        "maxpool": (1, f, w0),
        "res_stack1": (cfg.res_channels[0], f, w1),
        "res_stack2": (c, f, t),
        "readout": pair((c, f), (c, t)),
        "gat": pair((d, f), (d, t)),
        "pool": pair((d, n_spec), (d, n_temp)) if cfg.use_pooling else (None, None),
        "projection": pair((d, cfg.fused_nodes), (d, cfg.fused_nodes)),
        "fusion": fused,
        "st_gat": (cfg.st_dim, cfg.fused_nodes),
        "st_pool": (cfg.st_dim, k) if cfg.use_pooling else None,
        "st_projection": (1, k),
        "output": (2,),
    }


def shape_trace(model: RawGatST, wave: Optional[np.ndarray] = None, seed: int = 0) -> List[Tuple[str, object]]:
    """Run one eval-mode forward pass without a graph and collect (stage, shape) rows."""
    from .tensor import no_grad

    cfg = model.config
    if wave is None:
        wave = np.random.default_rng(seed).uniform(-0.5, 0.5, cfg.segment_length)
    rows: List[Tuple[str, object]] = []
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            model(np.asarray(wave, dtype=cfg.dtype), trace=lambda name, shape: rows.append((name, shape)))
    finally:
        model.train(was_training)
    return rows
