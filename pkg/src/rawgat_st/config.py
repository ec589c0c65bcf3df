"""Flat ``section.key = value`` configuration shared by the command-line tools.

File syntax::

    # comment
    seed = 0
    model.fusion = mul
    [train]            # optional: prefixes following keys with "train."
    epochs = 50

Every key is declared in :data:`KEYS`; anything else is rejected by name.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Optional, Tuple

from .model import ConfigError, ModelConfig
from .train import TrainConfig


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int_pair(text: str) -> Tuple[int, int]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 2:
        raise ValueError(f"expected two integers, got {text!r}")
    return int(parts[0]), int(parts[1])


def _path(text: str) -> Optional[str]:
    return text.strip() or None


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str


_m, _t = ModelConfig(), TrainConfig()

KEYS: Dict[str, Key] = {
    "seed": Key(int, 0, "seed for initialisation, shuffling and masking"),
    "model.fusion": Key(str, _m.fusion, "fusion of the two branch graphs: add, mul or concat"),
    "model.k_spec": Key(float, _m.k_spec, "spectral branch pooling ratio in (0, 1]"),
    "model.k_temp": Key(float, _m.k_temp, "temporal branch pooling ratio in (0, 1]"),
    "model.k_st": Key(float, _m.k_st, "spectro-temporal block pooling ratio in (0, 1]"),
    "model.use_spectral": Key(_bool, True, "keep the spectral attention branch"),
    "model.use_temporal": Key(_bool, True, "keep the temporal attention branch"),
    "model.use_pooling": Key(_bool, True, "keep the three graph pooling layers"),
    "model.segment_length": Key(int, _m.segment_length, "samples per utterance after truncation/tiling"),
    "model.num_filters": Key(int, _m.num_filters, "sinc filters in the front-end"),
    "model.kernel_length": Key(int, _m.kernel_length, "sinc kernel taps (odd)"),
    "model.res_channels": Key(_int_pair, _m.res_channels, "channels of the two residual stacks, e.g. 32,64"),
    "model.res_blocks": Key(_int_pair, _m.res_blocks, "blocks in the two residual stacks, e.g. 2,4"),
    "model.gat_dim": Key(int, _m.gat_dim, "branch graph attention output features"),
    "model.st_dim": Key(int, _m.st_dim, "spectro-temporal graph attention output features"),
    "model.fused_nodes": Key(int, _m.fused_nodes, "nodes each branch graph is projected to before fusion"),
    "model.dtype": Key(str, _m.dtype, "float32 or float64"),
    "train.lr": Key(float, _t.lr, "Adam learning rate"),
    "train.batch_size": Key(int, _t.batch_size, "mini-batch size"),
    "train.epochs": Key(int, _t.epochs, "training epochs"),
    "train.wce_bona": Key(float, _t.wce_bona, "cross-entropy weight of bona fide trials"),
    "train.wce_spoof": Key(float, _t.wce_spoof, "cross-entropy weight of spoof trials"),
    "train.mask_limit": Key(int, _t.mask_limit, "widest channel mask drawn during training"),
    "train.beta1": Key(float, _t.beta1, "Adam first-moment decay"),
    "train.beta2": Key(float, _t.beta2, "Adam second-moment decay"),
    "train.eps": Key(float, _t.eps, "Adam denominator epsilon"),
    "data.train": Key(_path, None, "training manifest (lines of 'path label')"),
    "data.dev": Key(_path, None, "development manifest used for model selection"),
    "data.synthetic": Key(_bool, False, "generate the synthetic corpus instead of reading manifests"),
    "data.synthetic_train": Key(int, 100, "synthetic training utterances per class"),
    "data.synthetic_dev": Key(int, 40, "synthetic development utterances per class"),
    "data.synthetic_seed": Key(int, 1, "seed of the synthetic training set; the dev set uses seed + 1"),
    "data.score": Key(_path, None, "manifest of utterances to score"),
    "data.protocol": Key(_path, None, "protocol file with labels and attack ids for evaluation"),
    "checkpoint": Key(_path, None, "model checkpoint to read (score) or write (train)"),
    "out.dir": Key(_path, "run", "directory for training outputs"),
    "out.scores": Key(_path, None, "score file written by 'score'"),
    "out.report": Key(_path, None, "machine-readable copy of the evaluation report"),
}


def describe_keys() -> str:
    width = max(len(k) for k in KEYS)
    lines = []
    for name, key in KEYS.items():
        default = key.default
        if isinstance(default, tuple):
            default = ",".join(map(str, default))
        lines.append(f"  {name:<{width}}  {key.help} [default: {default}]")
    return "\n".join(lines)


def parse_value(name: str, text: str) -> Any:
    if name not in KEYS:
        raise ConfigError(f"unknown configuration key {name!r}")
    try:
        return KEYS[name].parse(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def parse_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        name = f"{section}.{key}" if section else key
        try:
            values[name] = parse_value(name, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def load(path: Optional[str] = None, overrides: Iterable[str] = ()) -> "Settings":
    """Defaults, then the file, then ``key=value`` overrides, in that order."""
    values = {k: v.default for k, v in KEYS.items()}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"--config: no such file {path}")
        from_file = parse_text(p.read_text(), str(p))
        values.update(from_file)
        explicit = set(from_file)
    else:
        explicit = set()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        values[key] = parse_value(key, value)
        explicit.add(key)
    return Settings(values, explicit)


class Settings:
    """Resolved values plus the set of keys the user gave explicitly."""

    def __init__(self, values: Dict[str, Any], explicit: Iterable[str] = ()):
        self.values = dict(values)
        self.explicit = set(explicit)

    def __getitem__(self, name: str) -> Any:
        return self.values[name]

    def set(self, name: str, value: Any) -> None:
        if name not in KEYS:
            raise ConfigError(f"unknown configuration key {name!r}")
        self.values[name] = value
        self.explicit.add(name)

    def section(self, prefix: str) -> Dict[str, Any]:
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def model_config(self) -> ModelConfig:
        d = self.section("model")
        d["seed"] = self["seed"]
        d["mask_limit"] = self["train.mask_limit"]
        try:
            return ModelConfig(**d).validate()
        except ConfigError as exc:
            msg = str(exc)
            if msg.startswith("seed"):
                raise
            prefix = "train." if msg.startswith("mask_limit") else "model."
            raise ConfigError(prefix + msg) from None

    def train_config(self) -> TrainConfig:
        d = self.section("train")
        d["seed"] = self["seed"]
        cfg = TrainConfig(**d)
        try:
            return cfg.validate(self.model_config().frequency_rows)
        except ConfigError as exc:
            raise ConfigError(f"train.{exc}") from None

    def require(self, name: str) -> Any:
        value = self.values.get(name)
        if value is None:
            raise ConfigError(f"{name}: required but not set")
        return value
