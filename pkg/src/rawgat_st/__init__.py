"""Spectro-temporal graph attention countermeasure for spoofed speech, on a small numpy autodiff core."""

from .metrics import compute_eer, per_attack_report
from .model import BONA, SPOOF, ModelConfig, RawGatST, scores_from_logits, shape_trace
from .tensor import Tensor, no_grad
from .train import TrainConfig, train, wce_loss

__all__ = [
    "BONA",
    "SPOOF",
    "ModelConfig",
    "RawGatST",
    "Tensor",
    "TrainConfig",
    "compute_eer",
    "no_grad",
    "per_attack_report",
    "scores_from_logits",
    "shape_trace",
    "train",
    "wce_loss",
]

__version__ = "0.1.0"
