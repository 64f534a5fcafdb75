"""Structure-compressed networks: layers, training, the differentiable estimator."""

from .dpe import CrosstalkEstimate, RankError, fit_gamma, forward_dpe, gamma_from_tile
from .layers import RunContext
from .metrics import classify_metrics, confusion_matrix
from .model import Sequential, digit_cnn, param_report, tiny_mlp
from .train import TrainConfig, infer, train

__all__ = [
    "CrosstalkEstimate",
    "RankError",
    "fit_gamma",
    "forward_dpe",
    "gamma_from_tile",
    "RunContext",
    "classify_metrics",
    "confusion_matrix",
    "Sequential",
    "digit_cnn",
    "param_report",
    "tiny_mlp",
    "TrainConfig",
    "infer",
    "train",
]
