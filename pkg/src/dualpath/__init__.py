"""Dual-order spatiotemporal actor-relation model for group activity
recognition, on a self-contained reverse-mode autodiff core, with a synthetic
diagnostic benchmark and a training/ablation harness.
"""

from .autodiff import Tensor, backward, zero_grad
from .contrastive import ContrastiveWeights, LossBreakdown
from .dataio import DatasetHeader, Episode, read_dataset, write_dataset
from .gradcheck import finite_difference_check
from .model import ActorTensor, ModelConfig, PathOutputs, Predictions, build_model_params
from .optim import AdamState, adam_step
from .train import RunConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "zero_grad",
    "ContrastiveWeights",
    "LossBreakdown",
    "DatasetHeader",
    "Episode",
    "read_dataset",
    "write_dataset",
    "finite_difference_check",
    "ActorTensor",
    "ModelConfig",
    "PathOutputs",
    "Predictions",
    "build_model_params",
    "AdamState",
    "adam_step",
    "RunConfig",
    "evaluate",
    "train",
    "__version__",
]
