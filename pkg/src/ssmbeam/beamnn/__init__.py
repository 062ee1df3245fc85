"""Neural filter-and-sum beamformer with explicit reverse-mode gradients."""

from .model import BeamformerWeights, ModelConfig, backward, forward, init_weights
from .objective import Batch, enhance, filter_and_sum, loss_and_gradients

__all__ = [
    "Batch",
    "BeamformerWeights",
    "ModelConfig",
    "backward",
    "enhance",
    "filter_and_sum",
    "forward",
    "init_weights",
    "loss_and_gradients",
]
