"""ViT encoder with three convolutional decoder heads, exact gradients, checkpoints."""

from .model import (  # noqa: F401
    ViTConfig, ViTParams, ProbabilityMask,
    init_params, param_shapes, param_count, forward, backward,
    default_skip_depths,
)
from .checkpoint import save_checkpoint, load_checkpoint  # noqa: F401
