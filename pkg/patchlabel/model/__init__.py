"""
Patch-to-label Transformer: configuration, parameters, forward pass, checkpoints
"""
from .checkpoint import load_checkpoint, save_checkpoint  # noqa
from .config import LABEL_FORECAST, SIGNAL_FORECAST, ModelConfig  # noqa
from .network import ForwardResult, PatchLabelModel  # noqa
from .params import ModelParams  # noqa
