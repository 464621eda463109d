"""
Dense tensor arithmetic with reverse-mode gradients, Adam, gradient checks
"""
from .optim import AdamState, adam_step  # noqa
from .rng import make_generator  # noqa
from .tensor import GradTape, RunningStats, Tensor  # noqa
