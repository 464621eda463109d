"""
Adam optimizer
--------------

Plain Adam with bias correction. Parameters and moments are keyed by the
parameter name, so states line up with the canonical parameter order.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from patchlabel.errors import DimensionError, NumericalError
from .tensor import Tensor

_logger = logging.getLogger('patchlabel.numerics')


@dataclass
class AdamState:
    """
    Per-parameter first/second moments, step counter and hyperparameters.
    """
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def moments_for(self, name: str, param: np.ndarray):
        """Moments of a parameter, created on first use"""
        if name not in self.m:
            self.m[name] = np.zeros_like(param)
            self.v[name] = np.zeros_like(param)
        m, v = self.m[name], self.v[name]
        if m.shape != param.shape:
            raise DimensionError(f'Adam moments of `{name}` do not match parameter', [m.shape, param.shape], where=name)
        return m, v

    def hyperparameters(self) -> dict:
        """Scalar part of the state"""
        return {'lr': self.lr, 'beta1': self.beta1, 'beta2': self.beta2, 'eps': self.eps, 'step': self.step}


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState) -> Mapping[str, Tensor]:
    """
    Apply one Adam update in place.
    :param params: parameter tensors by name
    :param grads: gradient arrays by name, same shapes
    :param state: moments, updated in place; its step counter increases by one
    :returns params
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f'non-finite gradient for parameter `{name}`', where=name)
        if name not in params:
            raise KeyError(f'gradient for unknown parameter `{name}`')
        if grad.shape != params[name].shape:
            raise DimensionError(f'gradient of `{name}` does not match parameter', [grad.shape, params[name].shape], where=name)

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t

    for name, grad in grads.items():
        param = params[name].data
        m, v = state.moments_for(name, param)
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad

        m_hat = m / correction1
        v_hat = v / correction2
        param -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype)

    _logger.debug('adam step %s (lr=%s)', t, state.lr)
    return params
