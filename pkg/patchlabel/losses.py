"""
Training losses
---------------

* ``cross_entropy``: patch-level softmax cross-entropy, probabilities clamped
  below at 1e-8 before the log.
* ``tmse_smoothing``: truncated MSE over consecutive log-probabilities. The
  absolute difference is clipped at tau, then squared; the earlier patch of
  each pair is a constant (no gradient).
* ``forecast_loss``: cross-entropy over the T_p future patches.
* ``signal_mse``: mean squared error of a normalized signal forecast.

The total objective is the unweighted sum.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from patchlabel.errors import DataError, DimensionError, NumericalError
from patchlabel.numerics import tensor as T
from patchlabel.numerics.tensor import Tensor

_logger = logging.getLogger('patchlabel.losses')

PROB_FLOOR = 1e-8
DEFAULT_TAU = 2.0
DEFAULT_BETA = 0.999


@dataclass
class LossReport:
    """Scalar values of the three losses and their sum"""
    l_cls: float
    l_seg: float
    l_pre: float
    l_total: float
    seg_degenerate: bool = False

    def as_dict(self) -> dict:
        """History record fields"""
        data = asdict(self)
        del data['seg_degenerate']
        return data


def _check_targets(probs: Tensor, targets: np.ndarray, where: str) -> np.ndarray:
    targets = np.asarray(targets)
    if probs.shape[:-1] != targets.shape:
        raise DimensionError(f'{where} targets do not match the probabilities', [probs.shape, targets.shape], where=where)
    n_classes = probs.shape[-1]
    invalid = (targets < 0) | (targets >= n_classes)
    if invalid.any():
        raise DataError(f'{where}: invalid target class id {int(targets[invalid][0])} (C={n_classes})')
    return targets.astype(np.int64)


def cross_entropy(probs: Tensor, targets: np.ndarray, class_weights: Optional[np.ndarray] = None) -> Tensor:
    """
    Mean of -log p(target) over every patch.

    :param probs: (..., C) probabilities
    :param targets: class ids, shape probs.shape[:-1]
    :param class_weights: optional (C,) weights; the mean is then weighted
    """
    targets = _check_targets(probs, targets, 'cross_entropy')
    n_classes = probs.shape[-1]

    onehot = (targets[..., None] == np.arange(n_classes)).astype(probs.dtype)
    if class_weights is not None:
        onehot = onehot * np.asarray(class_weights, dtype=probs.dtype)
    total = float(onehot.sum())
    if total <= 0:
        return Tensor(0.0, dtype=probs.dtype)

    log_p = T.log(T.clamp_min(probs, PROB_FLOOR))
    return T.scale(T.reduce_sum(T.mul(log_p, Tensor(onehot, dtype=probs.dtype))), -1.0 / total)


def transition_weights(targets: np.ndarray) -> np.ndarray:
    """
    Weight of every transition t-1 -> t: 1 / (T_k * K), k the true class at t,
    T_k the number of transitions of class k, K the number of classes present.
    Weights sum to 1.

    :param targets: (B, N) class ids
    :returns (B, N-1)
    """
    current = np.asarray(targets)[:, 1:]
    classes, inverse, counts = np.unique(current, return_inverse=True, return_counts=True)
    weights = 1.0 / counts[inverse].reshape(current.shape).astype(np.float64)
    return weights / max(len(classes), 1)


def tmse_smoothing(probs: Tensor, tau: float = DEFAULT_TAU, targets: Optional[np.ndarray] = None) -> Tensor:
    """
    Truncated MSE between log-probabilities of consecutive patches.

    Without targets it is the mean over every (window, transition, class).
    With (B, N) targets, transitions are weighted per true class (see
    `transition_weights`) and classes are averaged.

    Fewer than two patches give 0 (and a warning).
    """
    if probs.ndim != 3:
        raise DimensionError('tmse_smoothing expects (B, N, C) probabilities', [probs.shape], where='tmse_smoothing')
    batch, n, n_classes = probs.shape
    if n < 2:
        _logger.warning('smoothing loss needs at least 2 patches, got %s; using 0', n)
        return Tensor(0.0, dtype=probs.dtype)

    log_p = T.log(T.clamp_min(probs, PROB_FLOOR))
    current = T.slice_axis(log_p, 1, 1, n)
    previous = Tensor(log_p.data[:, :-1], dtype=probs.dtype)
    clipped = T.clamp_max(T.absolute(T.sub(current, previous)), tau)
    squared = T.square(clipped)

    if targets is None:
        return T.reduce_mean(squared)

    if np.shape(targets) != (batch, n):
        raise DimensionError('tmse_smoothing targets do not match', [probs.shape, np.shape(targets)], where='tmse_smoothing')
    weights = transition_weights(targets)[..., None] / n_classes
    return T.reduce_sum(T.mul(squared, Tensor(np.broadcast_to(weights, squared.shape), dtype=probs.dtype)))


def forecast_loss(future_probs: Tensor, future_targets: np.ndarray, class_weights: Optional[np.ndarray] = None) -> Tensor:
    """Cross-entropy over the T_p future patches"""
    return cross_entropy(future_probs, future_targets, class_weights)


def signal_mse(prediction: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target"""
    if prediction.shape != np.shape(target):
        raise DimensionError('signal forecast does not match its target', [prediction.shape, np.shape(target)], where='signal_mse')
    return T.reduce_mean(T.square(T.sub(prediction, Tensor(target, dtype=prediction.dtype))))


def total_loss(l_cls: float, l_seg: float, l_pre: float) -> LossReport:
    """Unweighted sum"""
    values = [float(v.item()) if isinstance(v, Tensor) else float(v) for v in (l_cls, l_seg, l_pre)]
    if not all(np.isfinite(values)):
        raise NumericalError(f'losses must be finite, got {values}', where='total_loss')
    return LossReport(*values, l_total=sum(values))


def effective_number_weights(counts: np.ndarray, beta: float = DEFAULT_BETA) -> np.ndarray:
    """
    Class weights (1 - beta) / (1 - beta^n_c), normalized to sum to the number
    of classes with n_c > 0. Absent classes get 0.
    """
    counts = np.asarray(counts, dtype=np.float64)
    present = counts > 0
    weights = np.zeros_like(counts)
    weights[present] = (1.0 - beta) / (1.0 - np.power(beta, counts[present]))
    if present.any():
        weights *= present.sum() / weights.sum()
    return weights
