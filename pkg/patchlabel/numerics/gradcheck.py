"""
Finite-difference gradient checking
-----------------------------------

Central differences at float64 against tape gradients. The relative error of
a group is ||analytic - numeric|| / max(||analytic||, ||numeric||, floor),
computed over the checked entries (all of them, or a seeded sample for large
arrays).
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .rng import make_generator
from .tensor import PRIMITIVES, GradTape, RunningStats, Tensor
from . import tensor as T

_logger = logging.getLogger('patchlabel.numerics')

DEFAULT_STEP = 1e-6
NORM_FLOOR = 1e-10


@dataclass
class GradCheckResult:
    """Outcome of one checked group (a primitive, a layer, a parameter group)"""
    name: str
    rel_err: float
    tolerance: float
    checked: int

    @property
    def passed(self) -> bool:
        """True when within tolerance"""
        return bool(self.rel_err < self.tolerance)

    def as_dict(self) -> dict:
        """Report row"""
        return {
            'name': self.name,
            'max_rel_err': self.rel_err,
            'tolerance': self.tolerance,
            'entries': self.checked,
            'passed': self.passed,
        }


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error"""
    diff = np.linalg.norm(analytic - numeric)
    scale_ = max(np.linalg.norm(analytic), np.linalg.norm(numeric), NORM_FLOOR)
    return float(diff / scale_)


def _sample_indices(size: int, max_entries: Optional[int], gen: np.random.Generator) -> np.ndarray:
    if max_entries is None or size <= max_entries:
        return np.arange(size)
    return np.sort(gen.choice(size, size=max_entries, replace=False))


def check_function(fn: Callable[[List[Tensor]], Tensor], arrays: Sequence[np.ndarray], names: Sequence[str],
                   tolerance: float = 1e-4, step: float = DEFAULT_STEP, max_entries: Optional[int] = None,
                   seed: int = 0) -> List[GradCheckResult]:
    """
    Compare tape gradients of a scalar function with central differences.

    :param fn: builds a scalar Tensor from one tensor per array
    :param arrays: float64 inputs; each is checked as one group
    :param names: one group name per array
    :param max_entries: sample that many entries per array (all by default)
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    gen = make_generator(seed)

    leaves = [Tensor(a, requires_grad=True, name=n) for a, n in zip(arrays, names)]
    with GradTape() as tape:
        out = fn(leaves)
    analytic = tape.gradient(out, leaves)

    def evaluate() -> float:
        return fn([Tensor(a, name=n) for a, n in zip(arrays, names)]).item()

    results = []
    for array, grad, name in zip(arrays, analytic, names):
        flat = array.reshape(-1)
        picked = _sample_indices(flat.size, max_entries, gen)
        numeric = np.zeros(picked.size)
        for k, idx in enumerate(picked):
            orig = flat[idx]
            flat[idx] = orig + step
            plus = evaluate()
            flat[idx] = orig - step
            minus = evaluate()
            flat[idx] = orig
            numeric[k] = (plus - minus) / (2 * step)

        err = relative_error(grad.reshape(-1)[picked], numeric)
        results.append(GradCheckResult(name, err, tolerance, int(picked.size)))
        _logger.debug('gradcheck %s: rel err %.3e over %s entries', name, err, picked.size)
    return results


def _projected(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar <out, weights>: exercises the whole Jacobian"""
    return T.reduce_sum(T.mul(out, Tensor(weights)))


def _unary_case(op, shape, low=-1.0, high=1.0):
    def build(gen):
        x = gen.uniform(low, high, shape)
        w = gen.uniform(-1, 1, op(Tensor(x)).shape)
        return (lambda ts: _projected(op(ts[0]), w)), [x]
    return build


def _binary_case(op, shape_a, shape_b):
    def build(gen):
        a = gen.uniform(-1, 1, shape_a)
        b = gen.uniform(-1, 1, shape_b)
        w = gen.uniform(-1, 1, op(Tensor(a), Tensor(b)).shape)
        return (lambda ts: _projected(op(ts[0], ts[1]), w)), [a, b]
    return build


def _batchnorm_case(training: bool):
    def build(gen):
        x = gen.uniform(-1, 1, (6, 4))
        gamma = gen.uniform(0.5, 1.5, 4)
        beta = gen.uniform(-1, 1, 4)
        w = gen.uniform(-1, 1, (6, 4))
        stats = None if training else RunningStats(gen.uniform(-0.5, 0.5, 4), gen.uniform(0.5, 2.0, 4))

        def fn(ts):
            return _projected(T.batchnorm(ts[0], ts[1], ts[2], stats=stats, training=training, axis=-1), w)
        return fn, [x, gamma, beta]
    return build


def _dropout_case(gen):
    x = gen.uniform(-1, 1, (4, 5))
    w = gen.uniform(-1, 1, (4, 5))
    # same seed on every evaluation -> same mask
    return (lambda ts: _projected(T.dropout(ts[0], 0.3, make_generator(11), True), w)), [x]


PRIMITIVE_CASES: Dict[str, list] = {
    'add': [_binary_case(T.add, (3, 4), (4,))],
    'sub': [_binary_case(T.sub, (3, 4), (3, 1))],
    'mul': [_binary_case(T.mul, (3, 4), (3, 4))],
    'scale': [_unary_case(lambda x: T.scale(x, 1.7), (3, 4))],
    'matmul': [_binary_case(T.matmul, (3, 4), (4, 2)), _binary_case(T.matmul, (2, 3, 4), (4, 2))],
    'transpose': [_unary_case(lambda x: T.transpose(x, (1, 0, 2)), (2, 3, 4))],
    'reshape': [_unary_case(lambda x: T.reshape(x, (2, 6)), (3, 4))],
    'slice': [_unary_case(lambda x: T.slice_axis(x, 1, 1, 4), (3, 5))],
    'sum': [_unary_case(lambda x: T.reduce_sum(x, axis=1), (3, 5))],
    'softmax': [_unary_case(lambda x: T.softmax(x, axis=-1), (3, 5))],
    'log': [_unary_case(T.log, (3, 4), low=0.5, high=1.5)],
    'clamp_min': [_unary_case(lambda x: T.clamp_min(x, 0.0), (3, 4))],
    'clamp_max': [_unary_case(lambda x: T.clamp_max(x, 0.0), (3, 4))],
    'abs': [_unary_case(T.absolute, (3, 4))],
    'square': [_unary_case(T.square, (3, 4))],
    'gelu': [_unary_case(T.gelu, (3, 4), low=-3.0, high=3.0)],
    'batchnorm': [_batchnorm_case(True), _batchnorm_case(False)],
    'dropout': [_dropout_case],
}


def check_primitives(tolerance: float = 1e-4, seed: int = 0,
                     names: Optional[Sequence[str]] = None) -> List[GradCheckResult]:
    """
    Check every registered primitive (or only `names`) on random float64
    inputs in [-1, 1]. One result per primitive, reporting the worst case.
    """
    gen = make_generator(seed)
    results = []
    for name in names or sorted(PRIMITIVES):
        cases = PRIMITIVE_CASES.get(name)
        if not cases:
            _logger.warning('no gradient check case for primitive `%s`', name)
            results.append(GradCheckResult(name, float('inf'), tolerance, 0))
            continue
        worst, checked = 0.0, 0
        for build in cases:
            fn, arrays = build(gen)
            arg_names = [f'{name}.arg{i}' for i in range(len(arrays))]
            for res in check_function(fn, arrays, arg_names, tolerance=tolerance):
                worst = max(worst, res.rel_err)
                checked += res.checked
        results.append(GradCheckResult(name, worst, tolerance, checked))
    return results
