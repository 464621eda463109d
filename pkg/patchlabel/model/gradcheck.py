"""
Gradient check suite
--------------------

Finite-difference checks of every primitive, every parameter group of a tiny
float64 model (D=8, H=2, N=4, P=4) and every loss. Each parameter group is
checked through the full forward pass and the training objective, so a
wrong backward anywhere upstream of a group shows up in that group.
"""
import logging
from collections import OrderedDict
from typing import Callable, List, Optional, Sequence

import numpy as np

from patchlabel import losses as L
from patchlabel.data.patching import FILL_LABEL, PatchBatch
from patchlabel.numerics import tensor as T
from patchlabel.numerics.gradcheck import GradCheckResult, check_function, check_primitives
from patchlabel.numerics.rng import make_generator
from patchlabel.numerics.tensor import Tensor
from .config import LABEL_FORECAST, SIGNAL_FORECAST, ModelConfig
from .network import PatchLabelModel
from .params import ModelParams

_logger = logging.getLogger('patchlabel.gradcheck')

DEFAULT_TOLERANCE = 1e-3
TINY_BATCH = 2


def tiny_config(mode: str = LABEL_FORECAST) -> ModelConfig:
    """The model every check runs on"""
    return ModelConfig(C=3, M=2, N=4, P=4, S=4, D=8, H=2, n_layers=1, ffn_dim=16, T_p=2,
                       dropout=0.0, mode=mode)


def tiny_batch(config: ModelConfig, gen: np.random.Generator, batch: int = TINY_BATCH) -> PatchBatch:
    """Random patches and targets shaped for `config`"""
    labels = np.full((batch, config.N), FILL_LABEL, dtype=np.int64)
    labels[:, :-1] = gen.integers(0, config.C, size=(batch, config.N - 1))
    return PatchBatch(
        patches=gen.normal(size=(batch * config.M, config.N, config.P)),
        B=batch, M=config.M, L=config.window_length, N=config.N, P=config.P, S=config.S,
        patch_labels=labels,
        future_labels=gen.integers(0, config.C, size=(batch, config.T_p)),
        future_signal=gen.normal(size=(batch, config.M, config.T_p * config.P)),
    )


def _label_objective(model: PatchLabelModel, batch: PatchBatch) -> Tensor:
    out = model.forward(batch)
    real = T.slice_axis(out.probs, 1, 0, model.config.N - 1)
    total = L.cross_entropy(real, batch.real_labels)
    total = T.add(total, L.tmse_smoothing(real, L.DEFAULT_TAU, batch.real_labels))
    return T.add(total, L.forecast_loss(out.future_probs, batch.future_labels))


def _signal_objective(model: PatchLabelModel, batch: PatchBatch) -> Tensor:
    return L.signal_mse(model.forward(batch).signal, batch.future_signal)


def _check_group(params: ModelParams, prefix: str, batch: PatchBatch,
                 objective: Callable[[PatchLabelModel, PatchBatch], Tensor],
                 tolerance: float, max_entries: Optional[int], seed: int) -> GradCheckResult:
    names = params.group(prefix)

    def fn(tensors: List[Tensor]) -> Tensor:
        swapped = OrderedDict(params.tensors)
        swapped.update(zip(names, tensors))
        model = PatchLabelModel(ModelParams(params.config, swapped, params.buffers))
        model.train_mode(None)
        return objective(model, batch)

    results = check_function(fn, [params[n].data for n in names], names,
                             tolerance=tolerance, max_entries=max_entries, seed=seed)
    worst = max(r.rel_err for r in results)
    return GradCheckResult(f'model.{prefix}', worst, tolerance, sum(r.checked for r in results))


def check_model(tolerance: float = DEFAULT_TOLERANCE, seed: int = 0,
                max_entries: Optional[int] = 24) -> List[GradCheckResult]:
    """
    One result per parameter group: embedding, each encoder layer, decoder,
    classifier, forecast head and signal head.
    """
    gen = make_generator(seed)
    results = []

    config = tiny_config()
    params = ModelParams.init(config, gen, dtype=np.float64)
    batch = tiny_batch(config, gen)
    groups = ['embed'] + [f'encoder.{layer}' for layer in range(config.n_layers)]
    groups += ['decoder', 'classifier', 'forecast']
    for prefix in groups:
        results.append(_check_group(params, prefix, batch, _label_objective, tolerance, max_entries, seed))

    signal_config = tiny_config(SIGNAL_FORECAST)
    signal_params = ModelParams.init(signal_config, gen, dtype=np.float64)
    # a zero head has zero gradient upstream; perturb it first
    for name in signal_params.group('signal'):
        signal_params[name].data[...] = gen.uniform(-0.5, 0.5, signal_params[name].shape)
    signal_batch = tiny_batch(signal_config, gen)
    results.append(_check_group(signal_params, 'signal', signal_batch, _signal_objective,
                                tolerance, max_entries, seed))
    return results


def _loss_cases(gen: np.random.Generator):
    batch, n, n_classes = TINY_BATCH, 4, 3
    logits = gen.normal(size=(batch, n, n_classes))
    targets = gen.integers(0, n_classes, size=(batch, n))

    def ce(ts):
        return L.cross_entropy(T.softmax(ts[0], axis=-1), targets)

    # The earlier patch of every pair is a constant for the smoothing loss,
    # so only the last patch, never an earlier one, may vary.
    mask = np.zeros((batch, n, n_classes))
    mask[:, -1] = 1.0
    base = logits.copy()

    def tmse(ts):
        varied = T.add(Tensor(base), T.mul(ts[0], Tensor(mask)))
        return L.tmse_smoothing(T.softmax(varied, axis=-1), L.DEFAULT_TAU, targets)

    future = gen.normal(size=(batch, 2, n_classes))
    future_targets = gen.integers(0, n_classes, size=(batch, 2))

    def forecast(ts):
        return L.forecast_loss(T.softmax(ts[0], axis=-1), future_targets)

    signal_target = gen.normal(size=(batch, 2, 8))

    def signal(ts):
        return L.signal_mse(ts[0], signal_target)

    return [
        ('loss.cross_entropy', ce, logits),
        ('loss.tmse', tmse, logits),
        ('loss.forecast', forecast, future),
        ('loss.signal_mse', signal, gen.normal(size=signal_target.shape)),
    ]


def check_losses(tolerance: float = DEFAULT_TOLERANCE, seed: int = 0) -> List[GradCheckResult]:
    """Each loss through a softmax on random logits"""
    gen = make_generator(seed)
    results = []
    for name, fn, array in _loss_cases(gen):
        res, = check_function(fn, [array], [name], tolerance=tolerance, seed=seed)
        results.append(res)
    return results


def run_suite(tolerance: float = DEFAULT_TOLERANCE, seed: int = 0,
              primitives: Optional[Sequence[str]] = None) -> List[GradCheckResult]:
    """
    Primitives, model parameter groups and losses, in that order.
    """
    results = [
        GradCheckResult(f'op.{r.name}', r.rel_err, r.tolerance, r.checked)
        for r in check_primitives(tolerance, seed, primitives)
    ]
    results += check_model(tolerance, seed)
    results += check_losses(tolerance, seed)

    for res in results:
        if res.passed:
            _logger.info('%-24s max rel err %.3e (%s entries)', res.name, res.rel_err, res.checked)
        else:
            _logger.error('%-24s max rel err %.3e exceeds %.1e', res.name, res.rel_err, res.tolerance)
    return results
