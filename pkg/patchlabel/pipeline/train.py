"""
Training loop
-------------

Per epoch: shuffle the training windows, and for every mini-batch compute
L = L_cls + L_seg + L_pre, take one Adam step; then adjust the learning rate
and validate. Training stops after `max_epochs`, or once the validation
score has not improved for `patience` epochs. The score is the weighted F1,
averaged with the future-label accuracy when windows carry continuations;
in signal-forecast mode it is the negative forecast MSE. The best
validation parameters are returned.

One JSON line per epoch is appended to the history file.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from patchlabel import losses as L
from patchlabel.data.patching import PatchBatch
from patchlabel.errors import ConfigError, DataError, DimensionError, NumericalError
from patchlabel.metrics import forecast_mse, jaccard, weighted_f1
from patchlabel.model.config import SIGNAL_FORECAST
from patchlabel.model.network import ForwardResult, PatchLabelModel
from patchlabel.model.params import ModelParams
from patchlabel.numerics import tensor as T
from patchlabel.numerics.optim import AdamState, adam_step
from patchlabel.numerics.rng import make_generator
from patchlabel.numerics.tensor import GradTape, Tensor
from .state import TrainState
from .windows import WindowDataset

_logger = logging.getLogger('patchlabel.train')


@dataclass
class TrainConfig:
    """
    Optimization and batching settings.
    """
    batch_size: int = 64
    lr: float = 1e-4
    max_epochs: int = 30
    patience: int = 10
    lr_decay: float = 0.5
    lr_step_epochs: int = 10
    seed: int = 0
    window: int = 200
    window_stride: Optional[int] = None
    seg_loss: bool = True
    forecast_loss: bool = True
    class_balance: bool = False
    tau_smooth: float = L.DEFAULT_TAU
    smooth_size: int = 9

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f'batch size must be >= 1, got {self.batch_size}')
        if self.lr < 0 or not math.isfinite(self.lr):
            raise ConfigError(f'learning rate must be finite and >= 0, got {self.lr}')
        if self.patience < 1:
            raise ConfigError(f'patience must be >= 1, got {self.patience}')
        if self.max_epochs < 1:
            raise ConfigError(f'max_epochs must be >= 1, got {self.max_epochs}')
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f'lr decay must be in (0, 1], got {self.lr_decay}')
        if self.lr_step_epochs < 1:
            raise ConfigError(f'lr step must be >= 1 epoch, got {self.lr_step_epochs}')
        if self.seed < 0:
            raise ConfigError(f'seed must be >= 0, got {self.seed}')
        if self.window < 1 or (self.window_stride is not None and self.window_stride < 1):
            raise ConfigError('window length and stride must be >= 1')
        if self.tau_smooth <= 0:
            raise ConfigError(f'smoothing threshold must be positive, got {self.tau_smooth}')
        if self.smooth_size < 1 or self.smooth_size % 2 == 0:
            raise ConfigError(f'smoothing window must be odd and >= 1, got {self.smooth_size}')

    def to_dict(self) -> dict:
        """JSON-ready representation"""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'TrainConfig':
        """Inverse of `to_dict`; unknown keys are an error"""
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f'unknown training config keys: {", ".join(sorted(unknown))}')
        return cls(**data)


@dataclass
class TrainResult:
    """Outcome of `train`"""
    params: ModelParams
    history: List[dict]
    state: TrainState


def adjust_learning_rate(state: AdamState, epoch: int, config: TrainConfig) -> float:
    """
    Step schedule lr0 * decay^(epoch // step_epochs), set on the optimizer.
    """
    if epoch < 1:
        raise ConfigError(f'epochs count from 1, got {epoch}')
    state.lr = config.lr * config.lr_decay ** (epoch // config.lr_step_epochs)
    return state.lr


def compute_losses(model: PatchLabelModel, out: ForwardResult, batch: PatchBatch, config: TrainConfig,
                   class_weights: Optional[np.ndarray] = None,
                   future_weights: Optional[np.ndarray] = None):
    """
    Differentiable total loss and its report for one batch.

    Label-forecast mode: L_cls and L_seg over the N-1 real patches, L_pre over
    the T_p future patches. Signal-forecast mode: only the MSE of the
    normalized forecast, reported as L_pre.
    """
    cfg = model.config
    zero = Tensor(0.0, dtype=model.dtype)
    degenerate = False

    if cfg.mode == SIGNAL_FORECAST:
        if batch.future_signal is None:
            raise DataError('signal-forecast training needs window continuations')
        l_cls, l_seg = zero, zero
        l_pre = L.signal_mse(out.signal, batch.future_signal)
    else:
        real = T.slice_axis(out.probs, 1, 0, cfg.N - 1)
        targets = batch.real_labels
        l_cls = L.cross_entropy(real, targets, class_weights)
        l_seg = zero
        if config.seg_loss:
            degenerate = cfg.N - 1 < 2
            l_seg = L.tmse_smoothing(real, config.tau_smooth, targets)
        l_pre = zero
        if config.forecast_loss and out.future_probs is not None and batch.future_labels is not None:
            l_pre = L.forecast_loss(out.future_probs, batch.future_labels, future_weights)

    total = T.add(T.add(l_cls, l_seg), l_pre)
    report = L.total_loss(l_cls, l_seg, l_pre)
    report.seg_degenerate = degenerate
    return total, report


def validate(model: PatchLabelModel, dataset: WindowDataset, batch_size: int) -> Dict[str, float]:
    """
    Evaluation-mode metrics on a split: weighted F1 and Jaccard of the real
    patches, plus the future-label accuracy when the windows carry
    continuations, or the normalized forecast MSE in signal-forecast mode.
    """
    preds, truths, signal_err = [], [], []
    forecast_hits = forecast_total = 0
    for batch in dataset.batches(batch_size):
        out = model.predict(batch)
        preds.append(out.labels[:, :-1].reshape(-1))
        truths.append(batch.real_labels.reshape(-1))
        if out.signal is not None and batch.future_signal is not None:
            signal_err.append(forecast_mse(out.signal.data, batch.future_signal) * batch.B)
        if out.future_labels is not None and batch.future_labels is not None:
            forecast_hits += int((out.future_labels == batch.future_labels).sum())
            forecast_total += batch.future_labels.size

    pred, truth = np.concatenate(preds), np.concatenate(truths)
    result = {
        'val_f1': weighted_f1(pred, truth, model.config.C),
        'val_jaccard': jaccard(pred, truth),
    }
    if signal_err:
        result['val_mse'] = float(sum(signal_err) / len(dataset))
    if forecast_total:
        result['val_forecast_acc'] = forecast_hits / forecast_total
    return result


def selection_metric(val: Dict[str, float], signal_mode: bool) -> float:
    """
    Score used to keep the best parameters: negative MSE in signal-forecast
    mode, otherwise the validation F1, averaged with the future-label
    accuracy when it was measured.
    """
    if signal_mode and 'val_mse' in val:
        return -val['val_mse']
    if 'val_forecast_acc' in val:
        return 0.5 * (val['val_f1'] + val['val_forecast_acc'])
    return val['val_f1']


class Trainer:
    """
    Runs the training loop over a model it owns for the duration of the run.
    """

    def __init__(self, model: PatchLabelModel, train_set: WindowDataset, val_set: WindowDataset, config: TrainConfig,
                 history_path: Optional[Union[str, Path]] = None, state_path: Optional[Union[str, Path]] = None,
                 logger: Optional[logging.Logger] = None):
        self.model = model
        self.train_set = train_set
        self.val_set = val_set
        self.config = config
        self.history_path = Path(history_path) if history_path else None
        self.state_path = Path(state_path) if state_path else None
        self.logger = logger or _logger

        cfg = model.config
        if train_set.n_patches != cfg.N or val_set.n_patches != cfg.N:
            raise DimensionError(
                f'windows give N={train_set.n_patches}/{val_set.n_patches} patches, model expects N={cfg.N}',
                where='train')

        self.class_weights = self.future_weights = None
        if config.class_balance:
            self.class_weights = L.effective_number_weights(train_set.label_counts(cfg.C))
            self.future_weights = L.effective_number_weights(train_set.future_counts(cfg.C))
            self.logger.info('class weights: %s', np.round(self.class_weights, 4).tolist())

    def initial_state(self, gen: np.random.Generator) -> TrainState:
        """State before the first epoch, starting from the model's parameters"""
        return TrainState(
            params=self.model.params,
            best_params=self.model.params.copy(),
            adam=AdamState(lr=self.config.lr),
            gen=gen,
        )

    def _write_history(self, history: List[dict], append: Optional[dict] = None):
        if self.history_path is None:
            return
        try:
            if append is None:
                self.history_path.write_text(''.join(json.dumps(r) + '\n' for r in history), encoding='utf-8')
            else:
                with self.history_path.open('a', encoding='utf-8') as f:
                    f.write(json.dumps(append) + '\n')
        except OSError as ex:
            raise DataError(f'cannot write history: {ex}', path=self.history_path) from ex

    def _step(self, state: TrainState, batch: PatchBatch, epoch: int, step: int) -> L.LossReport:
        params = state.params
        try:
            with GradTape() as tape:
                out = self.model.forward(batch)
                total, report = compute_losses(self.model, out, batch, self.config,
                                               self.class_weights, self.future_weights)
            grads = tape.gradient(total, [params[n] for n in params.names()])
            adam_step(params.tensors, dict(zip(params.names(), grads)), state.adam)
        except DimensionError:
            raise
        except NumericalError as ex:
            raise NumericalError(f'epoch {epoch} step {step}: {ex}', where=ex.where, epoch=epoch, step=step,
                                 layer=ex.layer) from ex

        self.logger.debug('epoch %s step %s: l_cls=%.5f l_seg=%.5f l_pre=%.5f', epoch, step,
                          report.l_cls, report.l_seg, report.l_pre)
        return report

    def run(self, state: Optional[TrainState] = None, gen: Optional[np.random.Generator] = None) -> TrainResult:
        """
        Train from `state`, or from scratch. A fresh run draws shuffling and
        dropout from `gen`, by default a new generator seeded from the config.
        """
        cfg = self.config
        if state is None:
            state = self.initial_state(gen if gen is not None else make_generator(cfg.seed))
        else:
            self.model.params.load(state.params)
            state.params = self.model.params
            self.logger.info('resuming after epoch %s', state.epoch)
        self._write_history(state.history)

        mode_is_signal = self.model.config.mode == SIGNAL_FORECAST

        while state.epoch < cfg.max_epochs and state.epochs_since_improvement < cfg.patience:
            epoch = state.epoch + 1
            lr = state.adam.lr
            self.model.train_mode(state.gen)

            sums = np.zeros(4)
            steps = 0
            for batch in self.train_set.batches(cfg.batch_size, state.gen):
                report = self._step(state, batch, epoch, steps)
                sums += (report.l_cls, report.l_seg, report.l_pre, report.l_total)
                steps += 1

            self.model.eval_mode()
            adjust_learning_rate(state.adam, epoch, cfg)
            val = validate(self.model, self.val_set, cfg.batch_size)
            metric = selection_metric(val, mode_is_signal)

            means = sums / max(steps, 1)
            record = {
                'epoch': epoch,
                'lr': lr,
                'l_cls': float(means[0]),
                'l_seg': float(means[1]),
                'l_pre': float(means[2]),
                'l_total': float(means[3]),
                **val,
            }

            state.epoch = epoch
            if metric > state.best_val_metric:
                state.best_val_metric = metric
                state.best_epoch = epoch
                state.epochs_since_improvement = 0
                state.best_params = state.params.copy()
            else:
                state.epochs_since_improvement += 1

            state.history.append(record)
            self._write_history(state.history, append=record)
            if self.state_path is not None:
                state.save(self.state_path, self.logger)

            self.logger.info('epoch %s: loss %.4f (cls %.4f seg %.4f pre %.4f), val F1 %.4f, Jaccard %.4f, lr %.2e',
                             epoch, record['l_total'], record['l_cls'], record['l_seg'], record['l_pre'],
                             val['val_f1'], val['val_jaccard'], lr)

        if state.epochs_since_improvement >= cfg.patience:
            self.logger.info('early stop after epoch %s; best epoch %s', state.epoch, state.best_epoch)
        return TrainResult(params=state.best_params, history=state.history, state=state)


def train(model: PatchLabelModel, train_set: WindowDataset, val_set: WindowDataset, config: TrainConfig,
          history_path: Optional[Union[str, Path]] = None, state_path: Optional[Union[str, Path]] = None,
          resume: Optional[TrainState] = None, gen: Optional[np.random.Generator] = None,
          logger: Optional[logging.Logger] = None) -> TrainResult:
    """
    Train `model` and return the best-validation parameters with the history.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError('training and validation splits must hold at least one window')
    trainer = Trainer(model, train_set, val_set, config, history_path, state_path, logger)
    return trainer.run(resume, gen)
