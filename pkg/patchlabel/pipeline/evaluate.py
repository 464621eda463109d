"""
Evaluation and forecasting
--------------------------

Predictions of non-overlapping windows are concatenated in time order into
one patch-level label stream; metrics are computed on that stream before
and after smoothing. Forecasts are scored against the continuation of each
window, next to a persistence baseline (last observed label, or last
observed sample, held for the whole horizon).
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from patchlabel.data.sequence import NORM_EPS
from patchlabel.errors import ConfigError, DataError
from patchlabel.metrics import MetricsReport, accuracy, confusion_matrix, forecast_mse, weighted_f1
from patchlabel.model.config import SIGNAL_FORECAST, ModelConfig
from patchlabel.model.network import PatchLabelModel
from patchlabel.segmentation import DEFAULT_SMOOTH_SIZE, smooth
from .windows import WindowDataset

_logger = logging.getLogger('patchlabel.evaluate')


def check_vocabulary(config: ModelConfig, class_names: Sequence[str]):
    """
    A checkpoint only applies to data labelled with its own classes.
    """
    class_names = tuple(class_names)
    if config.class_names and tuple(config.class_names) != class_names:
        raise DataError(f'class vocabulary mismatch: model has {list(config.class_names)}, data has {list(class_names)}')
    if config.C != len(class_names):
        raise DataError(f'class vocabulary mismatch: model has {config.C} classes, data has {len(class_names)}')


@dataclass
class StreamPrediction:
    """
    Per-patch labels of a whole split, windows concatenated in time order.
    """
    preds: np.ndarray
    truths: np.ndarray
    patch_starts: np.ndarray
    n_windows: int

    def smoothed(self, smooth_size: int = DEFAULT_SMOOTH_SIZE) -> np.ndarray:
        """Smoothed prediction stream"""
        return smooth(self.preds, smooth_size)


def predict_stream(model: PatchLabelModel, dataset: WindowDataset, batch_size: int = 64) -> StreamPrediction:
    """
    Real-patch predictions of every window, in time order.
    """
    if dataset.window_stride < dataset.window:
        raise ConfigError('stream prediction needs non-overlapping windows '
                          f'(window {dataset.window}, window stride {dataset.window_stride})')
    check_vocabulary(model.config, dataset.seq.class_names)

    preds, truths = [], []
    for batch in dataset.batches(batch_size):
        out = model.predict(batch)
        preds.append(out.labels[:, :-1])
        truths.append(batch.real_labels)

    n_real = dataset.n_patches - 1
    offsets = np.arange(n_real) * dataset.stride
    starts = (np.asarray(dataset.starts)[:, None] + offsets).reshape(-1)
    return StreamPrediction(
        preds=np.concatenate(preds).reshape(-1),
        truths=np.concatenate(truths).reshape(-1),
        patch_starts=starts,
        n_windows=len(dataset),
    )


@dataclass
class EvaluationReport:
    """Metrics of the prediction stream, unsmoothed and smoothed"""
    raw: MetricsReport
    smoothed: MetricsReport
    smooth_size: int
    stream: StreamPrediction
    smoothed_preds: np.ndarray

    def to_dict(self) -> dict:
        """JSON-ready form"""
        return {
            'smooth_size': self.smooth_size,
            'n_windows': self.stream.n_windows,
            'unsmoothed': self.raw.to_dict(),
            'smoothed': self.smoothed.to_dict(),
        }


def evaluate(model: PatchLabelModel, dataset: WindowDataset, smooth_size: int = DEFAULT_SMOOTH_SIZE,
             batch_size: int = 64) -> EvaluationReport:
    """
    Forward every window, smooth the label stream and compute all metrics
    on both versions.
    """
    stream = predict_stream(model, dataset, batch_size)
    class_names = dataset.seq.class_names
    smoothed = stream.smoothed(smooth_size)

    report = EvaluationReport(
        raw=MetricsReport.compute(stream.preds, stream.truths, class_names),
        smoothed=MetricsReport.compute(smoothed, stream.truths, class_names),
        smooth_size=smooth_size,
        stream=stream,
        smoothed_preds=smoothed,
    )
    _logger.info('%s patches: weighted F1 %.4f -> %.4f, Jaccard %.4f -> %.4f after smoothing (window %s)',
                 report.raw.n_patches, report.raw.weighted_f1, report.smoothed.weighted_f1,
                 report.raw.jaccard, report.smoothed.jaccard, smooth_size)
    return report


@dataclass
class ForecastReport:
    """
    Forecast quality over the T_p patches after every window.

    Label mode fills the accuracy fields; signal mode fills the MSE fields.
    `predicted` / `truth` are (B, T_p) labels or (B, M, T_p*P) samples.
    """
    mode: str
    horizon: int
    n_windows: int
    predicted: np.ndarray
    truth: np.ndarray
    accuracy: Optional[float] = None
    persistence_accuracy: Optional[float] = None
    weighted_f1: Optional[float] = None
    confusion: Optional[np.ndarray] = None
    mse: Optional[float] = None
    persistence_mse: Optional[float] = None
    per_step: list = field(default_factory=list)

    def to_dict(self) -> dict:
        """JSON-ready form (predictions included for label mode only)"""
        data = {
            'mode': self.mode,
            'horizon': self.horizon,
            'n_windows': self.n_windows,
            'per_step': self.per_step,
        }
        for key in ('accuracy', 'persistence_accuracy', 'weighted_f1', 'mse', 'persistence_mse'):
            value = getattr(self, key)
            if value is not None:
                data[key] = value
        if self.mode != SIGNAL_FORECAST:
            data['predicted'] = self.predicted.tolist()
            data['truth'] = self.truth.tolist()
        return data


def _label_forecast(model: PatchLabelModel, dataset: WindowDataset, batch_size: int) -> ForecastReport:
    cfg = model.config
    preds, truths, last = [], [], []
    for batch in dataset.batches(batch_size):
        out = model.predict(batch)
        preds.append(out.future_labels)
        truths.append(batch.future_labels)
        last.append(batch.real_labels[:, -1])

    pred, truth = np.concatenate(preds), np.concatenate(truths)
    persistence = np.repeat(np.concatenate(last)[:, None], cfg.T_p, axis=1)
    per_step = [float(np.mean(pred[:, t] == truth[:, t])) for t in range(cfg.T_p)]
    return ForecastReport(
        mode=cfg.mode,
        horizon=cfg.T_p,
        n_windows=len(dataset),
        predicted=pred,
        truth=truth,
        accuracy=accuracy(pred, truth, cfg.C)[0],
        persistence_accuracy=accuracy(persistence, truth, cfg.C)[0],
        weighted_f1=weighted_f1(pred, truth, cfg.C),
        confusion=confusion_matrix(pred, truth, cfg.C),
        per_step=per_step,
    )


def _signal_forecast(model: PatchLabelModel, dataset: WindowDataset, batch_size: int) -> ForecastReport:
    cfg = model.config
    preds, truths, held = [], [], []
    for batch in dataset.batches(batch_size):
        if batch.future_signal is None or batch.norm_stats is None:
            raise DataError('signal forecasts need normalized windows with continuations')
        out = model.predict(batch)
        preds.append(model.forecast_signal(out.z, batch.norm_stats))

        stats = batch.norm_stats
        truths.append(batch.future_signal * (stats.std[..., None] + NORM_EPS) + stats.mean[..., None])
        # last observed sample of every channel, from the fill patch
        last = batch.patches[:, -1, 0].reshape(batch.B, batch.M)
        held.append(np.repeat(stats.denormalize(last)[..., None], cfg.T_p * cfg.P, axis=-1))

    pred, truth, persistence = np.concatenate(preds), np.concatenate(truths), np.concatenate(held)
    step = cfg.P
    per_step = [forecast_mse(pred[..., t * step:(t + 1) * step], truth[..., t * step:(t + 1) * step])
                for t in range(cfg.T_p)]
    return ForecastReport(
        mode=cfg.mode,
        horizon=cfg.T_p,
        n_windows=len(dataset),
        predicted=pred,
        truth=truth,
        mse=forecast_mse(pred, truth),
        persistence_mse=forecast_mse(persistence, truth),
        per_step=per_step,
    )


def forecast(model: PatchLabelModel, dataset: WindowDataset, batch_size: int = 64) -> ForecastReport:
    """
    Score the model's forecasts on windows built with continuations.
    """
    cfg = model.config
    if cfg.T_p < 1:
        raise ConfigError('forecasting needs a horizon T_p >= 1')
    if dataset.patched.horizon != cfg.T_p:
        raise DataError(f'windows carry {dataset.patched.horizon} future patches, model forecasts {cfg.T_p}')
    check_vocabulary(cfg, dataset.seq.class_names)

    if cfg.mode == SIGNAL_FORECAST:
        report = _signal_forecast(model, dataset, batch_size)
        _logger.info('signal forecast over %s windows: MSE %.5f, persistence MSE %.5f',
                     report.n_windows, report.mse, report.persistence_mse)
    else:
        report = _label_forecast(model, dataset, batch_size)
        _logger.info('label forecast over %s windows: accuracy %.4f, persistence %.4f',
                     report.n_windows, report.accuracy, report.persistence_accuracy)
    return report
