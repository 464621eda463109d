"""
Training, evaluation and forecasting over windowed splits
"""
from .evaluate import EvaluationReport, ForecastReport, evaluate, forecast, predict_stream  # noqa
from .state import TrainState  # noqa
from .train import TrainConfig, TrainResult, Trainer, adjust_learning_rate, train  # noqa
from .windows import WindowDataset  # noqa
