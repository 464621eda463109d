"""
Builders shared by the tests
"""
import numpy as np

from patchlabel.data.sequence import SensorSequence
from patchlabel.model.config import ModelConfig
from patchlabel.model.network import PatchLabelModel
from patchlabel.model.params import ModelParams
from patchlabel.numerics.rng import make_generator
from patchlabel.pipeline.windows import WindowDataset


def labelled(labels, channels=2, rate=10.0, n_classes=None):
    """Sequence with a ramp on every channel and the given labels"""
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = n_classes or int(labels.max()) + 1
    samples = np.arange(labels.size * channels, dtype=np.float32).reshape(labels.size, channels)
    return SensorSequence(
        samples=samples,
        labels=labels,
        sample_rate_hz=rate,
        channel_names=tuple(f'ch_{m}' for m in range(channels)),
        class_names=tuple(f'class_{c}' for c in range(n_classes)),
    )


def tiny_config(**overrides):
    """C=3, M=2, N=5, P=4: windows of 16 samples"""
    values = dict(C=3, M=2, N=5, P=4, S=4, D=8, H=2, n_layers=1, ffn_dim=16, T_p=2, dropout=0.0)
    values.update(overrides)
    return ModelConfig(**values)


def tiny_model(seed=0, dtype=np.float32, **overrides):
    """Freshly initialized model on `tiny_config`"""
    return PatchLabelModel(ModelParams.init(tiny_config(**overrides), make_generator(seed), dtype=dtype))


def window_set(seq, horizon=2, name='windows', **kwargs):
    """Windows of 16 samples (tiny_config's N=5, P=4) with continuations"""
    return WindowDataset(seq, 16, 4, horizon=horizon, require_future=horizon > 0, name=name, **kwargs)
