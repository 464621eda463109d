"""
Synthetic labeled sensor streams.

Each segment holds one class; class c emits on channel m a sinusoid of
frequency ``0.4 + 0.9*c + 0.2*m`` Hz and amplitude ``1 + 0.5*((c+m) % 3)``,
with a random phase per segment and gaussian noise.

Class c is followed by class ``(c+1) % C`` with probability
`successor_prob`, otherwise by one of the remaining classes drawn uniformly,
so upcoming activities are predictable from the current one.
"""
import logging
from typing import Tuple

import numpy as np

from patchlabel.errors import ConfigError
from patchlabel.numerics.rng import make_generator
from .sequence import SensorSequence

_logger = logging.getLogger('patchlabel.data')

DEFAULT_SUCCESSOR_PROB = 0.9


def class_frequency(class_id: int, channel: int) -> float:
    """Sinusoid frequency (Hz) of a class on a channel"""
    return 0.4 + 0.9 * class_id + 0.2 * channel


def class_amplitude(class_id: int, channel: int) -> float:
    """Sinusoid amplitude of a class on a channel"""
    return 1.0 + 0.5 * ((class_id + channel) % 3)


def generate_synthetic(n_classes: int, n_channels: int, segment_len_range: Tuple[int, int] = (50, 100),
                       n_segments: int = 60, seed: int = 0, sample_rate_hz: float = 20.0,
                       noise: float = 0.1, successor_prob: float = DEFAULT_SUCCESSOR_PROB) -> SensorSequence:
    """
    Piecewise-stationary stream, deterministic given the seed. Consecutive
    segments always differ in class, so labels have exactly `n_segments` runs.
    """
    if n_classes < 2:
        raise ConfigError(f'synthetic data needs at least 2 classes, got {n_classes}')
    if n_channels < 1:
        raise ConfigError(f'synthetic data needs at least 1 channel, got {n_channels}')
    if n_segments < 1:
        raise ConfigError(f'synthetic data needs at least 1 segment, got {n_segments}')
    low, high = segment_len_range
    if low < 1 or high < low:
        raise ConfigError(f'invalid segment length range {segment_len_range}')
    if not 0.0 <= successor_prob <= 1.0:
        raise ConfigError(f'successor probability must be in [0, 1], got {successor_prob}')
    if class_frequency(n_classes - 1, n_channels - 1) >= sample_rate_hz / 2:
        _logger.warning('highest class frequency is above Nyquist at %s Hz; classes may alias', sample_rate_hz)

    gen = make_generator(seed)
    chunks, labels = [], []
    previous = -1
    channels = np.arange(n_channels)

    for _ in range(n_segments):
        length = int(gen.integers(low, high, endpoint=True))
        if previous < 0:
            class_id = int(gen.integers(n_classes))
        else:
            follows = gen.random() < successor_prob
            successor = (previous + 1) % n_classes
            if follows or n_classes == 2:
                class_id = successor
            else:
                # uniform over the classes other than previous and its successor
                class_id = int(gen.integers(n_classes - 2))
                for taken in sorted((previous, successor)):
                    class_id += class_id >= taken
        previous = class_id

        t = np.arange(length) / sample_rate_hz
        phase = gen.uniform(0.0, 2 * np.pi, n_channels)
        freq = class_frequency(class_id, channels)
        amp = class_amplitude(class_id, channels)
        clean = amp * np.sin(2 * np.pi * freq * t[:, None] + phase)
        chunks.append(clean + gen.normal(0.0, noise, (length, n_channels)))
        labels.append(np.full(length, class_id, dtype=np.int64))

    seq = SensorSequence(
        samples=np.concatenate(chunks).astype(np.float32),
        labels=np.concatenate(labels),
        sample_rate_hz=sample_rate_hz,
        channel_names=tuple(f'ch_{m}' for m in range(n_channels)),
        class_names=tuple(f'class_{c}' for c in range(n_classes)),
    )
    _logger.info('generated %s (seed %s, %s segments)', seq, seed, n_segments)
    return seq
