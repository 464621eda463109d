"""
Windowing of a split into patch batches
"""
import logging
from typing import Iterator, List, Optional

import numpy as np

from patchlabel.data.patching import PatchBatch, make_patches
from patchlabel.data.sequence import SensorSequence
from patchlabel.errors import ConfigError, DataError

_logger = logging.getLogger('patchlabel.data')


class WindowDataset:
    """
    Contiguous windows of `window` samples cut from one split, patched once.

    With a forecast horizon, every window also carries its continuation of
    ``horizon * patch_len`` samples; windows whose continuation would cross
    the end of the split are dropped when `require_future` is set.
    """

    def __init__(self, seq: SensorSequence, window: int, patch_len: int, stride: Optional[int] = None,
                 window_stride: Optional[int] = None, horizon: int = 0, require_future: bool = False,
                 name: str = 'windows'):
        if window < 1:
            raise ConfigError(f'window length must be >= 1, got {window}')
        self.seq = seq
        self.name = name
        self.window = window
        self.patch_len = patch_len
        self.stride = stride or patch_len
        self.window_stride = window_stride or window
        self.horizon = horizon
        self.future_len = horizon * patch_len if require_future else 0

        if self.window_stride < 1:
            raise ConfigError(f'window stride must be >= 1, got {self.window_stride}')

        last = seq.length - window - self.future_len
        self.starts: List[int] = list(range(0, last + 1, self.window_stride)) if last >= 0 else []
        if not self.starts:
            raise DataError(
                f'{name}: split of {seq.length} samples holds no window of {window} samples'
                + (f' plus a continuation of {self.future_len}' if self.future_len else ''))

        if self.future_len:
            plain = len(range(0, seq.length - window + 1, self.window_stride))
            if plain > len(self.starts):
                _logger.warning('%s: dropped %s windows whose continuation crosses the split boundary',
                                name, plain - len(self.starts))

        windows = [seq.slice(s, s + window) for s in self.starts]
        future = None
        if self.future_len:
            future = [seq.slice(s + window, s + window + self.future_len) for s in self.starts]
        self.patched = make_patches(windows, patch_len, self.stride, normalize=True, future=future)
        _logger.info('%s: %s windows of %s samples, N=%s patches', name, len(self), window, self.patched.N)

    def __len__(self):
        return len(self.starts)

    @property
    def n_patches(self) -> int:
        """N per window, fill patch included"""
        return self.patched.N

    def all(self) -> PatchBatch:
        """Every window, in time order"""
        return self.patched

    def batches(self, batch_size: int, gen: Optional[np.random.Generator] = None) -> Iterator[PatchBatch]:
        """
        Mini-batches; the window order is a permutation drawn from `gen`, or
        time order without a generator.
        """
        order = gen.permutation(len(self)) if gen is not None else np.arange(len(self))
        for first in range(0, len(order), batch_size):
            yield self.patched.select(order[first:first + batch_size])

    def label_counts(self, n_classes: int) -> np.ndarray:
        """Real-patch label counts, for class balancing"""
        return np.bincount(self.patched.real_labels.reshape(-1), minlength=n_classes)

    def future_counts(self, n_classes: int) -> np.ndarray:
        """Future-patch label counts"""
        if self.patched.future_labels is None:
            return np.zeros(n_classes, dtype=np.int64)
        return np.bincount(self.patched.future_labels.reshape(-1), minlength=n_classes)
