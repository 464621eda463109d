"""
Patching
--------

A window of L samples on M channels becomes, per channel, N = (L-P)//S + 2
patches of P samples: N-1 real patches at offsets 0, S, 2S... and a final
fill patch made of P copies of the channel's last sample.

Channels are independent: a batch of B windows is laid out as B*M rows of
N x P patches, row ``b*M + m`` holding channel m of window b.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from patchlabel.errors import ConfigError, DataError
from .sequence import NORM_EPS, NormStats, SensorSequence, concat_windows, normalize_channels

FILL_LABEL = -1


def patch_count(length: int, patch_len: int, stride: int) -> int:
    """N, including the fill patch"""
    return (length - patch_len) // stride + 2


def _check_geometry(length: int, patch_len: int, stride: int):
    if patch_len < 1 or stride < 1:
        raise ConfigError(f'patch length and stride must be >= 1, got P={patch_len} S={stride}')
    if patch_len > length:
        raise ConfigError(f'patch length {patch_len} exceeds window length {length}')


def patch_array(x: np.ndarray, patch_len: int, stride: int) -> np.ndarray:
    """
    Patch a B x L x M array into (B*M) x N x P.
    """
    if x.ndim != 3:
        raise DataError(f'expected B x L x M samples, got shape {x.shape}')
    batch, length, channels = x.shape
    _check_geometry(length, patch_len, stride)

    rows = np.ascontiguousarray(x.transpose(0, 2, 1)).reshape(batch * channels, length)
    real = sliding_window_view(rows, patch_len, axis=1)[:, ::stride]
    fill = np.repeat(rows[:, -1:], patch_len, axis=1)[:, None, :]
    patches = np.concatenate([real, fill], axis=1)

    assert patches.shape[1] == patch_count(length, patch_len, stride)
    return np.ascontiguousarray(patches, dtype=np.float32)


def derive_patch_labels(labels: np.ndarray, patch_len: int, stride: int) -> np.ndarray:
    """
    Majority class of every real patch; on ties the class that appears
    first inside the patch wins.

    :returns N-1 class ids
    """
    labels = np.asarray(labels, dtype=np.int64)
    _check_geometry(labels.shape[0], patch_len, stride)

    windows = sliding_window_view(labels, patch_len)[::stride]
    onehot = windows[..., None] == np.arange(int(labels.max()) + 1)
    counts = onehot.sum(axis=1)

    first = np.where(counts > 0, onehot.argmax(axis=1), patch_len)
    best = counts.max(axis=1, keepdims=True)
    first = np.where(counts == best, first, patch_len + 1)
    return first.argmin(axis=1).astype(np.int64)


@dataclass
class PatchBatch:
    """
    Channel-independent patches of B windows plus their bookkeeping.

    `patch_labels` is B x N; the fill column holds FILL_LABEL. Future
    targets, when present, cover the T_p patches right after each window
    (non-overlapping, stride P); `future_signal` is in the window's
    normalized space.
    """
    patches: np.ndarray
    B: int
    M: int
    L: int
    N: int
    P: int
    S: int
    patch_labels: Optional[np.ndarray] = None
    norm_stats: Optional[NormStats] = None
    future_labels: Optional[np.ndarray] = None
    future_signal: Optional[np.ndarray] = None

    def __post_init__(self):
        assert self.patches.shape == (self.B * self.M, self.N, self.P), \
            f'patch tensor {self.patches.shape} does not match B={self.B} M={self.M} N={self.N} P={self.P}'

    @property
    def real_labels(self) -> np.ndarray:
        """B x (N-1) labels of the real patches"""
        if self.patch_labels is None:
            raise DataError('batch has no labels')
        return self.patch_labels[:, :-1]

    @property
    def horizon(self) -> int:
        """T_p of the attached future targets (0 without targets)"""
        return 0 if self.future_labels is None else self.future_labels.shape[1]

    def channel_rows(self, index: int) -> np.ndarray:
        """The M patch rows of one window"""
        return self.patches[index * self.M:(index + 1) * self.M]

    def select(self, indices: Sequence[int]) -> 'PatchBatch':
        """Sub-batch of the given windows, in the given order"""
        indices = np.asarray(indices, dtype=np.int64)
        rows = (indices[:, None] * self.M + np.arange(self.M)).reshape(-1)

        def pick(array):
            return None if array is None else array[indices]

        stats = None
        if self.norm_stats is not None:
            stats = NormStats(mean=self.norm_stats.mean[indices], std=self.norm_stats.std[indices])
        return PatchBatch(
            patches=self.patches[rows],
            B=int(indices.size), M=self.M, L=self.L, N=self.N, P=self.P, S=self.S,
            patch_labels=pick(self.patch_labels),
            norm_stats=stats,
            future_labels=pick(self.future_labels),
            future_signal=pick(self.future_signal),
        )


def make_patches(seqs: Union[SensorSequence, Sequence[SensorSequence]], patch_len: int, stride: Optional[int] = None,
                 normalize: bool = True, future: Optional[Sequence[SensorSequence]] = None) -> PatchBatch:
    """
    Patch one window or a batch of equally long windows.

    :param seqs: window(s); each becomes M channel rows
    :param stride: S, defaults to P (non-overlapping)
    :param normalize: z-score each window per channel before patching
    :param future: per window, its continuation of T_p*P samples
    """
    if isinstance(seqs, SensorSequence):
        seqs = [seqs]
    if not seqs:
        raise DataError('cannot patch an empty batch')
    stride = patch_len if stride is None else stride

    samples = concat_windows(seqs)
    batch, length, channels = samples.shape
    _check_geometry(length, patch_len, stride)

    stats = None
    if normalize:
        samples, stats = normalize_channels(samples)

    labels = np.full((batch, patch_count(length, patch_len, stride)), FILL_LABEL, dtype=np.int64)
    for b, seq in enumerate(seqs):
        labels[b, :-1] = derive_patch_labels(seq.labels, patch_len, stride)

    future_labels = future_signal = None
    if future is not None:
        if len(future) != batch:
            raise DataError(f'{len(future)} continuations for {batch} windows')
        cont = concat_windows(future)
        if cont.shape[1] % patch_len:
            raise DataError(f'continuation of {cont.shape[1]} samples is not a whole number of patches of {patch_len}')
        future_labels = np.stack([derive_patch_labels(f.labels, patch_len, patch_len) for f in future])
        if stats is not None:
            cont = (cont - stats.mean[:, None, :]) / (stats.std[:, None, :] + NORM_EPS)
        future_signal = np.ascontiguousarray(cont.transpose(0, 2, 1), dtype=np.float32)

    return PatchBatch(
        patches=patch_array(samples, patch_len, stride),
        B=batch, M=channels, L=length, N=labels.shape[1], P=patch_len, S=stride,
        patch_labels=labels,
        norm_stats=stats,
        future_labels=future_labels,
        future_signal=future_signal,
    )
