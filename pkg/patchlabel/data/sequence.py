"""
Sensor sequences: ingestion, normalization and splitting
"""
import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from patchlabel.errors import ConfigError, DataError
from .descriptor import TIMESTAMP_UNITS, FormatDescriptor

_logger = logging.getLogger('patchlabel.data')

NORM_EPS = 1e-5
_MISSING = {'', 'nan', 'NaN', 'NAN', 'null', 'NULL', 'None', 'NA', 'N/A'}


@dataclass
class SensorSequence:
    """
    An L x M stream of sensor samples with one activity label per sample.
    """
    samples: np.ndarray
    labels: np.ndarray
    sample_rate_hz: float
    channel_names: Tuple[str, ...]
    class_names: Tuple[str, ...]

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        self.channel_names = tuple(self.channel_names)
        self.class_names = tuple(self.class_names)

        if self.samples.ndim != 2:
            raise DataError(f'samples must be L x M, got shape {self.samples.shape}')
        if self.labels.shape != (self.samples.shape[0],):
            raise DataError(f'{self.labels.shape[0]} labels for {self.samples.shape[0]} samples')
        if len(self.channel_names) != self.samples.shape[1]:
            raise DataError(f'{len(self.channel_names)} channel names for {self.samples.shape[1]} channels')
        if self.sample_rate_hz <= 0:
            raise DataError(f'sample rate must be positive, got {self.sample_rate_hz}')
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError(f'labels outside [0, {len(self.class_names)})')

    @property
    def length(self) -> int:
        """L, number of samples"""
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        """M, number of channels"""
        return self.samples.shape[1]

    @property
    def n_classes(self) -> int:
        """C, size of the label vocabulary"""
        return len(self.class_names)

    def slice(self, start: int, stop: int) -> 'SensorSequence':
        """Contiguous sub-sequence [start, stop)"""
        return replace(self, samples=self.samples[start:stop], labels=self.labels[start:stop])

    def __len__(self):
        return self.length

    def __repr__(self):
        return f'<SensorSequence L={self.length} M={self.n_channels} C={self.n_classes} rate={self.sample_rate_hz}Hz>'


@dataclass
class NormStats:
    """
    Per-channel mean and (population) standard deviation.
    Leading axes, if any, index sequences.
    """
    mean: np.ndarray
    std: np.ndarray

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        """Inverse of the z-scoring; channels on the last axis"""
        return x * (self.std + NORM_EPS) + self.mean


@dataclass
class SplitSpec:
    """
    Train / validation / test fractions of a stream, in time order.
    """
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2

    def __post_init__(self):
        fractions = (self.train, self.val, self.test)
        if any(f <= 0 for f in fractions):
            raise ConfigError(f'split fractions must be positive, got {fractions}')
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigError(f'split fractions must sum to 1, got {sum(fractions)}')

    def boundaries(self, length: int) -> Tuple[int, int]:
        """End of train and end of val, as sample indices (half-open)"""
        return int(round(length * self.train)), int(round(length * (self.train + self.val)))


def normalize_channels(seq: Union[SensorSequence, np.ndarray]):
    """
    Z-score every channel independently over the sequence.

    :param seq: a SensorSequence, or an array whose last two axes are L x M
    :returns (normalized, NormStats), normalized being the same kind as seq
    """
    samples = seq.samples if isinstance(seq, SensorSequence) else np.asarray(seq, dtype=np.float32)
    if samples.shape[-2] < 1:
        raise DataError('cannot normalize an empty sequence')

    mean = samples.mean(axis=-2, keepdims=True)
    std = samples.std(axis=-2, keepdims=True)
    normalized = ((samples - mean) / (std + NORM_EPS)).astype(np.float32)
    stats = NormStats(mean=np.squeeze(mean, axis=-2), std=np.squeeze(std, axis=-2))

    if isinstance(seq, SensorSequence):
        return replace(seq, samples=normalized), stats
    return normalized, stats


def sequential_split(seq: SensorSequence, split: SplitSpec, min_length: int = 1) -> Tuple[SensorSequence, SensorSequence, SensorSequence]:
    """
    Contiguous, non-shuffled train/val/test partition in time order.
    :param min_length: every part must hold at least that many samples (the window length)
    """
    first, second = split.boundaries(seq.length)
    parts = (seq.slice(0, first), seq.slice(first, second), seq.slice(second, seq.length))

    for name, part in zip(('train', 'val', 'test'), parts):
        if part.length < min_length:
            raise DataError(f'{name} split has {part.length} samples, fewer than the window length {min_length}')

    _logger.info('split %s samples into train=%s val=%s test=%s', seq.length, *(p.length for p in parts))
    return parts


def _column_key(name: str, has_header: bool):
    if has_header:
        return name
    try:
        return int(name)
    except ValueError as ex:
        raise DataError(f'without header, columns must be indices, got {name!r}') from ex


def _line_of(position: int, has_header: bool) -> int:
    return position + (2 if has_header else 1)


def _read_table(path: Path, descriptor: FormatDescriptor) -> Tuple[pd.DataFrame, pd.DataFrame]:
    try:
        frame = pd.read_csv(
            path,
            sep=descriptor.delimiter,
            header=0 if descriptor.has_header else None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            skipinitialspace=True,
        )
    except FileNotFoundError as ex:
        raise DataError('file not found', path=path) from ex
    except pd.errors.ParserError as ex:
        match = re.search(r'line (\d+)', str(ex))
        raise DataError(f'malformed row: {ex}', path=path, line=int(match.group(1)) if match else None) from ex
    except pd.errors.EmptyDataError as ex:
        raise DataError('empty file', path=path) from ex

    # cells past the end of a short row (and every cell of a blank line) are
    # absent; empty fields read as ''
    absent = frame.isna()
    frame = frame.fillna('')
    if descriptor.strip_chars:
        chars = descriptor.strip_chars + ' \t'
        frame = frame.apply(lambda col: col.str.strip(chars))
    else:
        frame = frame.apply(lambda col: col.str.strip())
    return frame, absent


def load_csv(path: Union[str, Path], descriptor: FormatDescriptor, fill_fraction: Optional[float] = None) -> SensorSequence:
    """
    Read a sensor file described by `descriptor`.

    Missing channel values are filled with the column mean. With
    `fill_fraction`, only the leading fraction of rows (the training part of a
    later sequential split) contributes to that mean.

    :raises DataError: malformed row (with its line number), unknown label
    """
    path = Path(path)
    frame, absent = _read_table(path, descriptor)

    label_key = _column_key(descriptor.label_col, descriptor.has_header)
    channel_keys = [_column_key(c, descriptor.has_header) for c in descriptor.channel_cols]
    ts_key = _column_key(descriptor.timestamp_col, descriptor.has_header) if descriptor.timestamp_col else None

    required = [label_key, *channel_keys] + ([ts_key] if ts_key is not None else [])
    for key in required:
        if key not in frame.columns:
            raise DataError(f'column {key!r} not found (columns: {", ".join(map(str, frame.columns))})', path=path)

    # fully blank lines are not rows
    blank = (frame == '').all(axis=1)
    short = (absent[required].any(axis=1) & ~blank).to_numpy()
    if short.any():
        row = int(np.flatnonzero(short)[0])
        cut = [str(key) for key in required if absent[key].iat[row]]
        raise DataError(
            f'malformed row: {int((~absent.iloc[row]).sum())} fields, no value for column {", ".join(cut)}',
            path=path, line=_line_of(row, descriptor.has_header))

    positions = np.flatnonzero(~blank.to_numpy())
    frame = frame.loc[~blank]
    if frame.empty:
        raise DataError('no data rows', path=path)

    raw = frame[channel_keys]
    missing = raw.isin(_MISSING).to_numpy()
    values = raw.apply(pd.to_numeric, errors='coerce').to_numpy(dtype=np.float64)
    bad = np.isnan(values) & ~missing
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataError(
            f'non-numeric value {raw.iat[row, col]!r} in column {channel_keys[col]!r}',
            path=path, line=_line_of(positions[row], descriptor.has_header))
    values[missing] = np.nan

    vocab = {name: idx for idx, name in enumerate(descriptor.label_vocab)}
    label_cells = frame[label_key].to_numpy()
    unknown = ~np.isin(label_cells, list(vocab))
    if unknown.any():
        row = int(np.flatnonzero(unknown)[0])
        raise DataError(
            f'unknown label {label_cells[row]!r} (known labels: {", ".join(descriptor.label_vocab)})',
            path=path, line=_line_of(positions[row], descriptor.has_header))
    labels = np.array([vocab[cell] for cell in label_cells], dtype=np.int64)

    if missing.any():
        rows = values.shape[0]
        fill_rows = rows if fill_fraction is None else max(1, int(round(rows * fill_fraction)))
        with np.errstate(invalid='ignore'):
            fill = np.nanmean(values[:fill_rows], axis=0) if fill_rows else np.full(values.shape[1], np.nan)
        for col in np.flatnonzero(np.isnan(fill) & missing.any(axis=0)):
            raise DataError(f'column {channel_keys[col]!r} has no values to compute a fill mean from', path=path)
        missing_rows, missing_cols = np.nonzero(missing)
        values[missing_rows, missing_cols] = fill[missing_cols]
        _logger.warning('%s: filled %s missing values with column means', path, int(missing.sum()))

    rate = _sample_rate(frame, ts_key, descriptor, path)

    seq = SensorSequence(
        samples=values.astype(np.float32),
        labels=labels,
        sample_rate_hz=rate,
        channel_names=tuple(str(c) for c in descriptor.channel_cols),
        class_names=tuple(descriptor.label_vocab),
    )
    _logger.info('loaded %s from %s', seq, path)
    return seq


def _sample_rate(frame: pd.DataFrame, ts_key, descriptor: FormatDescriptor, path: Path) -> float:
    if descriptor.sample_rate_hz is not None:
        return descriptor.sample_rate_hz
    if ts_key is None:
        raise DataError('descriptor needs `sample_rate_hz` or `timestamp_col`', path=path)

    stamps = pd.to_numeric(frame[ts_key], errors='coerce').to_numpy(dtype=np.float64)
    steps = np.diff(stamps[np.isfinite(stamps)])
    steps = steps[steps > 0]
    if not steps.size:
        raise DataError('cannot estimate the sample rate from timestamps', path=path)
    return float(1.0 / (np.median(steps) * TIMESTAMP_UNITS[descriptor.timestamp_unit]))


def write_csv(seq: SensorSequence, path: Union[str, Path], descriptor_path: Optional[Union[str, Path]] = None) -> FormatDescriptor:
    """
    Write a sequence in the CSV grammar `load_csv` reads, plus its descriptor.
    Output is byte-identical for identical sequences.
    """
    path = Path(path)
    frame = pd.DataFrame(seq.samples.astype(np.float64), columns=list(seq.channel_names))
    frame.insert(0, 'timestamp', np.arange(seq.length, dtype=np.float64) / seq.sample_rate_hz)
    frame['label'] = [seq.class_names[i] for i in seq.labels]
    try:
        frame.to_csv(path, index=False, float_format='%.6f', lineterminator='\n')
    except OSError as ex:
        raise DataError(f'cannot write data file: {ex}', path=path) from ex

    descriptor = FormatDescriptor(
        label_col='label',
        channel_cols=list(seq.channel_names),
        label_vocab=list(seq.class_names),
        timestamp_col='timestamp',
        sample_rate_hz=seq.sample_rate_hz,
    )
    descriptor.write(descriptor_path or path.with_suffix('.desc'))
    return descriptor


def concat_windows(sequences: Sequence[SensorSequence]) -> np.ndarray:
    """Stack equally long sequences into a B x L x M array"""
    lengths = {s.length for s in sequences}
    if len(lengths) != 1:
        raise DataError(f'sequences of different lengths cannot be batched: {sorted(lengths)}')
    return np.stack([s.samples for s in sequences])
