"""
UniMiB SHAR accelerometer recordings (MATLAB files)

The release stores fixed 151-sample windows at 50 Hz, one per row of
``acc_data`` (x samples, then y, then z), with ``acc_labels`` holding
class id (1-based), subject and trial per window.
"""
import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import scipy.io
from scipy.io.matlab import MatReadError

from patchlabel.errors import DataError
from .sequence import SensorSequence

_logger = logging.getLogger('patchlabel.data')

UNIMIB_RATE_HZ = 50.0
UNIMIB_WINDOW = 151
UNIMIB_CHANNELS = ('acc_x', 'acc_y', 'acc_z')
UNIMIB_CLASSES = (
    'StandingUpFS', 'StandingUpFL', 'Walking', 'Running', 'GoingUpS', 'Jumping', 'GoingDownS', 'LyingDownFS',
    'SittingDown', 'FallingForw', 'FallingRight', 'FallingBack', 'HittingObstacle', 'FallingWithPS',
    'FallingBackSC', 'Syncope', 'FallingLeft',
)


def _matrix(path: Path) -> np.ndarray:
    try:
        content = scipy.io.loadmat(str(path))
    except FileNotFoundError as ex:
        raise DataError('file not found', path=path) from ex
    except (MatReadError, ValueError, TypeError, OSError) as ex:
        raise DataError(f'not a MATLAB file: {ex}', path=path) from ex

    arrays = [value for key, value in content.items() if not key.startswith('__')]
    if len(arrays) != 1:
        raise DataError(f'expected one variable, found {len(arrays)}', path=path)
    return np.asarray(arrays[0])


def load_unimib(data_path: Union[str, Path], labels_path: Optional[Union[str, Path]] = None,
                class_names: Sequence[str] = UNIMIB_CLASSES) -> SensorSequence:
    """
    Concatenate the windows of a UniMiB SHAR release, in file order, into one
    stream; every sample of a window carries that window's label.

    :param labels_path: defaults to ``acc_labels.mat`` next to the data file
    :raises DataError: shapes do not match the release layout, unknown class id
    """
    data_path = Path(data_path)
    labels_path = Path(labels_path) if labels_path else data_path.with_name('acc_labels.mat')

    data = _matrix(data_path).astype(np.float64)
    labels = _matrix(labels_path)
    width = UNIMIB_WINDOW * len(UNIMIB_CHANNELS)
    if data.ndim != 2 or data.shape[1] != width:
        raise DataError(f'expected windows x {width} samples, got shape {data.shape}', path=data_path)
    if labels.ndim != 2 or labels.shape[0] != data.shape[0]:
        raise DataError(f'{labels.shape[0] if labels.ndim else 0} label rows for {data.shape[0]} windows',
                        path=labels_path)
    if not np.isfinite(data).all():
        row = int(np.flatnonzero(~np.isfinite(data).all(axis=1))[0])
        raise DataError('non-finite sample', path=data_path, line=row + 1)

    ids = labels[:, 0].astype(np.int64) - 1
    unknown = (ids < 0) | (ids >= len(class_names))
    if unknown.any():
        row = int(np.flatnonzero(unknown)[0])
        raise DataError(f'unknown class id {ids[row] + 1} (known: 1..{len(class_names)})',
                        path=labels_path, line=row + 1)

    # windows x channels x samples -> (windows * samples) x channels
    samples = data.reshape(data.shape[0], len(UNIMIB_CHANNELS), UNIMIB_WINDOW).transpose(0, 2, 1)
    seq = SensorSequence(
        samples=samples.reshape(-1, len(UNIMIB_CHANNELS)),
        labels=np.repeat(ids, UNIMIB_WINDOW),
        sample_rate_hz=UNIMIB_RATE_HZ,
        channel_names=UNIMIB_CHANNELS,
        class_names=tuple(class_names),
    )
    _logger.info('loaded %s from %s', seq, data_path)
    return seq
