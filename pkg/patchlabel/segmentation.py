"""
Label smoothing and segment extraction
--------------------------------------

`smooth` replaces every patch label by the modal class of the window of
`smooth_size` patches centred on it. Windows always read the original
sequence, so one pass never feeds on its own output. Ties go to the tied
class occurring nearest to the centre, then to the lower class id.

`extract_segments` run-length encodes a label sequence into segments with
inclusive ends.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from patchlabel.errors import ConfigError, DataError

_logger = logging.getLogger('patchlabel.segmentation')

DEFAULT_SMOOTH_SIZE = 9


@dataclass(frozen=True)
class Segment:
    """Run of one class over patches start..end (both inclusive)"""
    start: int
    end: int
    class_id: int

    def __post_init__(self):
        assert self.start <= self.end, f'segment start {self.start} after end {self.end}'

    @property
    def length(self) -> int:
        """Number of patches"""
        return self.end - self.start + 1


def _modal_class(window: np.ndarray, centre: int) -> int:
    counts = np.bincount(window)
    tied = np.flatnonzero(counts == counts.max())
    if tied.size == 1:
        return int(tied[0])
    distance = np.abs(np.arange(window.size) - centre)
    return int(min(tied, key=lambda c: (distance[window == c].min(), c)))


def smooth(labels: Sequence[int], smooth_size: int = DEFAULT_SMOOTH_SIZE) -> np.ndarray:
    """
    Majority-window smoothing over the original sequence.
    :param smooth_size: odd window width, in patches
    """
    if smooth_size < 1 or smooth_size % 2 == 0:
        raise ConfigError(f'smoothing window must be odd and >= 1, got {smooth_size}')
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and labels.min() < 0:
        raise DataError('cannot smooth negative class ids')

    half = smooth_size // 2
    out = labels.copy()
    if smooth_size == 1:
        return out
    for i in range(labels.size):
        low, high = max(0, i - half), min(labels.size, i + half + 1)
        out[i] = _modal_class(labels[low:high], i - low)
    return out


def extract_segments(labels: Sequence[int]) -> Tuple[List[Segment], List[int]]:
    """
    Maximal runs of equal labels.
    :returns (segments, class id of each segment)
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DataError('cannot extract segments from an empty label sequence')

    starts = np.concatenate(([0], np.flatnonzero(labels[1:] != labels[:-1]) + 1))
    ends = np.concatenate((starts[1:] - 1, [labels.size - 1]))
    segments = [Segment(int(s), int(e), int(labels[s])) for s, e in zip(starts, ends)]
    return segments, [seg.class_id for seg in segments]


def expand_segments(segments: Sequence[Segment]) -> np.ndarray:
    """Inverse of `extract_segments`"""
    if not segments:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([np.full(seg.length, seg.class_id, dtype=np.int64) for seg in segments])


def segments_frame(segments: Sequence[Segment], patch_len: int, stride: int, sample_rate_hz: float,
                   class_names: Sequence[str], patch_starts: Optional[Sequence[int]] = None) -> pd.DataFrame:
    """
    Tabular form of segments. A patch n covers samples n*S .. n*S+P-1, so a
    segment spans [start*S, end*S + P) samples.

    :param patch_starts: first sample of every patch, for label streams
                         concatenated from several windows
    """
    if patch_starts is None:
        patch_starts = np.arange(max((seg.end for seg in segments), default=-1) + 1) * stride
    rows = []
    for seg in segments:
        rows.append({
            'start_patch': seg.start,
            'end_patch': seg.end,
            'start_time_s': patch_starts[seg.start] / sample_rate_hz,
            'end_time_s': (patch_starts[seg.end] + patch_len) / sample_rate_hz,
            'class_id': seg.class_id,
            'class_name': class_names[seg.class_id] if seg.class_id < len(class_names) else str(seg.class_id),
        })
    columns = ['start_patch', 'end_patch', 'start_time_s', 'end_time_s', 'class_id', 'class_name']
    return pd.DataFrame(rows, columns=columns)


def write_segments(segments: Sequence[Segment], path: Union[str, Path], patch_len: int, stride: int,
                   sample_rate_hz: float, class_names: Sequence[str], patch_starts: Optional[Sequence[int]] = None):
    """Write segments as CSV"""
    frame = segments_frame(segments, patch_len, stride, sample_rate_hz, class_names, patch_starts)
    try:
        frame.to_csv(path, index=False, float_format='%.6f', lineterminator='\n')
    except OSError as ex:
        raise DataError(f'cannot write segments: {ex}', path=path) from ex
    _logger.info('%s segments written to %s', len(segments), path)
