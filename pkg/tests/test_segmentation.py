import numpy as np
import pandas as pd
import pytest

from patchlabel.errors import ConfigError, DataError
from patchlabel.metrics import jaccard
from patchlabel.numerics.rng import make_generator
from patchlabel.segmentation import (
    Segment, expand_segments, extract_segments, segments_frame, smooth, write_segments,
)

A, B, C = 0, 1, 2


def smooth_by_counting(labels, size):
    half, out = size // 2, []
    for i in range(len(labels)):
        window = range(max(0, i - half), min(len(labels), i + half + 1))
        counts = {}
        for j in window:
            counts[labels[j]] = counts.get(labels[j], 0) + 1
        best = max(counts.values())
        tied = [c for c in counts if counts[c] == best]
        out.append(min(tied, key=lambda c: (min(abs(j - i) for j in window if labels[j] == c), c)))
    return out


def runs_by_walking(labels):
    segments, start = [], 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            segments.append((start, i - 1, labels[start]))
            start = i
    return segments


@pytest.mark.parametrize('labels, size, expected', [
    ([A, A, B, A, A], 5, [A, A, A, A, A]),
    ([A, A, A, A], 3, [A, A, A, A]),
    ([A, B, C, B, A], 1, [A, B, C, B, A]),
    ([A, B], 3, [A, B]),
    ([A, A, C, B, B], 5, [A, A, A, B, B]),
    ([], 9, []),
])
def test_smooth(labels, size, expected):
    np.testing.assert_array_equal(smooth(labels, size), expected)


def test_smooth_reads_the_original():
    # an in-place pass would also turn index 2 into A
    labels = [A, B, A, B, B]
    np.testing.assert_array_equal(smooth(labels, 3), [A, A, B, B, B])
    assert smooth_by_counting(labels, 3) == [A, A, B, B, B]


@pytest.mark.parametrize('size', [0, 2, -3])
def test_smooth_size(size):
    with pytest.raises(ConfigError):
        smooth([A, B], size)


def test_smooth_negative():
    with pytest.raises(DataError):
        smooth([A, -1], 3)


def test_smooth_against_counting():
    gen = make_generator(0)
    for _ in range(1000):
        labels = gen.integers(0, int(gen.integers(1, 6)), size=int(gen.integers(1, 51))).tolist()
        size = int(gen.choice([1, 3, 5, 7, 9]))
        smoothed = smooth(labels, size)
        assert smoothed.tolist() == smooth_by_counting(labels, size)
        assert set(smoothed.tolist()) <= set(labels)


def test_extract_against_walking():
    gen = make_generator(1)
    for _ in range(1000):
        labels = gen.integers(0, int(gen.integers(1, 6)), size=int(gen.integers(1, 51))).tolist()
        segments, classes = extract_segments(labels)
        assert [(s.start, s.end, s.class_id) for s in segments] == runs_by_walking(labels)
        assert classes == [s.class_id for s in segments]
        assert expand_segments(segments).tolist() == labels


@pytest.mark.parametrize('labels, expected', [
    ([A, A, B, B, C], [Segment(0, 1, A), Segment(2, 3, B), Segment(4, 4, C)]),
    ([A], [Segment(0, 0, A)]),
])
def test_extract(labels, expected):
    segments, classes = extract_segments(labels)
    assert segments == expected
    assert classes == [s.class_id for s in expected]
    assert sum(s.length for s in segments) == len(labels)


def test_smooth_then_extract():
    segments, _ = extract_segments(smooth([A, A, B, A, A], 5))
    assert segments == [Segment(0, 4, A)]


def test_extract_empty():
    with pytest.raises(DataError):
        extract_segments([])
    assert expand_segments([]).size == 0


def test_idempotent_on_long_runs():
    labels = [A] * 9 + [B] * 12 + [C] * 9
    np.testing.assert_array_equal(smooth(labels, 9), labels)


def corrupt(seed):
    """Runs of 30..50 patches, flipped on a grid 5 patches clear of every boundary"""
    gen = make_generator(seed)
    truth, flips = [], []
    previous = -1
    while len(truth) < 600:
        length = int(gen.integers(30, 50, endpoint=True))
        cls = int(gen.integers(0, 4))
        while cls == previous:
            cls = int(gen.integers(0, 4))
        start = len(truth)
        truth += [cls] * length
        flips += list(range(start + 5, start + length - 5, 8))
        previous = cls

    truth = np.array(truth)
    corrupted = truth.copy()
    for i in flips:
        corrupted[i] = (truth[i] + int(gen.integers(1, 4))) % 4
    return truth, corrupted, np.array(flips)


@pytest.mark.parametrize('seed', range(100))
def test_isolated_flips_are_removed(seed):
    truth, corrupted, flips = corrupt(seed)
    assert flips.size >= 0.08 * truth.size

    smoothed = smooth(corrupted, 9)
    recovered = np.mean(smoothed[flips] == truth[flips])
    assert recovered >= 0.95
    assert jaccard(smoothed, truth) > jaccard(corrupted, truth)


def test_segments_frame():
    segments = [Segment(0, 1, A), Segment(2, 3, B)]
    frame = segments_frame(segments, patch_len=10, stride=10, sample_rate_hz=20.0, class_names=['walk', 'run'])

    assert list(frame.columns) == ['start_patch', 'end_patch', 'start_time_s', 'end_time_s', 'class_id', 'class_name']
    assert frame['start_time_s'].tolist() == [0.0, 1.0]
    assert frame['end_time_s'].tolist() == [1.0, 2.0]
    assert frame['class_name'].tolist() == ['walk', 'run']


def test_segments_frame_with_patch_starts():
    segments = [Segment(0, 2, A)]
    frame = segments_frame(segments, 4, 4, 10.0, ['a'], patch_starts=[0, 4, 100])
    assert frame['end_time_s'].tolist() == [10.4]


def test_write_segments(tmp_path):
    path = tmp_path / 'segments.csv'
    write_segments([Segment(0, 0, C)], path, 5, 5, 50.0, ['a', 'b', 'c'])
    back = pd.read_csv(path)
    assert back.to_dict('records') == [{
        'start_patch': 0, 'end_patch': 0, 'start_time_s': 0.0, 'end_time_s': 0.1, 'class_id': 2, 'class_name': 'c',
    }]

    with pytest.raises(DataError):
        write_segments([Segment(0, 0, C)], tmp_path / 'missing' / 'segments.csv', 5, 5, 50.0, ['a', 'b', 'c'])
