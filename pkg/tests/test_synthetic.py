import numpy as np
import pytest

from patchlabel.data.synthetic import class_amplitude, class_frequency, generate_synthetic
from patchlabel.errors import ConfigError


def runs(labels):
    return np.concatenate([[0], np.flatnonzero(np.diff(labels)) + 1])


def test_shape(synthetic):
    assert synthetic.n_classes == 4
    assert synthetic.n_channels == 3
    assert 60 * 50 <= synthetic.length <= 60 * 100
    assert synthetic.sample_rate_hz == 20.0
    assert synthetic.channel_names == ('ch_0', 'ch_1', 'ch_2')
    assert synthetic.class_names == ('class_0', 'class_1', 'class_2', 'class_3')


def test_segments(synthetic):
    starts = runs(synthetic.labels)
    assert starts.size == 60
    lengths = np.diff(np.append(starts, synthetic.length))
    assert lengths.min() >= 50
    assert lengths.max() <= 100


def test_deterministic():
    first = generate_synthetic(3, 2, n_segments=10, seed=5)
    again = generate_synthetic(3, 2, n_segments=10, seed=5)
    other = generate_synthetic(3, 2, n_segments=10, seed=6)
    np.testing.assert_array_equal(first.samples, again.samples)
    np.testing.assert_array_equal(first.labels, again.labels)
    assert not np.array_equal(first.samples[:50], other.samples[:50])


def test_classes_differ():
    assert class_frequency(0, 0) != class_frequency(1, 0)
    assert class_frequency(1, 0) != class_frequency(1, 1)
    assert class_amplitude(0, 0) == 1.0
    assert class_amplitude(1, 1) == 2.0


def test_amplitude(synthetic):
    start, stop = runs(synthetic.labels)[:2]
    c = synthetic.labels[start]
    peak = np.abs(synthetic.samples[start:stop, 0]).max()
    assert peak <= class_amplitude(c, 0) + 0.6


def transitions(labels):
    starts = runs(labels)
    classes = labels[starts]
    return classes[:-1], classes[1:]


@pytest.mark.parametrize('n_classes', [2, 3, 5])
def test_fixed_successor_order(n_classes):
    seq = generate_synthetic(n_classes, 1, n_segments=40, seed=2, successor_prob=1.0)
    before, after = transitions(seq.labels)
    np.testing.assert_array_equal(after, (before + 1) % n_classes)


def test_no_successor():
    seq = generate_synthetic(4, 1, n_segments=200, seed=2, successor_prob=0.0)
    before, after = transitions(seq.labels)
    assert not np.any(after == (before + 1) % 4)
    assert not np.any(after == before)
    assert set(after) == {0, 1, 2, 3}


def test_successor_mostly_followed(synthetic):
    before, after = transitions(synthetic.labels)
    assert before.size == 59
    assert np.mean(after == (before + 1) % 4) >= 0.75


@pytest.mark.parametrize('kwargs', [
    dict(n_classes=1, n_channels=2),
    dict(n_classes=3, n_channels=0),
    dict(n_classes=3, n_channels=2, n_segments=0),
    dict(n_classes=3, n_channels=2, segment_len_range=(10, 5)),
    dict(n_classes=3, n_channels=2, successor_prob=1.5),
    dict(n_classes=3, n_channels=2, successor_prob=-0.1),
])
def test_bad_arguments(kwargs):
    with pytest.raises(ConfigError):
        generate_synthetic(**kwargs)
