import numpy as np
import pytest

from patchlabel.data.descriptor import FormatDescriptor
from patchlabel.data.sequence import (
    NORM_EPS, SensorSequence, SplitSpec, concat_windows, load_csv, normalize_channels, sequential_split, write_csv,
)
from patchlabel.errors import ConfigError, DataError
from tests.helpers import labelled

DESC = FormatDescriptor(label_col='label', channel_cols=['x', 'y'], label_vocab=['walk', 'sit'], sample_rate_hz=50.0)


def write(tmp_path, text, name='data.csv'):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load(tmp_path):
    path = write(tmp_path, 'x,y,label\n1,2,walk\n3,4,sit\n5,6,walk\n')
    seq = load_csv(path, DESC)

    np.testing.assert_array_equal(seq.samples, [[1, 2], [3, 4], [5, 6]])
    np.testing.assert_array_equal(seq.labels, [0, 1, 0])
    assert seq.sample_rate_hz == 50.0
    assert seq.channel_names == ('x', 'y')
    assert seq.class_names == ('walk', 'sit')
    assert (seq.length, seq.n_channels, seq.n_classes) == (3, 2, 2)
    assert len(seq) == 3


def test_headerless_with_strip_chars(tmp_path):
    path = write(tmp_path, '33,Jogging,100,-0.69,12.68,0.50;\n33,Walking,150,1.0,2.0,3.0;\n')
    seq = load_csv(path, FormatDescriptor.bundled('wisdm'))
    np.testing.assert_allclose(seq.samples, [[-0.69, 12.68, 0.50], [1.0, 2.0, 3.0]], rtol=1e-6)
    np.testing.assert_array_equal(seq.labels, [1, 0])
    assert seq.sample_rate_hz == 20.0


def test_rate_from_timestamps(tmp_path):
    desc = FormatDescriptor(label_col='label', channel_cols=['x'], label_vocab=['a'], timestamp_col='t',
                            timestamp_unit='ms')
    path = write(tmp_path, 't,x,label\n0,1,a\n50,2,a\n100,3,a\n150,4,a\n')
    assert load_csv(path, desc).sample_rate_hz == pytest.approx(20.0)

    path = write(tmp_path, 't,x,label\n0,1,a\n0,2,a\n', name='flat.csv')
    with pytest.raises(DataError, match='sample rate'):
        load_csv(path, desc)


def test_missing_values_filled(tmp_path):
    path = write(tmp_path, 'x,y,label\n1,10,walk\n,20,sit\n3,NaN,walk\n5,40,sit\n')
    seq = load_csv(path, DESC)
    np.testing.assert_allclose(seq.samples[:, 0], [1, 3, 3, 5])
    np.testing.assert_allclose(seq.samples[:, 1], [10, 20, 70 / 3, 40], rtol=1e-6)

    # only the leading half contributes to the fill mean
    seq = load_csv(path, DESC, fill_fraction=0.5)
    np.testing.assert_allclose(seq.samples[:, 0], [1, 1, 3, 5])
    np.testing.assert_allclose(seq.samples[2, 1], 15)


def test_blank_lines_are_skipped(tmp_path):
    path = write(tmp_path, 'x,y,label\n1,2,walk\n\n3,4,sit\n')
    assert load_csv(path, DESC).length == 2


@pytest.mark.parametrize('text, line, fragment', [
    ('x,y,label\n1,2,walk\n1,abc,sit\n', 3, 'non-numeric'),
    ('x,y,label\n1,2,walk\n1,2,walk\n3,4,run\n', 4, 'unknown label'),
    ('x,y,label\n1,2,walk\n\n3,4,jump\n', 4, 'unknown label'),
    ('x,y,label\n1,2,walk\n1,2,walk\n1,2,walk,4,5\n', 4, 'malformed'),
    ('x,y,label\n1,2,walk\n1,2\n3,4,walk\n', 3, 'no value for column label'),
    ('x,y,label\n1,2,walk\n1\n', 3, 'no value for column y, label'),
])
def test_bad_rows(tmp_path, text, line, fragment):
    path = write(tmp_path, text)
    with pytest.raises(DataError) as err:
        load_csv(path, DESC)
    assert err.value.line == line
    assert fragment in str(err.value)
    assert err.value.reason() == {'type': 'data', 'path': str(path), 'line': line}


@pytest.mark.parametrize('text, fragment', [
    ('', 'empty'),
    ('x,y,label\n', 'no data'),
    ('x,z,label\n1,2,walk\n', "column 'y'"),
    ('x,y,label\n,1,walk\n,2,sit\n', 'fill mean'),
])
def test_bad_files(tmp_path, text, fragment):
    with pytest.raises(DataError, match=fragment):
        load_csv(write(tmp_path, text), DESC)


def test_file_not_found(tmp_path):
    with pytest.raises(DataError, match='not found'):
        load_csv(tmp_path / 'nope.csv', DESC)


def test_write_and_reload(tmp_path):
    seq = labelled([0, 0, 1, 2, 2, 1], channels=3, rate=25.0)
    path = tmp_path / 'out.csv'
    desc = write_csv(seq, path)

    assert (tmp_path / 'out.desc').is_file()
    back = load_csv(path, FormatDescriptor.from_file(tmp_path / 'out.desc'))
    np.testing.assert_allclose(back.samples, seq.samples)
    np.testing.assert_array_equal(back.labels, seq.labels)
    assert back.sample_rate_hz == 25.0
    assert desc.label_vocab == list(seq.class_names)

    first = path.read_bytes()
    write_csv(seq, path)
    assert path.read_bytes() == first


@pytest.mark.parametrize('kwargs, fragment', [
    (dict(samples=np.zeros(3), labels=np.zeros(3)), 'L x M'),
    (dict(samples=np.zeros((3, 1)), labels=np.zeros(2)), 'labels for'),
    (dict(samples=np.zeros((3, 2)), labels=np.zeros(3)), 'channel names'),
    (dict(samples=np.zeros((3, 1)), labels=np.zeros(3), sample_rate_hz=0.0), 'sample rate'),
    (dict(samples=np.zeros((3, 1)), labels=np.array([0, 1, 2])), 'outside'),
])
def test_sequence_checks(kwargs, fragment):
    values = dict(sample_rate_hz=10.0, channel_names=('x',), class_names=('a', 'b'))
    values.update(kwargs)
    with pytest.raises(DataError, match=fragment):
        SensorSequence(**values)


def test_normalize():
    seq = labelled([0] * 50 + [1] * 50, channels=3)
    normalized, stats = normalize_channels(seq)

    assert isinstance(normalized, SensorSequence)
    np.testing.assert_allclose(normalized.samples.mean(axis=0), 0.0, atol=1e-5)
    np.testing.assert_allclose(normalized.samples.std(axis=0), 1.0, atol=1e-4)
    np.testing.assert_allclose(stats.denormalize(normalized.samples), seq.samples, rtol=1e-4, atol=1e-3)


def test_normalize_batched_and_constant():
    windows = np.stack([np.ones((8, 2)), np.arange(16.0).reshape(8, 2)])
    normalized, stats = normalize_channels(windows)
    assert stats.mean.shape == (2, 2)
    # a constant channel maps to zeros, not NaN
    np.testing.assert_array_equal(normalized[0], 0.0)
    assert NORM_EPS > 0

    with pytest.raises(DataError):
        normalize_channels(np.zeros((0, 2)))


def test_split():
    seq = labelled(np.arange(100) % 3)
    train, val, test = sequential_split(seq, SplitSpec(0.7, 0.1, 0.2))
    assert (train.length, val.length, test.length) == (70, 10, 20)
    np.testing.assert_array_equal(val.labels, seq.labels[70:80])

    with pytest.raises(DataError, match='val split'):
        sequential_split(seq, SplitSpec(0.7, 0.1, 0.2), min_length=16)


@pytest.mark.parametrize('fractions', [(0.5, 0.2, 0.2), (0.8, 0.0, 0.2), (1.2, -0.1, -0.1)])
def test_bad_split(fractions):
    with pytest.raises(ConfigError):
        SplitSpec(*fractions)


def test_concat_windows():
    seq = labelled(np.zeros(20, dtype=int))
    assert concat_windows([seq.slice(0, 5), seq.slice(5, 10)]).shape == (2, 5, 2)
    with pytest.raises(DataError):
        concat_windows([seq.slice(0, 5), seq.slice(5, 12)])
