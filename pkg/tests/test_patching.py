import numpy as np
import pytest

from patchlabel.data.patching import (
    FILL_LABEL, PatchBatch, derive_patch_labels, make_patches, patch_array, patch_count,
)
from patchlabel.errors import ConfigError, DataError
from patchlabel.numerics.rng import make_generator
from tests.helpers import labelled


@pytest.mark.parametrize('length, patch_len, stride, expected', [
    (16, 4, 4, 5),
    (10, 4, 3, 4),
    (10, 4, 4, 3),
    (200, 10, 10, 20),
    (5, 1, 1, 6),
    (7, 7, 3, 2),
])
def test_patch_count(length, patch_len, stride, expected):
    assert patch_count(length, patch_len, stride) == expected


def test_patch_layout():
    seq = labelled(np.zeros(10, dtype=int), channels=2)
    patches = patch_array(seq.samples[None], 4, 3)
    assert patches.shape == (2, 4, 4)
    assert patches.dtype == np.float32

    for m in range(2):
        column = seq.samples[:, m]
        for n in range(3):
            np.testing.assert_array_equal(patches[m, n], column[n * 3:n * 3 + 4])
        np.testing.assert_array_equal(patches[m, 3], np.full(4, column[-1]))


def test_batch_rows_are_window_major():
    windows = np.arange(2 * 8 * 3, dtype=np.float32).reshape(2, 8, 3)
    patches = patch_array(windows, 4, 4)
    assert patches.shape == (6, 3, 4)
    # row b*M + m is channel m of window b
    np.testing.assert_array_equal(patches[4, 0], windows[1, :4, 1])


@pytest.mark.parametrize('length, patch_len, stride', [(8, 0, 2), (8, 2, 0), (8, 9, 1)])
def test_bad_geometry(length, patch_len, stride):
    with pytest.raises(ConfigError):
        patch_array(np.zeros((1, length, 1)), patch_len, stride)


def test_patch_array_needs_batch():
    with pytest.raises(DataError):
        patch_array(np.zeros((8, 1)), 4, 4)


@pytest.mark.parametrize('labels, patch_len, stride, expected', [
    ([0, 0, 1, 1, 1, 2], 3, 3, [0, 1]),
    ([1, 1, 0, 0], 4, 4, [1]),
    ([2, 0, 0, 2], 4, 4, [2]),
    ([0, 1, 2, 0, 1, 2, 2], 3, 2, [0, 2, 2]),
    ([3, 3, 3, 3], 1, 1, [3, 3, 3, 3]),
    ([1, 0, 0, 0, 1], 5, 5, [0]),
])
def test_patch_labels(labels, patch_len, stride, expected):
    np.testing.assert_array_equal(derive_patch_labels(np.array(labels), patch_len, stride), expected)


def majority(labels):
    counts = {}
    for label in labels:
        counts[label] = counts.get(label, 0) + 1
    best = max(counts.values())
    return next(label for label in labels if counts[label] == best)


@pytest.mark.parametrize('seed', range(5))
def test_patch_labels_against_counting(seed):
    gen = make_generator(seed)
    labels = gen.integers(0, 4, size=57)
    patch_len, stride = int(gen.integers(1, 9)), int(gen.integers(1, 6))
    expected = [majority(list(labels[s:s + patch_len])) for s in range(0, 57 - patch_len + 1, stride)]
    np.testing.assert_array_equal(derive_patch_labels(labels, patch_len, stride), expected)


def test_make_patches():
    seqs = [labelled([0] * 8 + [1] * 8, channels=2), labelled([1] * 16, channels=2, n_classes=2)]
    batch = make_patches(seqs, 4)

    assert isinstance(batch, PatchBatch)
    assert (batch.B, batch.M, batch.L, batch.N, batch.P, batch.S) == (2, 2, 16, 5, 4, 4)
    assert batch.patches.shape == (4, 5, 4)
    np.testing.assert_array_equal(batch.patch_labels, [[0, 0, 1, 1, FILL_LABEL], [1, 1, 1, 1, FILL_LABEL]])
    np.testing.assert_array_equal(batch.real_labels, [[0, 0, 1, 1], [1, 1, 1, 1]])
    assert batch.norm_stats.mean.shape == (2, 2)
    assert batch.horizon == 0

    # every channel of every window is z-scored
    real = batch.patches[:, :4].reshape(4, -1)
    np.testing.assert_allclose(real.mean(axis=1), 0.0, atol=1e-5)


def test_make_patches_raw():
    seq = labelled([0] * 16)
    batch = make_patches(seq, 4, stride=2, normalize=False)
    assert batch.B == 1
    assert batch.N == 8
    assert batch.norm_stats is None
    np.testing.assert_array_equal(batch.channel_rows(0)[1, 1], seq.samples[2:6, 1])


def test_continuations():
    full = labelled([0] * 16 + [1] * 3 + [2] * 5)
    batch = make_patches(full.slice(0, 16), 4, future=[full.slice(16, 24)])

    np.testing.assert_array_equal(batch.future_labels, [[1, 2]])
    assert batch.horizon == 2
    assert batch.future_signal.shape == (1, 2, 8)

    stats = batch.norm_stats
    restored = batch.future_signal[0].T * (stats.std[0] + 1e-5) + stats.mean[0]
    np.testing.assert_allclose(restored, full.samples[16:24], rtol=1e-4)


@pytest.mark.parametrize('future, fragment', [
    ([], 'continuations for'),
    ([(16, 22)], 'whole number'),
])
def test_bad_continuations(future, fragment):
    full = labelled([0] * 24)
    with pytest.raises(DataError, match=fragment):
        make_patches(full.slice(0, 16), 4, future=[full.slice(*span) for span in future])


def test_select():
    seqs = [labelled([c] * 16, n_classes=3) for c in range(3)]
    batch = make_patches(seqs, 4, future=[labelled([c] * 8, n_classes=3) for c in range(3)])
    sub = batch.select([2, 0])

    assert sub.B == 2
    np.testing.assert_array_equal(sub.patches[:2], batch.patches[4:6])
    np.testing.assert_array_equal(sub.patch_labels[:, 0], [2, 0])
    np.testing.assert_array_equal(sub.future_labels[:, 0], [2, 0])
    np.testing.assert_array_equal(sub.norm_stats.mean, batch.norm_stats.mean[[2, 0]])


def test_empty_batch():
    with pytest.raises(DataError):
        make_patches([], 4)
    batch = make_patches(labelled([0] * 8), 4)
    batch.patch_labels = None
    with pytest.raises(DataError):
        _ = batch.real_labels
