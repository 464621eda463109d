import pytest

from patchlabel.data.sequence import SplitSpec, sequential_split
from patchlabel.data.synthetic import generate_synthetic


@pytest.fixture(scope='session')
def synthetic():
    """4 classes, 3 channels, 60 segments"""
    return generate_synthetic(4, 3, n_segments=60, seed=7)


@pytest.fixture(scope='session')
def splits(synthetic):
    """Train/val/test parts of the synthetic stream"""
    return sequential_split(synthetic, SplitSpec(0.7, 0.1, 0.2), min_length=24)
