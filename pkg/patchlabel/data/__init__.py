"""
Sensor data: ingestion, normalization, splitting, patching, synthetic streams
"""
from .descriptor import FormatDescriptor  # noqa
from .patching import PatchBatch, derive_patch_labels, make_patches  # noqa
from .sequence import NormStats, SensorSequence, SplitSpec, load_csv, normalize_channels, sequential_split, write_csv  # noqa
from .synthetic import generate_synthetic  # noqa
from .unimib import load_unimib  # noqa
