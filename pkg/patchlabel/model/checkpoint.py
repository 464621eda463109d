"""
Checkpoint files
----------------

Layout (all integers little-endian)::

    magic      4 bytes   b'P2LH'
    version    u16
    config     u32 length + UTF-8 JSON of the ModelConfig (sorted keys)
    arrays     for every array in canonical order:
                 u8 ndim, ndim x u32 extents, float32 little-endian data
    crc        u32       CRC32 of everything before it

Saving a loaded checkpoint reproduces the file byte for byte.
"""
import json
import logging
import zlib
from pathlib import Path
from struct import calcsize, pack, unpack_from
from typing import Optional, Union

import numpy as np

from patchlabel.errors import CheckpointError, ConfigError
from .config import ModelConfig
from .params import ModelParams, buffer_names, parameter_shapes

MAGIC = b'P2LH'
VERSION = 1

_logger = logging.getLogger('patchlabel.model')


def encode_checkpoint(params: ModelParams) -> bytes:
    """
    Serialize parameters and their config.
    """
    config = json.dumps(params.config.to_dict(), sort_keys=True, separators=(',', ':')).encode('utf-8')
    chunks = [pack('<4sHI', MAGIC, VERSION, len(config)), config]

    for array in params.arrays().values():
        chunks.append(pack(f'<B{array.ndim}I', array.ndim, *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype='<f4').tobytes())

    body = b''.join(chunks)
    return body + pack('<I', zlib.crc32(body) & 0xFFFFFFFF)


def decode_checkpoint(data: bytes) -> ModelParams:
    """
    Parse checkpoint bytes.
    :raises CheckpointError: bad magic, version, checksum or layout
    """
    header = calcsize('<4sHI')
    if len(data) < header + 4:
        raise CheckpointError('checkpoint is truncated')

    magic, version, config_len = unpack_from('<4sHI', data)
    if magic != MAGIC:
        raise CheckpointError(f'not a checkpoint (magic {magic!r})')
    if version != VERSION:
        raise CheckpointError(f'unsupported checkpoint version {version} (expected {VERSION})')

    body, (crc,) = data[:-4], unpack_from('<I', data, len(data) - 4)
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError('checkpoint checksum mismatch')

    offset = header + config_len
    try:
        config = ModelConfig.from_dict(json.loads(body[header:offset].decode('utf-8')))
    except (ValueError, ConfigError) as ex:
        raise CheckpointError(f'invalid model config in checkpoint: {ex}') from ex

    names = [name for name, _ in parameter_shapes(config)]
    for name in buffer_names(config):
        names += [f'{name}.running_mean', f'{name}.running_var']

    arrays = {}
    for name in names:
        if offset + 1 > len(body):
            raise CheckpointError(f'checkpoint ends before `{name}`')
        ndim, = unpack_from('<B', body, offset)
        offset += 1
        shape = unpack_from(f'<{ndim}I', body, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) * 4
        if offset + size > len(body):
            raise CheckpointError(f'checkpoint ends inside `{name}`')
        arrays[name] = np.frombuffer(body, dtype='<f4', count=size // 4, offset=offset).reshape(shape).astype(np.float32)
        offset += size

    if offset != len(body):
        raise CheckpointError(f'{len(body) - offset} trailing bytes in checkpoint')
    return ModelParams.from_arrays(config, arrays)


def save_checkpoint(params: ModelParams, path: Union[str, Path], logger: Optional[logging.Logger] = None):
    """Write a checkpoint file"""
    path = Path(path)
    try:
        path.write_bytes(encode_checkpoint(params))
    except OSError as ex:
        raise CheckpointError(f'cannot write checkpoint: {ex}', path=path) from ex
    (logger or _logger).info('checkpoint written to %s', path)


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    """Read a checkpoint file"""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as ex:
        raise CheckpointError(f'cannot read checkpoint: {ex}', path=path) from ex
    try:
        return decode_checkpoint(data)
    except CheckpointError as ex:
        ex.path = path
        raise
