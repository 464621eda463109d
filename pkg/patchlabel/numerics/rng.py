"""
Seeded random generation
------------------------

Every random draw in patchlabel (parameter init, window shuffling, dropout
masks, synthetic data) comes from numpy's PCG64 bit generator, seeded
explicitly. PCG64 is a 128-bit permuted congruential generator with fixed,
documented constants, so a seed fully determines the stream for a given
numpy release.

Generators are passed around explicitly; nothing uses the global numpy state.
"""
from typing import Any, Dict

import numpy as np


def make_generator(seed: int) -> np.random.Generator:
    """Create a PCG64-backed generator from a non-negative integer seed"""
    if seed < 0:
        raise ValueError(f'seed must be non-negative, got {seed}')
    return np.random.Generator(np.random.PCG64(seed))


def generator_state(gen: np.random.Generator) -> Dict[str, Any]:
    """
    Snapshot of the bit generator state, JSON-serializable.
    """
    state = gen.bit_generator.state
    return {
        'bit_generator': state['bit_generator'],
        'state': {k: int(v) for k, v in state['state'].items()},
        'has_uint32': int(state['has_uint32']),
        'uinteger': int(state['uinteger']),
    }


def restore_generator(state: Dict[str, Any]) -> np.random.Generator:
    """Rebuild a generator from a `generator_state` snapshot"""
    if state.get('bit_generator') != 'PCG64':
        raise ValueError(f'unsupported bit generator: {state.get("bit_generator")}')
    bit_gen = np.random.PCG64()
    bit_gen.state = state
    return np.random.Generator(bit_gen)
