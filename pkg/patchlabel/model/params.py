"""
Learnable parameters
--------------------

Canonical order (also the checkpoint order)::

    embed.W_p          D x P
    embed.W_pos        D x N
    for each encoder layer l:
      encoder.l.W_q    H x D x d_k
      encoder.l.W_k    H x D x d_k
      encoder.l.W_v    H x D x D
      encoder.l.W_o    (H*D) x D
      encoder.l.b_o    D
      encoder.l.bn1.gamma, encoder.l.bn1.beta    D
      encoder.l.W_1    D x ffn_dim
      encoder.l.b_1    ffn_dim
      encoder.l.W_2    ffn_dim x D
      encoder.l.b_2    D
      encoder.l.bn2.gamma, encoder.l.bn2.beta    D
    decoder.W_q        D x D
    decoder.W_k        P x D
    decoder.W_v        P x D
    classifier.W       (M*D) x C
    classifier.b       C
    forecast.W         (M*D) x (T_p*C)      only when T_p >= 1
    forecast.b         T_p*C
    signal.W           D x (T_p*P)          only in signal-forecast mode
    signal.b           T_p*P

followed by the batchnorm running statistics (not learnable)::

    encoder.l.bn1.running_mean, encoder.l.bn1.running_var,
    encoder.l.bn2.running_mean, encoder.l.bn2.running_var

Linear weights other than W_p/W_pos are stored (in, out).
"""
import copy
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from patchlabel.errors import CheckpointError
from patchlabel.numerics.tensor import RunningStats, Tensor
from .config import SIGNAL_FORECAST, ModelConfig

POS_STD = 0.02


def parameter_shapes(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """(name, shape) of every learnable array, in canonical order"""
    D, H, dk, P, N, M, C = config.D, config.H, config.d_k, config.P, config.N, config.M, config.C
    shapes: List[Tuple[str, Tuple[int, ...]]] = [('embed.W_p', (D, P)), ('embed.W_pos', (D, N))]
    for layer in range(config.n_layers):
        prefix = f'encoder.{layer}'
        shapes += [
            (f'{prefix}.W_q', (H, D, dk)),
            (f'{prefix}.W_k', (H, D, dk)),
            (f'{prefix}.W_v', (H, D, D)),
            (f'{prefix}.W_o', (H * D, D)),
            (f'{prefix}.b_o', (D,)),
            (f'{prefix}.bn1.gamma', (D,)),
            (f'{prefix}.bn1.beta', (D,)),
            (f'{prefix}.W_1', (D, config.ffn_dim)),
            (f'{prefix}.b_1', (config.ffn_dim,)),
            (f'{prefix}.W_2', (config.ffn_dim, D)),
            (f'{prefix}.b_2', (D,)),
            (f'{prefix}.bn2.gamma', (D,)),
            (f'{prefix}.bn2.beta', (D,)),
        ]
    shapes += [
        ('decoder.W_q', (D, D)),
        ('decoder.W_k', (P, D)),
        ('decoder.W_v', (P, D)),
        ('classifier.W', (M * D, C)),
        ('classifier.b', (C,)),
    ]
    if config.T_p >= 1:
        shapes += [('forecast.W', (M * D, config.T_p * C)), ('forecast.b', (config.T_p * C,))]
    if config.mode == SIGNAL_FORECAST:
        shapes += [('signal.W', (D, config.T_p * P)), ('signal.b', (config.T_p * P,))]
    return shapes


def buffer_names(config: ModelConfig) -> List[str]:
    """Batchnorm statistics keys, in canonical order"""
    return [f'encoder.{layer}.{bn}' for layer in range(config.n_layers) for bn in ('bn1', 'bn2')]


def _fan_in(name: str, shape: Tuple[int, ...]) -> int:
    if name == 'embed.W_p':
        return shape[1]
    return shape[-2]


def _init_array(name: str, shape: Tuple[int, ...], gen: np.random.Generator) -> np.ndarray:
    leaf = name.rsplit('.', 1)[-1]
    if name.startswith('signal.') or leaf in ('b', 'beta') or leaf.startswith('b_'):
        return np.zeros(shape)
    if leaf == 'gamma':
        return np.ones(shape)
    if name == 'embed.W_pos':
        return gen.normal(0.0, POS_STD, shape)
    bound = 1.0 / np.sqrt(_fan_in(name, shape))
    return gen.uniform(-bound, bound, shape)


class ModelParams:
    """
    Named parameter tensors in canonical order plus batchnorm statistics.
    """

    def __init__(self, config: ModelConfig, tensors: 'OrderedDict[str, Tensor]', buffers: Dict[str, RunningStats]):
        self.config = config
        self.tensors = tensors
        self.buffers = buffers
        self.check()

    @classmethod
    def init(cls, config: ModelConfig, gen: np.random.Generator, dtype=np.float32) -> 'ModelParams':
        """
        Fresh parameters: linear weights uniform in +-1/sqrt(fan_in), biases
        zero, positional encodings normal(0, 0.02), batchnorm affine (1, 0),
        signal head zero.
        """
        tensors = OrderedDict(
            (name, Tensor(_init_array(name, shape, gen), requires_grad=True, name=name, dtype=dtype))
            for name, shape in parameter_shapes(config)
        )
        buffers = {name: RunningStats.create(config.D, dtype=dtype) for name in buffer_names(config)}
        return cls(config, tensors, buffers)

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: Dict[str, np.ndarray], dtype=np.float32) -> 'ModelParams':
        """
        Rebuild from flat arrays keyed like `arrays()`.
        """
        tensors = OrderedDict()
        for name, _ in parameter_shapes(config):
            if name not in arrays:
                raise CheckpointError(f'missing parameter `{name}`')
            tensors[name] = Tensor(arrays[name], requires_grad=True, name=name, dtype=dtype)
        buffers = {}
        for name in buffer_names(config):
            try:
                mean, var = arrays[f'{name}.running_mean'], arrays[f'{name}.running_var']
            except KeyError as ex:
                raise CheckpointError(f'missing batchnorm statistics `{name}`') from ex
            buffers[name] = RunningStats(np.array(mean, dtype=dtype), np.array(var, dtype=dtype))
        return cls(config, tensors, buffers)

    def check(self):
        """Names, order and shapes agree with the config"""
        expected = parameter_shapes(self.config)
        names = list(self.tensors)
        if names != [n for n, _ in expected]:
            raise CheckpointError(f'parameter names do not match the model config: {names}')
        for name, shape in expected:
            if self.tensors[name].shape != shape:
                raise CheckpointError(f'parameter `{name}` has shape {self.tensors[name].shape}, expected {shape}')
        if sorted(self.buffers) != sorted(buffer_names(self.config)):
            raise CheckpointError('batchnorm statistics do not match the model config')

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def names(self) -> List[str]:
        """Learnable parameter names, canonical order"""
        return list(self.tensors)

    def group(self, prefix: str) -> List[str]:
        """Names under a dotted prefix (`encoder.0`, `decoder`...)"""
        return [n for n in self.tensors if n == prefix or n.startswith(prefix + '.')]

    def arrays(self) -> 'OrderedDict[str, np.ndarray]':
        """Every array (parameters then statistics) in canonical order"""
        out = OrderedDict((name, t.data) for name, t in self.tensors.items())
        for name in buffer_names(self.config):
            out[f'{name}.running_mean'] = self.buffers[name].mean
            out[f'{name}.running_var'] = self.buffers[name].var
        return out

    def copy(self, dtype=None) -> 'ModelParams':
        """Deep copy, optionally cast (float64 for gradient checks)"""
        tensors = OrderedDict(
            (name, Tensor(t.data.copy(), requires_grad=True, name=name, dtype=dtype or t.dtype))
            for name, t in self.tensors.items()
        )
        buffers = {name: copy.deepcopy(stats) for name, stats in self.buffers.items()}
        if dtype is not None:
            for stats in buffers.values():
                stats.mean = stats.mean.astype(dtype)
                stats.var = stats.var.astype(dtype)
        return ModelParams(self.config, tensors, buffers)

    def load(self, other: 'ModelParams'):
        """Overwrite values in place from another set with the same layout"""
        for name, tensor in self.tensors.items():
            tensor.data[...] = other.tensors[name].data
        for name, stats in self.buffers.items():
            stats.mean[...] = other.buffers[name].mean
            stats.var[...] = other.buffers[name].var

    def count(self, prefix: Optional[str] = None) -> int:
        """Number of learnable scalars"""
        names = self.group(prefix) if prefix else self.names()
        return int(sum(self.tensors[n].size for n in names))

    def __repr__(self):
        return f'<ModelParams {len(self)} tensors, {self.count()} scalars>'
