"""
Resumable training state
------------------------

One ``.npz`` file: current and best parameters, Adam moments, and a JSON
``meta`` entry with the scalars (epoch, early-stopping counters, generator
state, Adam hyperparameters, history, model config). Restoring it and
continuing reproduces the uninterrupted run exactly.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from patchlabel.errors import CheckpointError, ConfigError
from patchlabel.model.config import ModelConfig
from patchlabel.model.params import ModelParams
from patchlabel.numerics.optim import AdamState
from patchlabel.numerics.rng import generator_state, restore_generator

_logger = logging.getLogger('patchlabel.train')

STATE_VERSION = 1


@dataclass
class TrainState:
    """
    Everything needed to continue training after `epoch` completed epochs.
    """
    params: ModelParams
    best_params: ModelParams
    adam: AdamState
    gen: np.random.Generator
    epoch: int = 0
    best_val_metric: float = float('-inf')
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    history: List[dict] = field(default_factory=list)

    def save(self, path: Union[str, Path], logger: Optional[logging.Logger] = None):
        """Write the state atomically (temporary file, then rename)"""
        path = Path(path)
        arrays = {}
        for prefix, params in (('param', self.params), ('best', self.best_params)):
            for name, array in params.arrays().items():
                arrays[f'{prefix}/{name}'] = array
        for name in self.adam.m:
            arrays[f'adam_m/{name}'] = self.adam.m[name]
            arrays[f'adam_v/{name}'] = self.adam.v[name]

        meta = {
            'version': STATE_VERSION,
            'config': self.params.config.to_dict(),
            'epoch': self.epoch,
            'best_val_metric': self.best_val_metric,
            'best_epoch': self.best_epoch,
            'epochs_since_improvement': self.epochs_since_improvement,
            'rng': generator_state(self.gen),
            'adam': self.adam.hyperparameters(),
            'history': self.history,
        }
        arrays['meta'] = np.array(json.dumps(meta, sort_keys=True))

        tmp = path.with_name(path.name + '.tmp')
        try:
            with tmp.open('wb') as f:
                np.savez(f, **arrays)
            tmp.replace(path)
        except OSError as ex:
            raise CheckpointError(f'cannot write training state: {ex}', path=path) from ex
        (logger or _logger).debug('training state after epoch %s written to %s', self.epoch, path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'TrainState':
        """Read a state written by `save`"""
        path = Path(path)
        try:
            with np.load(path, allow_pickle=False) as data:
                arrays = {key: data[key] for key in data.files}
        except (OSError, ValueError) as ex:
            raise CheckpointError(f'cannot read training state: {ex}', path=path) from ex

        try:
            meta = json.loads(str(arrays.pop('meta')))
        except (KeyError, ValueError) as ex:
            raise CheckpointError('training state has no readable metadata', path=path) from ex
        if meta.get('version') != STATE_VERSION:
            raise CheckpointError(f'unsupported training state version {meta.get("version")}', path=path)

        def group(prefix):
            return {key[len(prefix) + 1:]: value for key, value in arrays.items() if key.startswith(prefix + '/')}

        try:
            config = ModelConfig.from_dict(meta['config'])
            adam = AdamState(**meta['adam'])
            adam.m = {name: value.copy() for name, value in group('adam_m').items()}
            adam.v = {name: value.copy() for name, value in group('adam_v').items()}
            state = cls(
                params=ModelParams.from_arrays(config, group('param')),
                best_params=ModelParams.from_arrays(config, group('best')),
                adam=adam,
                gen=restore_generator(meta['rng']),
                epoch=meta['epoch'],
                best_val_metric=meta['best_val_metric'],
                best_epoch=meta['best_epoch'],
                epochs_since_improvement=meta['epochs_since_improvement'],
                history=meta['history'],
            )
        except CheckpointError as ex:
            ex.path = path
            raise
        except (ConfigError, KeyError, TypeError, ValueError) as ex:
            raise CheckpointError(f'inconsistent training state: {ex}', path=path) from ex
        return state
