"""
patchlabel errors
"""
from typing import Optional, Sequence


class PatchLabelError(Exception):
    """Base patchlabel error"""
    type = 'unknown'
    exit_code = 1

    def reason(self) -> dict:
        """
        Structured data for errors, including type,
        and potentially type-specific extra values.
        """
        return {
            'type': self.type
        }


class ConfigError(PatchLabelError):
    """
    Invalid configuration value (model, training, split or run config)
    """
    type = 'config'


class ModeError(PatchLabelError):
    """
    A checkpoint or command was used in a mode it does not support
    (e.g. a label-forecast checkpoint asked for a signal forecast).
    """
    type = 'mode'


class DataError(PatchLabelError):
    """
    Error on input data. If the line is known, it is part of the message.
    """
    type = 'data'
    exit_code = 2

    def __init__(self, msg, path=None, line: Optional[int] = None):
        self.path = path
        self.line = line
        super().__init__(msg)

    def __str__(self):
        msg = super().__str__()
        if self.line is not None:
            msg = f'line {self.line}: {msg}'
        if self.path is not None:
            msg = f'{self.path}: {msg}'
        return msg

    def reason(self):
        r = super().reason()
        if self.path is not None:
            r['path'] = str(self.path)
        if self.line is not None:
            r['line'] = self.line
        return r


class CheckpointError(DataError):
    """
    Checkpoint or training state file is unreadable, corrupted or inconsistent
    """
    type = 'checkpoint'


class NumericalError(PatchLabelError):
    """
    A non-finite value appeared, or a gradient check failed.
    `where` names the op or parameter at fault, `layer` the model layer
    (``encoder.<i>``, ``decoder``) it happened in.
    """
    type = 'numerical'
    exit_code = 3

    def __init__(self, msg, where: Optional[str] = None, epoch: Optional[int] = None, step: Optional[int] = None,
                 layer: Optional[str] = None):
        self.where = where
        self.epoch = epoch
        self.step = step
        self.layer = layer
        super().__init__(msg)

    def reason(self):
        r = super().reason()
        for key in ('where', 'layer', 'epoch', 'step'):
            value = getattr(self, key)
            if value is not None:
                r[key] = value
        return r


class DimensionError(NumericalError):
    """
    Shapes of operands do not agree
    """
    type = 'dimension'

    def __init__(self, msg, shapes: Sequence[Sequence[int]] = (), where: Optional[str] = None):
        self.shapes = [tuple(s) for s in shapes]
        if self.shapes:
            msg = f'{msg} (shapes: {", ".join(str(s) for s in self.shapes)})'
        super().__init__(msg, where=where)

    def reason(self):
        r = super().reason()
        r['shapes'] = [list(s) for s in self.shapes]
        return r
