"""
Model hyperparameters
"""
from dataclasses import asdict, dataclass, field, fields
from typing import Tuple

from patchlabel.errors import ConfigError

LABEL_FORECAST = 'label-forecast'
SIGNAL_FORECAST = 'signal-forecast'
MODES = (LABEL_FORECAST, SIGNAL_FORECAST)


@dataclass
class ModelConfig:
    """
    Shapes and hyperparameters of a patch-to-label model.

    N counts the fill patch; T_p is the number of forecast patches
    (0 disables forecasting). `class_names` fixes the label vocabulary
    the model was trained on.
    """
    C: int
    M: int
    N: int
    P: int = 10
    S: int = 10
    D: int = 128
    H: int = 8
    n_layers: int = 3
    ffn_dim: int = 256
    T_p: int = 8
    tau_dec: float = 1.0
    dropout: float = 0.1
    mode: str = LABEL_FORECAST
    class_names: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.class_names = tuple(self.class_names)

        for name in ('C', 'M', 'N', 'P', 'S', 'D', 'H', 'n_layers', 'ffn_dim'):
            if getattr(self, name) < 1:
                raise ConfigError(f'model `{name}` must be >= 1, got {getattr(self, name)}')
        if self.N < 2:
            raise ConfigError(f'model needs at least one real patch and the fill patch, got N={self.N}')
        if self.T_p < 0:
            raise ConfigError(f'forecast horizon must be >= 0, got {self.T_p}')
        if self.D % self.H:
            raise ConfigError(f'latent dim D={self.D} is not divisible by H={self.H} heads')
        if self.tau_dec <= 0:
            raise ConfigError(f'decoder temperature must be positive, got {self.tau_dec}')
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f'dropout must be in [0, 1), got {self.dropout}')
        if self.mode not in MODES:
            raise ConfigError(f'unknown mode `{self.mode}` (expected one of {", ".join(MODES)})')
        if self.mode == SIGNAL_FORECAST and self.T_p < 1:
            raise ConfigError('signal-forecast mode needs a horizon T_p >= 1')
        if self.class_names and len(self.class_names) != self.C:
            raise ConfigError(f'{len(self.class_names)} class names for C={self.C} classes')

    @property
    def d_k(self) -> int:
        """Per-head key dimension"""
        return self.D // self.H

    @property
    def window_length(self) -> int:
        """L that produces N patches of P samples at stride S"""
        return (self.N - 2) * self.S + self.P

    def to_dict(self) -> dict:
        """JSON-ready representation"""
        data = asdict(self)
        data['class_names'] = list(self.class_names)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'ModelConfig':
        """Inverse of `to_dict`; unknown keys are an error"""
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f'unknown model config keys: {", ".join(sorted(unknown))}')
        try:
            return cls(**data)
        except TypeError as ex:
            raise ConfigError(f'invalid model config: {ex}') from ex
