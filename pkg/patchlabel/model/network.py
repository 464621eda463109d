"""
Channel-independent patch Transformer
-------------------------------------

Rows of the patch tensor are single channels of single windows
(``row = b*M + m``); shared weights process every row, and nothing but the
heads ever mixes rows. Shapes below use R = B*M rows.

    embed      (R, N, P) -> (R, N, D)    x W_p^T + W_pos^T
    encode     (R, N, D) -> (R, N, D)    n_layers x {self-attention, residual,
                                         batchnorm, FFN, residual, batchnorm}
    decode     (R, N, D) -> (R, N, D)    cross-attention: queries from the
                                         encoder, keys/values from raw patches,
                                         logits divided by tau_dec
    classify   (R, N, D) -> (B, N, C)    channels concatenated per patch
    forecast   (R, N, D) -> (B, T_p, C)  from the last (fill) patch
    signal     (R, N, D) -> (B, M, T_p*P)
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from patchlabel.data.patching import PatchBatch
from patchlabel.data.sequence import NORM_EPS, NormStats
from patchlabel.errors import DataError, DimensionError, ModeError, NumericalError
from patchlabel.numerics import tensor as T
from patchlabel.numerics.tensor import Tensor
from .config import SIGNAL_FORECAST, ModelConfig
from .params import ModelParams

_logger = logging.getLogger('patchlabel.model')


@dataclass
class ForwardResult:
    """Everything one forward pass produces"""
    z: Tensor
    z_dec: Tensor
    logits: Tensor
    probs: Tensor
    labels: np.ndarray
    future_logits: Optional[Tensor] = None
    future_probs: Optional[Tensor] = None
    signal: Optional[Tensor] = None
    attention: List[np.ndarray] = field(default_factory=list)

    @property
    def future_labels(self) -> Optional[np.ndarray]:
        """Argmax of the forecast distribution, ties to the lowest id"""
        if self.future_probs is None:
            return None
        return self.future_probs.data.argmax(axis=-1)


class PatchLabelModel:
    """
    Forward computation over a `ModelParams` set.

    The model starts in evaluation mode. `train_mode` enables dropout (masks
    drawn from the given generator) and batch statistics in batchnorm.
    """

    def __init__(self, params: ModelParams, logger: Optional[logging.Logger] = None):
        self.params = params
        self.logger = logger or _logger
        self.training = False
        self.gen: Optional[np.random.Generator] = None

    @property
    def config(self) -> ModelConfig:
        """Model hyperparameters"""
        return self.params.config

    @property
    def dtype(self):
        """Float dtype of the parameters"""
        return self.params['embed.W_p'].dtype

    def train_mode(self, gen: Optional[np.random.Generator]):
        """Dropout on, batch statistics"""
        self.training, self.gen = True, gen

    def eval_mode(self):
        """Dropout off, running statistics"""
        self.training, self.gen = False, None

    def _dropout(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.config.dropout, self.gen, self.training)

    def _as_tensor(self, x) -> Tensor:
        return x if isinstance(x, Tensor) else Tensor(x, dtype=self.dtype)

    def embed(self, patches) -> Tensor:
        """
        Linear patch embedding plus learnable positional encoding.
        :param patches: (R, N, P)
        """
        x = self._as_tensor(patches)
        cfg = self.config
        if x.ndim != 3 or x.shape[1:] != (cfg.N, cfg.P):
            raise DimensionError(f'patches must be (rows, N={cfg.N}, P={cfg.P})', [x.shape], where='embed')
        p = self.params
        return T.add(T.matmul(x, T.swap_last(p['embed.W_p'])), T.swap_last(p['embed.W_pos']))

    def _attention_block(self, layer: int, x: Tensor, attention: Optional[list]) -> Tensor:
        cfg, p = self.config, self.params
        pre = f'encoder.{layer}'
        rows, n, d = x.shape

        heads_in = T.reshape(x, (rows, 1, n, d))
        q = T.matmul(heads_in, p[f'{pre}.W_q'])
        k = T.matmul(heads_in, p[f'{pre}.W_k'])
        v = T.matmul(heads_in, p[f'{pre}.W_v'])

        scores = T.scale(T.matmul(q, T.swap_last(k)), 1.0 / math.sqrt(cfg.d_k))
        weights = T.softmax(scores, axis=-1)
        if attention is not None:
            attention.append(weights.data.copy())

        heads = T.matmul(self._dropout(weights), v)
        heads = T.reshape(T.transpose(heads, (0, 2, 1, 3)), (rows, n, cfg.H * d))
        return T.linear(heads, p[f'{pre}.W_o'], p[f'{pre}.b_o'])

    def _encoder_layer(self, layer: int, x: Tensor, attention: Optional[list]) -> Tensor:
        p, buffers = self.params, self.params.buffers
        pre = f'encoder.{layer}'

        x = T.add(x, self._attention_block(layer, x, attention))
        x = T.batchnorm(x, p[f'{pre}.bn1.gamma'], p[f'{pre}.bn1.beta'],
                        stats=buffers[f'{pre}.bn1'], training=self.training, axis=-1)

        ffn = T.linear(T.gelu(T.linear(x, p[f'{pre}.W_1'], p[f'{pre}.b_1'])), p[f'{pre}.W_2'], p[f'{pre}.b_2'])
        x = T.add(x, self._dropout(ffn))
        return T.batchnorm(x, p[f'{pre}.bn2.gamma'], p[f'{pre}.bn2.beta'],
                           stats=buffers[f'{pre}.bn2'], training=self.training, axis=-1)

    def encode(self, embedded: Tensor, attention: Optional[list] = None) -> Tensor:
        """
        Encoder stack; attention is over the N axis of each row only.
        :param attention: if given, receives one (R, H, N, N) weight array per layer
        """
        T.check_finite(embedded, 'encoder input')
        x = embedded
        for layer in range(self.config.n_layers):
            try:
                x = self._encoder_layer(layer, x, attention)
            except DimensionError:
                raise
            except NumericalError as ex:
                raise NumericalError(f'encoder layer {layer}: {ex}', where=ex.where, layer=f'encoder.{layer}') from ex
        return x

    def decode(self, z: Tensor, patches, attention: Optional[list] = None) -> Tensor:
        """
        Temperature cross-attention from encoder output to projected raw patches.
        """
        cfg, p = self.config, self.params
        raw = self._as_tensor(patches)
        if raw.shape[:2] != z.shape[:2]:
            raise DimensionError('decoder inputs disagree on rows/patches', [z.shape, raw.shape], where='decode')

        try:
            q = T.matmul(z, p['decoder.W_q'])
            k = T.matmul(raw, p['decoder.W_k'])
            v = T.matmul(raw, p['decoder.W_v'])
            weights = T.softmax(T.scale(T.matmul(q, T.swap_last(k)), 1.0 / cfg.tau_dec), axis=-1)
            if attention is not None:
                attention.append(weights.data.copy())
            return T.matmul(self._dropout(weights), v)
        except DimensionError:
            raise
        except NumericalError as ex:
            raise NumericalError(f'decoder: {ex}', where=ex.where, layer='decoder') from ex

    def _per_window(self, x: Tensor) -> Tuple[Tensor, int]:
        """(R, N, D) -> (B, N, M*D)"""
        rows, n, d = x.shape
        m = self.config.M
        if rows % m:
            raise DimensionError(f'{rows} rows are not whole windows of M={m} channels', [x.shape], where='heads')
        batch = rows // m
        fused = T.transpose(T.reshape(x, (batch, m, n, d)), (0, 2, 1, 3))
        return T.reshape(fused, (batch, n, m * d)), batch

    def classify(self, z_dec: Tensor) -> Tuple[Tensor, np.ndarray]:
        """
        Per-patch class logits (B, N, C) and argmax labels (B, N), ties to the
        lowest class id.
        """
        fused, _ = self._per_window(z_dec)
        logits = T.linear(fused, self.params['classifier.W'], self.params['classifier.b'])
        return logits, logits.data.argmax(axis=-1)

    def forecast_labels(self, z_dec: Tensor) -> Tensor:
        """
        Logits (B, T_p, C) of the future patches, from the fill patch.
        """
        cfg = self.config
        if cfg.T_p < 1:
            raise ModeError('label forecasting needs a horizon T_p >= 1')
        fused, batch = self._per_window(z_dec)
        last = T.reshape(T.slice_axis(fused, 1, cfg.N - 1, cfg.N), (batch, cfg.M * cfg.D))
        logits = T.linear(last, self.params['forecast.W'], self.params['forecast.b'])
        return T.reshape(logits, (batch, cfg.T_p, cfg.C))

    def forecast_signal_normalized(self, z: Tensor) -> Tensor:
        """
        Future samples (B, M, T_p*P) in the normalized space of each window.
        """
        cfg = self.config
        if cfg.mode != SIGNAL_FORECAST:
            raise ModeError(f'signal forecasting needs a {SIGNAL_FORECAST} model, this one is {cfg.mode}')
        rows = z.shape[0]
        last = T.reshape(T.slice_axis(z, 1, cfg.N - 1, cfg.N), (rows, cfg.D))
        out = T.linear(last, self.params['signal.W'], self.params['signal.b'])
        return T.reshape(out, (rows // cfg.M, cfg.M, cfg.T_p * cfg.P))

    def forecast_signal(self, z: Tensor, norm_stats: Optional[NormStats]) -> np.ndarray:
        """
        Future samples (B, M, T_p*P) in the original units of each window.
        """
        normalized = self.forecast_signal_normalized(z).data
        if norm_stats is None:
            raise DataError('signal forecasts need the normalization statistics of their windows')
        return normalized * (norm_stats.std[..., None] + NORM_EPS) + norm_stats.mean[..., None]

    def forward(self, batch: PatchBatch, attention: Optional[list] = None) -> ForwardResult:
        """
        Full pass over a patch batch: every head the config defines.
        """
        cfg = self.config
        if (batch.M, batch.N, batch.P) != (cfg.M, cfg.N, cfg.P):
            raise DimensionError(
                f'batch (M={batch.M}, N={batch.N}, P={batch.P}) does not fit the model '
                f'(M={cfg.M}, N={cfg.N}, P={cfg.P})', [batch.patches.shape], where='forward')

        patches = self._as_tensor(batch.patches)
        z = self.encode(self.embed(patches), attention)
        z_dec = self.decode(z, patches, attention)
        logits, labels = self.classify(z_dec)
        result = ForwardResult(z=z, z_dec=z_dec, logits=logits, probs=T.softmax(logits, axis=-1), labels=labels)
        if attention is not None:
            result.attention = attention

        if cfg.T_p >= 1:
            result.future_logits = self.forecast_labels(z_dec)
            result.future_probs = T.softmax(result.future_logits, axis=-1)
        if cfg.mode == SIGNAL_FORECAST:
            result.signal = self.forecast_signal_normalized(z)
        return result

    def predict(self, batch: PatchBatch) -> ForwardResult:
        """Evaluation-mode forward, restoring the previous mode"""
        training, gen = self.training, self.gen
        self.eval_mode()
        try:
            return self.forward(batch)
        finally:
            self.training, self.gen = training, gen
