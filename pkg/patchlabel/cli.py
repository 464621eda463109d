"""
Command line interface
----------------------

.. code-block:: bash

    patchlabel generate --classes 4 --channels 3 --out data/
    patchlabel train --data data/synthetic.csv --out run/
    patchlabel eval --data data/synthetic.csv --checkpoint run/best.ckpt --out run/eval
    patchlabel segment / forecast / ablate / gradcheck ...

Settings resolve as built-in defaults, then an optional JSON file
(``--config``), then explicit flags. Every command first writes the resolved
settings to ``<out>/resolved_config.json``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""
import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from patchlabel.__version__ import __version__
from patchlabel.data.descriptor import FormatDescriptor
from patchlabel.data.sequence import SensorSequence, SplitSpec, load_csv, sequential_split, write_csv
from patchlabel.data.unimib import load_unimib
from patchlabel.data.synthetic import DEFAULT_SUCCESSOR_PROB, generate_synthetic
from patchlabel.errors import ConfigError, DataError, ModeError, NumericalError, PatchLabelError
from patchlabel.metrics import MetricsReport, write_confusion_csv, write_json
from patchlabel.model.checkpoint import load_checkpoint, save_checkpoint
from patchlabel.model.config import LABEL_FORECAST, MODES, SIGNAL_FORECAST, ModelConfig
from patchlabel.model.gradcheck import DEFAULT_TOLERANCE, run_suite
from patchlabel.model.network import PatchLabelModel
from patchlabel.model.params import ModelParams
from patchlabel.pipeline.evaluate import evaluate, forecast, predict_stream
from patchlabel.pipeline.state import TrainState
from patchlabel.pipeline.train import TrainConfig, train
from patchlabel.pipeline.windows import WindowDataset
from patchlabel.numerics.rng import make_generator
from patchlabel.segmentation import extract_segments, write_segments

_logger = logging.getLogger('patchlabel.cli')

ABLATION_PATCH_SIZES = (1, 2, 5, 10, 20)
SPLIT_PARTS = ('train', 'val', 'test')


def check_window_geometry(window: int, patch_size: int, stride: int):
    """
    Patches must tile the window exactly, so that evaluation windows (which
    span the patches) have the length training windows were cut with.
    """
    if window < patch_size:
        raise ConfigError(f'window {window} is shorter than a patch of {patch_size}')
    if (window - patch_size) % stride:
        raise ConfigError(f'stride {stride} does not divide window {window} minus patch size {patch_size}')


@dataclass
class RunConfig:
    """
    Every setting a command may use, with desk-scale defaults.
    """
    data: Optional[str] = None
    descriptor: Optional[str] = None
    out: str = 'out'
    checkpoint: Optional[str] = None
    resume: Optional[str] = None
    seed: int = 0
    # synthetic data
    classes: int = 4
    channels: int = 3
    segments: int = 200
    successor_prob: float = DEFAULT_SUCCESSOR_PROB
    # model
    patch_size: int = 10
    stride: Optional[int] = None
    dim: int = 32
    heads: int = 4
    layers: int = 2
    ffn_dim: Optional[int] = None
    horizon: int = 8
    mode: str = LABEL_FORECAST
    dropout: float = 0.1
    tau_dec: float = 1.0
    # training
    window: int = 100
    window_stride: Optional[int] = 10
    batch: int = 32
    lr: float = 1e-3
    lr_decay: float = 0.5
    lr_step_epochs: int = 10
    epochs: int = 30
    patience: int = 10
    seg_loss: bool = True
    forecast_loss: bool = True
    class_balance: bool = False
    tau_smooth: float = 2.0
    # evaluation
    smooth_size: int = 9
    split: str = 'test'
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f'unknown mode `{self.mode}` (expected one of {", ".join(MODES)})')
        if self.split not in SPLIT_PARTS:
            raise ConfigError(f'unknown split `{self.split}` (expected one of {", ".join(SPLIT_PARTS)})')
        if self.patch_size < 1 or (self.stride is not None and self.stride < 1):
            raise ConfigError('patch size and stride must be >= 1')
        check_window_geometry(self.window, self.patch_size, self.stride or self.patch_size)

    @classmethod
    def from_dict(cls, data: dict) -> 'RunConfig':
        """Build from a mapping; unknown keys are an error"""
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f'unknown settings: {", ".join(sorted(unknown))}')
        try:
            return cls(**data)
        except TypeError as ex:
            raise ConfigError(f'invalid settings: {ex}') from ex

    @classmethod
    def resolve(cls, args: argparse.Namespace) -> 'RunConfig':
        """Defaults, then the JSON file, then flags given on the command line"""
        values = {}
        if getattr(args, 'config', None):
            path = Path(args.config)
            try:
                values = json.loads(path.read_text(encoding='utf-8'))
            except OSError as ex:
                raise ConfigError(f'cannot read config file {path}: {ex}') from ex
            except ValueError as ex:
                raise ConfigError(f'config file {path} is not valid JSON: {ex}') from ex
            if not isinstance(values, dict):
                raise ConfigError(f'config file {path} must hold a JSON object')
            values.pop('version', None)
            values.pop('command', None)
        names = {f.name for f in fields(cls)}
        values.update({key: value for key, value in vars(args).items() if key in names})
        return cls.from_dict(values)

    def to_dict(self) -> dict:
        """JSON-ready representation"""
        return asdict(self)

    def split_spec(self) -> SplitSpec:
        """Sequential split fractions"""
        return SplitSpec(self.train_fraction, self.val_fraction, self.test_fraction)

    def train_config(self) -> TrainConfig:
        """Optimization settings"""
        return TrainConfig(
            batch_size=self.batch, lr=self.lr, max_epochs=self.epochs, patience=self.patience,
            lr_decay=self.lr_decay, lr_step_epochs=self.lr_step_epochs, seed=self.seed,
            window=self.window, window_stride=self.window_stride, seg_loss=self.seg_loss,
            forecast_loss=self.forecast_loss, class_balance=self.class_balance,
            tau_smooth=self.tau_smooth, smooth_size=self.smooth_size,
        )

    def model_config(self, seq: SensorSequence, patch_size: Optional[int] = None,
                     stride: Optional[int] = None) -> ModelConfig:
        """Model shapes for windows of `seq`"""
        patch_size = patch_size or self.patch_size
        stride = stride or self.stride or patch_size
        check_window_geometry(self.window, patch_size, stride)
        return ModelConfig(
            C=seq.n_classes, M=seq.n_channels, N=(self.window - patch_size) // stride + 2,
            P=patch_size, S=stride, D=self.dim, H=self.heads, n_layers=self.layers,
            ffn_dim=self.ffn_dim or 2 * self.dim, T_p=self.horizon, tau_dec=self.tau_dec,
            dropout=self.dropout, mode=self.mode, class_names=seq.class_names,
        )


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f'{self.prog}: error: {message}\n')


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument('--config', help='JSON settings file; flags override it')
    common.add_argument('--out', help='output directory')
    common.add_argument('--seed', type=int)
    return common


def _data_flags() -> argparse.ArgumentParser:
    flags = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    flags.add_argument('--data', help='sensor CSV file, or a UniMiB SHAR acc_data.mat')
    flags.add_argument('--descriptor', help='format descriptor file or bundled name (wisdm, pamap2)')
    flags.add_argument('--window', type=int, help='window length L in samples')
    flags.add_argument('--split', choices=SPLIT_PARTS, help='split to evaluate')
    flags.add_argument('--train-fraction', type=float, dest='train_fraction')
    flags.add_argument('--val-fraction', type=float, dest='val_fraction')
    flags.add_argument('--test-fraction', type=float, dest='test_fraction')
    flags.add_argument('--batch', type=int, help='mini-batch size')
    return flags


def _model_flags() -> argparse.ArgumentParser:
    flags = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    flags.add_argument('--patch-size', type=int, dest='patch_size', help='patch length P')
    flags.add_argument('--stride', type=int, help='patch stride S (default P)')
    flags.add_argument('--dim', type=int, help='latent dimension D')
    flags.add_argument('--heads', type=int, help='attention heads H')
    flags.add_argument('--layers', type=int, help='encoder layers')
    flags.add_argument('--ffn-dim', type=int, dest='ffn_dim')
    flags.add_argument('--horizon', type=int, help='forecast patches T_p')
    flags.add_argument('--mode', choices=MODES)
    flags.add_argument('--dropout', type=float)
    flags.add_argument('--tau-dec', type=float, dest='tau_dec', help='decoder attention temperature')
    return flags


def _train_flags() -> argparse.ArgumentParser:
    flags = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    flags.add_argument('--window-stride', type=int, dest='window_stride', help='offset between training windows')
    flags.add_argument('--lr', type=float, help='initial learning rate')
    flags.add_argument('--lr-decay', type=float, dest='lr_decay')
    flags.add_argument('--lr-step-epochs', type=int, dest='lr_step_epochs')
    flags.add_argument('--epochs', type=int, help='maximum epochs')
    flags.add_argument('--patience', type=int, help='epochs without validation improvement before stopping')
    flags.add_argument('--no-seg-loss', action='store_false', dest='seg_loss')
    flags.add_argument('--no-forecast-loss', action='store_false', dest='forecast_loss')
    flags.add_argument('--class-balance', action='store_true', dest='class_balance')
    flags.add_argument('--tau-smooth', type=float, dest='tau_smooth', help='smoothing loss threshold')
    return flags


def build_parser() -> argparse.ArgumentParser:
    """Top-level parser with one subcommand per operation"""
    parser = _Parser(prog='patchlabel', description='Patch-to-label activity recognition')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    common, data, model, training = _common_flags(), _data_flags(), _model_flags(), _train_flags()
    smooth = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    smooth.add_argument('--smooth-size', type=int, dest='smooth_size', help='odd smoothing window, in patches')
    ckpt = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    ckpt.add_argument('--checkpoint', help='model checkpoint')

    gen = sub.add_parser('generate', parents=[common], help='write a synthetic dataset')
    gen.add_argument('--classes', type=int, default=argparse.SUPPRESS)
    gen.add_argument('--channels', type=int, default=argparse.SUPPRESS)
    gen.add_argument('--segments', type=int, default=argparse.SUPPRESS)
    gen.add_argument('--successor-prob', type=float, dest='successor_prob', default=argparse.SUPPRESS,
                     help='probability that class c is followed by class c+1')

    trn = sub.add_parser('train', parents=[common, data, model, training, smooth], help='train a model')
    trn.add_argument('--resume', default=argparse.SUPPRESS, help='training state to continue from')

    sub.add_parser('eval', parents=[common, data, ckpt, smooth], help='evaluate a checkpoint')
    sub.add_parser('segment', parents=[common, data, ckpt, smooth], help='write activity segments')
    fc = sub.add_parser('forecast', parents=[common, data, ckpt], help='forecast future patches')
    fc.add_argument('--mode', choices=MODES, default=argparse.SUPPRESS)
    fc.add_argument('--horizon', type=int, default=argparse.SUPPRESS)
    sub.add_parser('ablate', parents=[common, data, model, training, smooth], help='patch size ablation')

    grad = sub.add_parser('gradcheck', parents=[common], help='finite-difference gradient checks')
    grad.add_argument('--tolerance', type=float, default=DEFAULT_TOLERANCE)
    return parser


# helpers ------------------------------------------------------------------

def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as ex:
        raise DataError(f'cannot create output directory: {ex}', path=out) from ex
    return out


def _write_resolved(config: RunConfig, command: str, out: Path):
    write_json({'version': __version__, 'command': command, **config.to_dict()}, out / 'resolved_config.json', _logger)


def _descriptor(config: RunConfig) -> FormatDescriptor:
    if config.descriptor:
        return FormatDescriptor.resolve(config.descriptor)
    guess = Path(config.data).with_suffix('.desc')
    if not guess.is_file():
        raise ConfigError(f'no --descriptor given and no {guess.name} next to the data file')
    return FormatDescriptor.from_file(guess)


def _load(config: RunConfig) -> SensorSequence:
    if not config.data:
        raise ConfigError('--data is required')
    if Path(config.data).suffix == '.mat':
        return load_unimib(config.data)
    return load_csv(config.data, _descriptor(config), fill_fraction=config.train_fraction)


def _splits(config: RunConfig, seq: SensorSequence, min_length: int):
    return dict(zip(SPLIT_PARTS, sequential_split(seq, config.split_spec(), min_length=min_length)))


def _load_model(config: RunConfig) -> PatchLabelModel:
    if not config.checkpoint:
        raise ConfigError('--checkpoint is required')
    return PatchLabelModel(load_checkpoint(config.checkpoint))


def _eval_windows(model: PatchLabelModel, seq: SensorSequence, name: str, horizon: int = 0) -> WindowDataset:
    cfg = model.config
    return WindowDataset(seq, cfg.window_length, cfg.P, cfg.S, horizon=horizon,
                         require_future=horizon > 0, name=name)


def _needs_future(config: ModelConfig, train_config: TrainConfig) -> bool:
    return config.mode == SIGNAL_FORECAST or (config.T_p >= 1 and train_config.forecast_loss)


def _fit(config: RunConfig, seq: SensorSequence, model_config: ModelConfig, out: Optional[Path],
         resume: Optional[TrainState] = None) -> PatchLabelModel:
    """Train on the train split, validate on val; returns the best model"""
    train_config = config.train_config()
    horizon = model_config.T_p if _needs_future(model_config, train_config) else 0
    parts = _splits(config, seq, config.window + horizon * model_config.P)

    train_set = WindowDataset(parts['train'], config.window, model_config.P, model_config.S,
                              window_stride=config.window_stride, horizon=horizon,
                              require_future=horizon > 0, name='train')
    val_set = WindowDataset(parts['val'], config.window, model_config.P, model_config.S,
                            horizon=horizon, require_future=horizon > 0, name='val')

    gen = make_generator(config.seed)
    params = ModelParams.init(model_config, gen)
    if resume is not None and resume.params.config != model_config:
        raise ConfigError('training state was written for a different model configuration')
    model = PatchLabelModel(params)
    _logger.info('model: %s', params)

    result = train(
        model, train_set, val_set, train_config,
        history_path=out / 'history.jsonl' if out else None,
        state_path=out / 'train_state.npz' if out else None,
        resume=resume, gen=gen,
    )
    if out is not None:
        save_checkpoint(result.state.params, out / 'final.ckpt')
        save_checkpoint(result.params, out / 'best.ckpt')
    model.params = result.params
    return model


# commands -----------------------------------------------------------------

def cmd_generate(config: RunConfig, out: Path, args: argparse.Namespace) -> int:
    """Synthetic dataset, its descriptor and a manifest"""
    seq = generate_synthetic(config.classes, config.channels, n_segments=config.segments, seed=config.seed,
                             successor_prob=config.successor_prob)
    data_path = out / 'synthetic.csv'
    write_csv(seq, data_path, out / 'synthetic.desc')
    manifest = {
        'version': __version__,
        'classes': config.classes,
        'channels': config.channels,
        'segments': config.segments,
        'successor_prob': config.successor_prob,
        'seed': config.seed,
        'samples': seq.length,
        'sample_rate_hz': seq.sample_rate_hz,
        'sha256': hashlib.sha256(data_path.read_bytes()).hexdigest(),
    }
    write_json(manifest, out / 'manifest.json', _logger)
    return 0


def cmd_train(config: RunConfig, out: Path, args: argparse.Namespace) -> int:
    """Train, writing best/final checkpoints, history and resumable state"""
    seq = _load(config)
    resume = TrainState.load(config.resume) if config.resume else None
    model_config = config.model_config(seq)
    _fit(config, seq, model_config, out, resume)
    return 0


def cmd_eval(config: RunConfig, out: Path, args: argparse.Namespace) -> int:
    """Metrics before and after smoothing, with confusion matrices"""
    model = _load_model(config)
    seq = _load(config)
    part = _splits(config, seq, model.config.window_length)[config.split]
    report = evaluate(model, _eval_windows(model, part, config.split), config.smooth_size, config.batch)

    class_names = list(seq.class_names)
    write_confusion_csv(report.raw.confusion, class_names, out / 'confusion_unsmoothed.csv')
    write_confusion_csv(report.smoothed.confusion, class_names, out / 'confusion_smoothed.csv')
    data = report.to_dict()
    data['split'] = config.split
    data['confusion'] = {'unsmoothed': 'confusion_unsmoothed.csv', 'smoothed': 'confusion_smoothed.csv'}
    write_json(data, out / 'metrics.json', _logger)
    return 0


def cmd_segment(config: RunConfig, out: Path, args: argparse.Namespace) -> int:
    """Segments before and after smoothing, plus a per-patch label dump"""
    model = _load_model(config)
    seq = _load(config)
    cfg = model.config
    part = _splits(config, seq, cfg.window_length)[config.split]
    stream = predict_stream(model, _eval_windows(model, part, config.split), config.batch)
    smoothed = stream.smoothed(config.smooth_size)

    for name, labels in (('unsmoothed', stream.preds), ('smoothed', smoothed)):
        segments, _ = extract_segments(labels)
        write_segments(segments, out / f'segments_{name}.csv', cfg.P, cfg.S, seq.sample_rate_hz,
                       seq.class_names, stream.patch_starts)

    dump = pd.DataFrame({
        'patch': np.arange(stream.preds.size),
        'start_sample': stream.patch_starts,
        'start_time_s': stream.patch_starts / seq.sample_rate_hz,
        'true': stream.truths,
        'predicted': stream.preds,
        'smoothed': smoothed,
    })
    try:
        dump.to_csv(out / 'patch_labels.csv', index=False, float_format='%.6f', lineterminator='\n')
    except OSError as ex:
        raise DataError(f'cannot write label dump: {ex}', path=out) from ex
    return 0


def cmd_forecast(config: RunConfig, out: Path, args: argparse.Namespace) -> int:
    """Future labels (and signals in signal-forecast mode) against the truth"""
    model = _load_model(config)
    cfg = model.config
    if 'mode' in args and args.mode != cfg.mode:
        raise ModeError(f'checkpoint is a {cfg.mode} model, {args.mode} was requested')
    if 'horizon' in args and args.horizon != cfg.T_p:
        raise ConfigError(f'checkpoint forecasts {cfg.T_p} patches, --horizon {args.horizon} was requested')
    if cfg.T_p < 1:
        raise ModeError('checkpoint was trained without a forecast horizon')

    seq = _load(config)
    part = _splits(config, seq, cfg.window_length + cfg.T_p * cfg.P)[config.split]
    report = forecast(model, _eval_windows(model, part, config.split, horizon=cfg.T_p), config.batch)
    write_json(report.to_dict(), out / 'forecast.json', _logger)

    if report.confusion is not None:
        write_confusion_csv(report.confusion, list(seq.class_names), out / 'forecast_confusion.csv')
    if cfg.mode == SIGNAL_FORECAST:
        windows, channels, steps = report.predicted.shape
        index = np.indices((windows, channels, steps)).reshape(3, -1)
        series = pd.DataFrame({
            'window': index[0],
            'channel': [seq.channel_names[m] for m in index[1]],
            'step': index[2],
            'predicted': report.predicted.reshape(-1),
            'true': report.truth.reshape(-1),
        })
        try:
            series.to_csv(out / 'forecast_series.csv', index=False, float_format='%.6f', lineterminator='\n')
        except OSError as ex:
            raise DataError(f'cannot write forecast series: {ex}', path=out) from ex
    return 0


def cmd_ablate(config: RunConfig, out: Path, args: argparse.Namespace) -> int:
    """F1 by patch size, plus the no-patching case (P=1, S=1), same budget each"""
    seq = _load(config)
    variants = [(f'P={p}', p, p) for p in ABLATION_PATCH_SIZES] + [('no_patching', 1, 1)]

    rows: List[dict] = []
    done = {}
    for name, patch_size, stride in variants:
        if (patch_size, stride) in done:
            rows.append({**done[(patch_size, stride)], 'variant': name})
            continue
        _logger.info('ablation %s: training', name)
        model_config = config.model_config(seq, patch_size, stride)
        model = _fit(config, seq, model_config, out=None)
        part = _splits(config, seq, model.config.window_length)['test']
        stream = predict_stream(model, _eval_windows(model, part, 'test'), config.batch)
        report = MetricsReport.compute(stream.preds, stream.truths, seq.class_names)
        row = {
            'variant': name,
            'patch_size': patch_size,
            'stride': stride,
            'weighted_f1': report.weighted_f1,
            'accuracy': report.accuracy_plain,
            'jaccard': report.jaccard,
        }
        done[(patch_size, stride)] = row
        rows.append(row)

    table = pd.DataFrame(rows, columns=['variant', 'patch_size', 'stride', 'weighted_f1', 'accuracy', 'jaccard'])
    try:
        table.to_csv(out / 'ablation.csv', index=False, float_format='%.6f', lineterminator='\n')
    except OSError as ex:
        raise DataError(f'cannot write ablation table: {ex}', path=out) from ex
    return 0


def cmd_gradcheck(config: RunConfig, out: Path, args: argparse.Namespace) -> int:
    """Full finite-difference suite; fails naming every group out of tolerance"""
    results = run_suite(tolerance=args.tolerance, seed=config.seed)
    write_json({'tolerance': args.tolerance, 'results': [r.as_dict() for r in results]}, out / 'gradcheck.json', _logger)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericalError(f'gradient check failed for {", ".join(failed)}', where=failed[0])
    return 0


COMMANDS = {
    'generate': cmd_generate,
    'train': cmd_train,
    'eval': cmd_eval,
    'segment': cmd_segment,
    'forecast': cmd_forecast,
    'ablate': cmd_ablate,
    'gradcheck': cmd_gradcheck,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns the process exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    try:
        config = RunConfig.resolve(args)
        out = _out_dir(config)
        _write_resolved(config, args.command, out)
        return COMMANDS[args.command](config, out, args)
    except PatchLabelError as ex:
        _logger.error('%s', ex)
        _logger.debug('error details: %s', ex.reason())
        return ex.exit_code


if __name__ == '__main__':
    sys.exit(main())
