import json
import sys

import mock
import numpy as np
import pytest

from patchlabel.errors import CheckpointError, ConfigError, DataError, DimensionError, NumericalError
from patchlabel.model.config import SIGNAL_FORECAST
from patchlabel.numerics.optim import AdamState
from patchlabel.numerics.rng import make_generator
from patchlabel.pipeline.state import TrainState
from patchlabel.pipeline.train import (TrainConfig, Trainer, adjust_learning_rate, compute_losses, selection_metric,
                                       train)
from patchlabel.pipeline.windows import WindowDataset
from tests.helpers import labelled, tiny_model, window_set


def config(**overrides):
    values = dict(batch_size=32, lr=1e-3, max_epochs=2, patience=5, window=16, seed=3)
    values.update(overrides)
    return TrainConfig(**values)


def model(**overrides):
    return tiny_model(C=4, M=3, **overrides)


@pytest.fixture
def sets(splits):
    train_seq, val_seq, _ = splits
    return window_set(train_seq, name='train'), window_set(val_seq, name='val')


@pytest.mark.parametrize('epoch, decay, step, expected', [
    (1, 0.5, 10, 1e-3),
    (9, 0.5, 10, 1e-3),
    (10, 0.5, 10, 5e-4),
    (25, 0.5, 10, 2.5e-4),
    (40, 1.0, 10, 1e-3),
    (3, 0.1, 1, 1e-6),
])
def test_adjust_learning_rate(epoch, decay, step, expected):
    state = AdamState(lr=123.0)
    lr = adjust_learning_rate(state, epoch, config(lr=1e-3, lr_decay=decay, lr_step_epochs=step))
    assert lr == pytest.approx(expected)
    assert state.lr == lr


def test_adjust_learning_rate_epoch_zero():
    with pytest.raises(ConfigError):
        adjust_learning_rate(AdamState(), 0, config())


@pytest.mark.parametrize('overrides', [
    dict(batch_size=0),
    dict(lr=-1.0),
    dict(lr=float('nan')),
    dict(patience=0),
    dict(max_epochs=0),
    dict(lr_decay=0.0),
    dict(lr_decay=1.5),
    dict(lr_step_epochs=0),
    dict(seed=-1),
    dict(window_stride=0),
    dict(tau_smooth=0.0),
    dict(smooth_size=4),
])
def test_config_checks(overrides):
    with pytest.raises(ConfigError):
        config(**overrides)


def test_config_dict():
    cfg = config(class_balance=True)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError, match='colour'):
        TrainConfig.from_dict({'colour': 'red'})


def test_windows(splits):
    train_seq = splits[0]
    plain = WindowDataset(train_seq, 16, 4)
    with_future = window_set(train_seq)

    assert plain.starts[:3] == [0, 16, 32]
    assert len(plain) == train_seq.length // 16
    assert plain.n_patches == 5
    assert with_future.starts[-1] + 16 + 8 <= train_seq.length
    assert with_future.patched.horizon == 2
    assert plain.label_counts(4).sum() == len(plain) * 4
    assert plain.future_counts(4).sum() == 0

    overlapping = WindowDataset(train_seq, 16, 4, window_stride=4)
    assert overlapping.starts[:3] == [0, 4, 8]


def test_window_batches(splits):
    dataset = window_set(splits[1])
    in_order = list(dataset.batches(8))
    assert sum(b.B for b in in_order) == len(dataset)
    np.testing.assert_array_equal(in_order[0].patches, dataset.all().select(range(8)).patches)

    first = [b.patch_labels for b in dataset.batches(8, make_generator(1))]
    again = [b.patch_labels for b in dataset.batches(8, make_generator(1))]
    for a, b in zip(first, again):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize('kwargs, exc', [
    (dict(window=0, patch_len=4), ConfigError),
    (dict(window=16, patch_len=4, window_stride=-1), ConfigError),
    (dict(window=64, patch_len=4), DataError),
])
def test_bad_windows(kwargs, exc):
    with pytest.raises(exc):
        WindowDataset(labelled([0] * 40), **kwargs)


def test_compute_losses(sets):
    train_set, _ = sets
    m = model()
    batch = train_set.all().select(range(4))
    out = m.forward(batch)

    total, report = compute_losses(m, out, batch, config())
    assert total.item() == pytest.approx(report.l_total, rel=1e-5)
    assert report.l_cls > 0 and report.l_seg >= 0 and report.l_pre > 0

    _, report = compute_losses(m, out, batch, config(seg_loss=False, forecast_loss=False))
    assert report.l_seg == 0.0
    assert report.l_pre == 0.0


def test_compute_losses_signal(sets):
    train_set, _ = sets
    m = model(mode=SIGNAL_FORECAST)
    batch = train_set.all().select(range(4))
    _, report = compute_losses(m, m.forward(batch), batch, config())
    assert report.l_cls == 0.0
    assert report.l_pre > 0

    batch.future_signal = None
    with pytest.raises(DataError):
        compute_losses(m, m.forward(batch), batch, config())


def test_history(sets, tmp_path):
    history_path = tmp_path / 'history.jsonl'
    result = train(model(), *sets, config(), history_path=history_path)

    lines = [json.loads(line) for line in history_path.read_text().splitlines()]
    assert lines == result.history
    assert [r['epoch'] for r in lines] == [1, 2]
    assert set(lines[0]) == {'epoch', 'lr', 'l_cls', 'l_seg', 'l_pre', 'l_total', 'val_f1', 'val_jaccard',
                             'val_forecast_acc'}
    assert 0.0 <= lines[0]['val_forecast_acc'] <= 1.0
    assert result.state.best_epoch in (1, 2)


@pytest.mark.parametrize('val, signal_mode, expected', [
    ({'val_f1': 0.8, 'val_jaccard': 0.6}, False, 0.8),
    ({'val_f1': 0.8, 'val_jaccard': 0.6, 'val_forecast_acc': 0.4}, False, 0.6),
    ({'val_f1': 0.8, 'val_jaccard': 0.6, 'val_mse': 0.25}, True, -0.25),
    ({'val_f1': 0.8, 'val_jaccard': 0.6}, True, 0.8),
])
def test_selection_metric(val, signal_mode, expected):
    assert selection_metric(val, signal_mode) == pytest.approx(expected)


def test_zero_lr_freezes_parameters(sets):
    m = model()
    before = {name: array.copy() for name, array in m.params.arrays().items() if 'running' not in name}
    train(m, *sets, config(lr=0.0, max_epochs=1))
    for name, array in before.items():
        np.testing.assert_array_equal(m.params[name].data, array)


def test_early_stopping(sets):
    flat = {'val_f1': 0.5, 'val_jaccard': 0.25}
    with mock.patch.object(sys.modules['patchlabel.pipeline.train'], 'validate', return_value=flat):
        result = train(model(), *sets, config(max_epochs=10, patience=2))
    assert len(result.history) == 3
    assert result.state.best_epoch == 1
    assert result.state.epochs_since_improvement == 2


def test_classification_loss_decreases(sets):
    cfg = config(max_epochs=5, seg_loss=False, forecast_loss=False)
    history = train(model(), *sets, cfg).history
    losses = [r['l_cls'] for r in history]
    for before, after in zip(losses, losses[1:]):
        assert after <= before + 1e-3
    assert losses[-1] < losses[0]


def test_same_seed_same_history(sets, tmp_path):
    for run in ('a', 'b'):
        train(model(dropout=0.1), *sets, config(), history_path=tmp_path / f'{run}.jsonl')
    assert (tmp_path / 'a.jsonl').read_bytes() == (tmp_path / 'b.jsonl').read_bytes()


def test_resume_matches_uninterrupted(sets, tmp_path):
    full = train(model(dropout=0.1), *sets, config(max_epochs=3))

    state_path = tmp_path / 'state.npz'
    train(model(dropout=0.1), *sets, config(max_epochs=1), state_path=state_path)
    state = TrainState.load(state_path)
    assert state.epoch == 1

    history_path = tmp_path / 'history.jsonl'
    resumed = train(model(seed=99, dropout=0.1), *sets, config(max_epochs=3), history_path=history_path, resume=state)

    assert resumed.history == full.history
    assert len(history_path.read_text().splitlines()) == 3
    for name, array in full.params.arrays().items():
        np.testing.assert_array_equal(resumed.params.arrays()[name], array)


def test_state_file(sets, tmp_path):
    path = tmp_path / 'state.npz'
    result = train(model(), *sets, config(max_epochs=1), state_path=path)
    state = TrainState.load(path)

    assert state.history == result.history
    assert state.adam.step == result.state.adam.step
    assert state.best_val_metric == result.state.best_val_metric
    assert not (tmp_path / 'state.npz.tmp').exists()

    path.write_bytes(b'not a zip')
    with pytest.raises(CheckpointError) as err:
        TrainState.load(path)
    assert err.value.path == path


def test_state_missing_arrays(sets, tmp_path):
    path = tmp_path / 'state.npz'
    train(model(), *sets, config(max_epochs=1), state_path=path)
    with np.load(path) as data:
        arrays = {key: data[key] for key in data.files if key != 'best/decoder.W_q'}
    np.savez(path, **arrays)
    with pytest.raises(CheckpointError, match='decoder.W_q'):
        TrainState.load(path)


def test_non_finite_is_reported(sets):
    m = model()
    m.params['embed.W_p'].data[0, 0] = np.inf
    with pytest.raises(NumericalError) as err:
        train(m, *sets, config())
    assert err.value.epoch == 1
    assert err.value.step == 0
    assert err.value.exit_code == 3


def test_patch_count_mismatch(splits):
    train_set = WindowDataset(splits[0], 20, 4)
    val_set = WindowDataset(splits[1], 20, 4)
    with pytest.raises(DimensionError):
        Trainer(model(), train_set, val_set, config())


def test_class_balance(sets):
    trainer = Trainer(model(), *sets, config(class_balance=True))
    assert trainer.class_weights.shape == (4,)
    assert trainer.class_weights.sum() == pytest.approx(np.count_nonzero(sets[0].label_counts(4)))
    assert trainer.future_weights is not None


def test_signal_training(sets):
    result = train(model(mode=SIGNAL_FORECAST), *sets, config(max_epochs=1))
    record, = result.history
    assert record['l_cls'] == 0.0
    assert record['val_mse'] >= 0.0
    assert result.state.best_val_metric == -record['val_mse']
