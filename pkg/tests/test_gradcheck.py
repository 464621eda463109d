import mock
import numpy as np
import pytest

from patchlabel.model import gradcheck as suite
from patchlabel.numerics import tensor as T
from patchlabel.numerics.gradcheck import GradCheckResult, check_function, check_primitives, relative_error
from patchlabel.numerics.tensor import PRIMITIVES


def test_every_primitive_passes():
    results = check_primitives(tolerance=1e-4)
    assert [r.name for r in results] == sorted(PRIMITIVES)
    for res in results:
        assert res.passed, res.as_dict()
        assert res.checked > 0


def test_model_groups_pass():
    results = suite.check_model()
    names = [r.name for r in results]
    assert names == ['model.embed', 'model.encoder.0', 'model.decoder', 'model.classifier',
                     'model.forecast', 'model.signal']
    for res in results:
        assert res.passed, res.as_dict()


def test_losses_pass():
    results = suite.check_losses()
    assert {r.name for r in results} == {'loss.cross_entropy', 'loss.tmse', 'loss.forecast', 'loss.signal_mse'}
    for res in results:
        assert res.passed, res.as_dict()


def test_broken_backward_is_caught():
    def wrong(self, grad):
        return (grad,)

    with mock.patch.object(T.Gelu, 'backward', wrong):
        res, = check_primitives(names=['gelu'])
    assert not res.passed
    assert res.rel_err > 1e-2


def test_run_suite_names():
    results = suite.run_suite(primitives=['add', 'softmax'])
    names = [r.name for r in results]
    assert names[:2] == ['op.add', 'op.softmax']
    assert 'model.decoder' in names
    assert names[-1] == 'loss.signal_mse'
    assert all(r.passed for r in results)


def test_unknown_case_fails():
    with mock.patch.dict(PRIMITIVES, {'mystery': T.Add}):
        res, = check_primitives(names=['mystery'])
    assert not res.passed
    assert res.checked == 0


def test_check_function_sampling():
    x = np.linspace(-1, 1, 50)
    res, = check_function(lambda ts: T.reduce_sum(T.square(ts[0])), [x], ['x'], max_entries=10)
    assert res.checked == 10
    assert res.rel_err < 1e-6


@pytest.mark.parametrize('analytic, numeric, expected', [
    ([1.0, 0.0], [1.0, 0.0], 0.0),
    ([2.0, 0.0], [1.0, 0.0], 0.5),
    ([0.0], [0.0], 0.0),
])
def test_relative_error(analytic, numeric, expected):
    assert relative_error(np.array(analytic), np.array(numeric)) == pytest.approx(expected)


def test_result_row():
    row = GradCheckResult('op.add', 2e-3, 1e-3, 12).as_dict()
    assert row == {'name': 'op.add', 'max_rel_err': 2e-3, 'tolerance': 1e-3, 'entries': 12, 'passed': False}
