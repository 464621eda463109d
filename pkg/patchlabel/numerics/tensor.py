"""
Tensors and reverse-mode differentiation
----------------------------------------

A `Tensor` is a thin value wrapper around a contiguous numpy array
(float32 by default, float64 for finite-difference oracles).

Differentiable computation goes through `Primitive` subclasses. Each primitive
registers itself by name in `PRIMITIVES` when defined, implements `forward`
on raw arrays and `backward` from the output gradient to one gradient per
input. When a `GradTape` is active (``with GradTape() as tape:``) and any
input requires a gradient, the primitive call is recorded; `tape.gradient`
then replays the records backwards.

Tapes are thread-local: independent tapes may run in parallel threads, one
tape is always used from a single thread.
"""
import logging
import math
import threading
from abc import abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Type

import numpy as np

from patchlabel.errors import DimensionError, NumericalError

_logger = logging.getLogger('patchlabel.numerics')

DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_local = threading.local()


class Tensor:
    """
    Dense row-major array with an optional gradient requirement.
    """

    __slots__ = ('data', 'requires_grad', 'name')

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in _FLOAT_DTYPES else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        """Tensor extents"""
        return self.data.shape

    @property
    def ndim(self) -> int:
        """Number of axes"""
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        """Storage dtype"""
        return self.data.dtype

    @property
    def size(self) -> int:
        """Number of elements"""
        return self.data.size

    def numpy(self) -> np.ndarray:
        """Underlying array (not a copy)"""
        return self.data

    def item(self) -> float:
        """Value of a single-element tensor"""
        assert self.data.size == 1, f'item() needs a single element, got shape {self.shape}'
        return float(self.data.reshape(-1)[0])

    def detach(self) -> 'Tensor':
        """Same values, cut from any tape"""
        return Tensor(self.data, name=self.name)

    def astype(self, dtype) -> 'Tensor':
        """Copy with another float dtype, keeping the gradient flag"""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def reshape(self, *shape) -> 'Tensor':
        """See `reshape`"""
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> 'Tensor':
        """See `transpose`"""
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False) -> 'Tensor':
        """See `reduce_sum`"""
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> 'Tensor':
        """See `reduce_mean`"""
        return reduce_mean(self, axis, keepdims)

    def __add__(self, other):
        return add(self, as_tensor(other, self))

    def __radd__(self, other):
        return add(as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other, self))

    def __rsub__(self, other):
        return sub(as_tensor(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, as_tensor(other, self))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError('tensors can only be divided by a python scalar')
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        name = f' name={self.name}' if self.name else ''
        return f'<Tensor shape={self.shape} dtype={self.dtype}{name} requires_grad={self.requires_grad}>'


def as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    """Wrap constants as tensors, using the dtype of `like` if given"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=like.dtype if like is not None else None)


def _tape_stack() -> List['GradTape']:
    stack = getattr(_local, 'tapes', None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape() -> Optional['GradTape']:
    """Innermost tape active in this thread, if any"""
    stack = _tape_stack()
    return stack[-1] if stack else None


class GradTape:
    """
    Ordered record of primitive calls.

    Usage:

    .. code-block::

        with GradTape() as tape:
            loss = model_loss(params)
        grads = tape.gradient(loss, params)
    """

    def __init__(self):
        self.records: List[Tuple['Primitive', Tuple[Tensor, ...], Tensor]] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        stack = _tape_stack()
        assert stack and stack[-1] is self, 'tapes must be closed in reverse order of opening'
        stack.pop()

    def __len__(self):
        return len(self.records)

    def record(self, op: 'Primitive', inputs: Tuple[Tensor, ...], output: Tensor):
        """Append a primitive call"""
        self.records.append((op, inputs, output))

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> List[np.ndarray]:
        """
        Replay the tape backwards from a scalar target.
        :returns one gradient per source, same shape (zeros if unreachable)
        """
        if target.size != 1:
            raise DimensionError('gradient target must be a scalar', [target.shape], where='gradient')

        grads: Dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}

        for op, inputs, output in reversed(self.records):
            grad = grads.pop(id(output), None)
            if grad is None:
                continue
            for tensor, in_grad in zip(inputs, op.backward(grad)):
                if in_grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + in_grad
                else:
                    grads[key] = in_grad

        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


PRIMITIVES: Dict[str, Type['Primitive']] = {}


class Primitive:
    """
    A differentiable operation on tensors
    """
    name = ''

    def __init_subclass__(cls, **kwargs):
        """
        Register primitive in the PRIMITIVES registry
        """
        super().__init_subclass__(**kwargs)

        if cls.name:
            PRIMITIVES[cls.name] = cls

    @abstractmethod
    def forward(self, *xs: np.ndarray) -> np.ndarray:
        """Compute output from raw input arrays, saving what backward needs"""

    @abstractmethod
    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        """Gradients w.r.t. each input, given the output gradient"""

    @classmethod
    def apply(cls, *inputs: Tensor, **options) -> Tensor:
        """
        Run forward, check the output is finite and record on the active tape.
        """
        op = cls(**options)  # type: ignore[call-arg]
        out = op.forward(*(t.data for t in inputs))

        if not np.all(np.isfinite(out)):
            raise NumericalError(f'non-finite value produced by `{cls.name}`', where=cls.name)

        result = Tensor(out, dtype=out.dtype)
        tape = active_tape()
        if tape is not None and any(t.requires_grad for t in inputs):
            result.requires_grad = True
            tape.record(op, inputs, result)
        return result


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(name: str, *xs: np.ndarray):
    try:
        np.broadcast_shapes(*(x.shape for x in xs))
    except ValueError as ex:
        raise DimensionError(f'`{name}` operands do not broadcast', [x.shape for x in xs], where=name) from ex


class Add(Primitive):
    """x + y, with broadcasting"""
    name = 'add'

    def forward(self, *xs):
        x, y = xs
        _check_broadcast(self.name, x, y)
        self.shapes = (x.shape, y.shape)
        return x + y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Primitive):
    """x - y, with broadcasting"""
    name = 'sub'

    def forward(self, *xs):
        x, y = xs
        _check_broadcast(self.name, x, y)
        self.shapes = (x.shape, y.shape)
        return x - y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Primitive):
    """Elementwise x * y, with broadcasting"""
    name = 'mul'

    def forward(self, *xs):
        x, y = xs
        _check_broadcast(self.name, x, y)
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return unbroadcast(grad * self.y, self.x.shape), unbroadcast(grad * self.x, self.y.shape)


class Scale(Primitive):
    """x * constant"""
    name = 'scale'

    def __init__(self, factor: float):
        self.factor = factor

    def forward(self, *xs):
        x, = xs
        return x * x.dtype.type(self.factor)

    def backward(self, grad):
        return (grad * grad.dtype.type(self.factor),)


class MatMul(Primitive):
    """
    Matrix product over the last two axes, leading axes broadcast.
    """
    name = 'matmul'

    def forward(self, *xs):
        a, b = xs
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise DimensionError('matmul inner dimensions do not agree', [a.shape, b.shape], where=self.name)
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError as ex:
            raise DimensionError('matmul batch dimensions do not broadcast', [a.shape, b.shape], where=self.name) from ex
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        grad_a = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        grad_b = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return unbroadcast(grad_a, self.a.shape), unbroadcast(grad_b, self.b.shape)


class Transpose(Primitive):
    """Axes permutation"""
    name = 'transpose'

    def __init__(self, axes: Optional[Sequence[int]] = None):
        self.axes = tuple(axes) if axes is not None else None

    def forward(self, *xs):
        x, = xs
        if self.axes is None:
            self.axes = tuple(reversed(range(x.ndim)))
        return np.ascontiguousarray(np.transpose(x, self.axes))

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Reshape(Primitive):
    """Same data, new shape"""
    name = 'reshape'

    def __init__(self, shape: Sequence[int]):
        self.shape = tuple(shape)

    def forward(self, *xs):
        x, = xs
        self.in_shape = x.shape
        try:
            return x.reshape(self.shape)
        except ValueError as ex:
            raise DimensionError(f'cannot reshape to {self.shape}', [x.shape], where=self.name) from ex

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Slice(Primitive):
    """Contiguous range [start, stop) along one axis"""
    name = 'slice'

    def __init__(self, axis: int, start: int, stop: int):
        self.axis, self.start, self.stop = axis, start, stop

    def forward(self, *xs):
        x, = xs
        self.in_shape, self.dtype = x.shape, x.dtype
        index = [slice(None)] * x.ndim
        index[self.axis] = slice(self.start, self.stop)
        self.index = tuple(index)
        return np.ascontiguousarray(x[self.index])

    def backward(self, grad):
        full = np.zeros(self.in_shape, dtype=self.dtype)
        full[self.index] = grad
        return (full,)


class Sum(Primitive):
    """Sum over an axis (or all axes)"""
    name = 'sum'

    def __init__(self, axis=None, keepdims=False):
        self.axis, self.keepdims = axis, keepdims

    def forward(self, *xs):
        x, = xs
        self.in_shape = x.shape
        return np.asarray(x.sum(axis=self.axis, keepdims=self.keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Softmax(Primitive):
    """
    Softmax along an axis, computed after subtracting the max for stability
    """
    name = 'softmax'

    def __init__(self, axis: int = -1):
        self.axis = axis

    def forward(self, *xs):
        x, = xs
        exps = np.exp(x - x.max(axis=self.axis, keepdims=True))
        self.y = exps / exps.sum(axis=self.axis, keepdims=True)
        return self.y

    def backward(self, grad):
        y = self.y
        return (y * (grad - (grad * y).sum(axis=self.axis, keepdims=True)),)


class Log(Primitive):
    """Natural logarithm (inputs must be positive)"""
    name = 'log'

    def forward(self, *xs):
        x, = xs
        self.x = x
        with np.errstate(divide='ignore', invalid='ignore'):
            return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class ClampMin(Primitive):
    """max(x, low); no gradient where clamped"""
    name = 'clamp_min'

    def __init__(self, low: float):
        self.low = low

    def forward(self, *xs):
        x, = xs
        self.keep = x > self.low
        return np.maximum(x, x.dtype.type(self.low))

    def backward(self, grad):
        return (grad * self.keep,)


class ClampMax(Primitive):
    """min(x, high); no gradient where clamped"""
    name = 'clamp_max'

    def __init__(self, high: float):
        self.high = high

    def forward(self, *xs):
        x, = xs
        self.keep = x < self.high
        return np.minimum(x, x.dtype.type(self.high))

    def backward(self, grad):
        return (grad * self.keep,)


class Abs(Primitive):
    """|x|"""
    name = 'abs'

    def forward(self, *xs):
        x, = xs
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, grad):
        return (grad * self.sign,)


class Square(Primitive):
    """x ** 2"""
    name = 'square'

    def forward(self, *xs):
        x, = xs
        self.x = x
        return x * x

    def backward(self, grad):
        return (2 * grad * self.x,)


class Gelu(Primitive):
    """
    GELU, tanh approximation
    """
    name = 'gelu'
    K = math.sqrt(2.0 / math.pi)
    C = 0.044715

    def forward(self, *xs):
        x, = xs
        self.x = x
        self.t = np.tanh(self.K * (x + self.C * x ** 3))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, grad):
        x, t = self.x, self.t
        d_inner = self.K * (1.0 + 3.0 * self.C * x * x)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)


@dataclass
class RunningStats:
    """
    Batchnorm running mean/variance, updated in place in training mode.
    """
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def create(cls, features: int, dtype=DEFAULT_DTYPE, momentum=0.1) -> 'RunningStats':
        """Fresh stats: zero mean, unit variance"""
        return cls(np.zeros(features, dtype=dtype), np.ones(features, dtype=dtype), momentum)


class BatchNorm(Primitive):
    """
    Batch normalization. `axis` is the feature axis; statistics are taken over
    every other axis. Inputs are (x, gamma, beta).
    """
    name = 'batchnorm'

    def __init__(self, axis: int = -1, stats: Optional[RunningStats] = None, training: bool = True, eps: float = 1e-5):
        self.axis, self.stats, self.training, self.eps = axis, stats, training, eps

    def forward(self, *xs):
        x, gamma, beta = xs
        axis = self.axis % x.ndim
        self.reduce_axes = tuple(i for i in range(x.ndim) if i != axis)
        count = int(np.prod([x.shape[i] for i in self.reduce_axes]))
        if count == 0 or x.shape[axis] == 0:
            raise DimensionError('batchnorm over a zero-extent axis', [x.shape], where=self.name)

        bshape = [1] * x.ndim
        bshape[axis] = x.shape[axis]
        self.bshape = tuple(bshape)

        if self.training:
            mean = x.mean(axis=self.reduce_axes, keepdims=True)
            var = ((x - mean) ** 2).mean(axis=self.reduce_axes, keepdims=True)
            if self.stats is not None:
                m = self.stats.momentum
                unbiased = var * (count / (count - 1)) if count > 1 else var
                self.stats.mean[...] = (1 - m) * self.stats.mean + m * mean.reshape(-1)
                self.stats.var[...] = (1 - m) * self.stats.var + m * unbiased.reshape(-1)
        else:
            if self.stats is None:
                raise NumericalError('batchnorm in eval mode needs running stats', where=self.name)
            mean = self.stats.mean.reshape(self.bshape).astype(x.dtype)
            var = self.stats.var.reshape(self.bshape).astype(x.dtype)

        self.inv_std = 1.0 / np.sqrt(var + x.dtype.type(self.eps))
        self.x_hat = (x - mean) * self.inv_std
        self.gamma = gamma.reshape(self.bshape)
        self.count = count
        return self.gamma * self.x_hat + beta.reshape(self.bshape)

    def backward(self, grad):
        axes = self.reduce_axes
        grad_beta = grad.sum(axis=axes)
        grad_gamma = (grad * self.x_hat).sum(axis=axes)
        grad_xhat = grad * self.gamma
        if self.training:
            grad_x = self.inv_std * (
                grad_xhat
                - grad_xhat.mean(axis=axes, keepdims=True)
                - self.x_hat * (grad_xhat * self.x_hat).mean(axis=axes, keepdims=True)
            )
        else:
            grad_x = grad_xhat * self.inv_std
        return grad_x, grad_gamma, grad_beta


class Dropout(Primitive):
    """
    Inverted dropout with a mask drawn from the given generator
    """
    name = 'dropout'

    def __init__(self, rate: float, gen: np.random.Generator):
        self.rate, self.gen = rate, gen

    def forward(self, *xs):
        x, = xs
        keep = self.gen.random(x.shape) >= self.rate
        self.mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        return x * self.mask

    def backward(self, grad):
        return (grad * self.mask,)


# Functional API -----------------------------------------------------------

def add(x: Tensor, y: Tensor) -> Tensor:
    """x + y"""
    return Add.apply(x, y)


def sub(x: Tensor, y: Tensor) -> Tensor:
    """x - y"""
    return Sub.apply(x, y)


def mul(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise product"""
    return Mul.apply(x, y)


def scale(x: Tensor, factor: float) -> Tensor:
    """x * factor"""
    return Scale.apply(x, factor=factor)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product on the last two axes"""
    return MatMul.apply(a, b)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes (reverse them by default)"""
    return Transpose.apply(x, axes=axes)


def swap_last(x: Tensor) -> Tensor:
    """Swap the last two axes"""
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """New shape, same data"""
    return Reshape.apply(x, shape=shape)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """x[..., start:stop, ...] along `axis`"""
    return Slice.apply(x, axis=axis, start=start, stop=stop)


def reduce_sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    """Sum"""
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def reduce_mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    """Mean"""
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return scale(reduce_sum(x, axis, keepdims), 1.0 / count)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax"""
    return Softmax.apply(x, axis=axis)


def log(x: Tensor) -> Tensor:
    """Natural logarithm"""
    return Log.apply(x)


def clamp_min(x: Tensor, low: float) -> Tensor:
    """max(x, low)"""
    return ClampMin.apply(x, low=low)


def clamp_max(x: Tensor, high: float) -> Tensor:
    """min(x, high)"""
    return ClampMax.apply(x, high=high)


def absolute(x: Tensor) -> Tensor:
    """|x|"""
    return Abs.apply(x)


def square(x: Tensor) -> Tensor:
    """x ** 2"""
    return Square.apply(x)


def gelu(x: Tensor) -> Tensor:
    """GELU activation"""
    return Gelu.apply(x)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, stats: Optional[RunningStats] = None,
              training: bool = True, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """
    Batch normalization over every axis but `axis`.
    :param stats: running statistics, updated (momentum) in training mode, used in eval mode
    """
    return BatchNorm.apply(x, gamma, beta, axis=axis, stats=stats, training=training, eps=eps)


def dropout(x: Tensor, rate: float, gen: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; identity outside training or when rate is 0"""
    if not training or rate <= 0.0 or gen is None:
        return x
    return Dropout.apply(x, rate=rate, gen=gen)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ weight (+ bias), weight stored (in, out)"""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def check_finite(x: Tensor, where: str):
    """Raise NumericalError naming `where` if x holds NaN/Inf"""
    if not np.all(np.isfinite(x.data)):
        raise NumericalError(f'non-finite values in {where}', where=where)

