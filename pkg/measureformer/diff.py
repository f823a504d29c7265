"""
Reverse-mode differentiation over the few tensor primitives the stacks use.

A `Tape` records every primitive it evaluates; `backward_grads` replays the
record in reverse. A tape built with `record=False` evaluates the same code
path without keeping anything, which is how models run outside training.
"""
from __future__ import annotations
import math
import numpy as np
from numpy.typing import NDArray, ArrayLike
from typing import Callable, Mapping, Sequence
from .mf_types import ParamDict
from .spectral import SmoothClip
from .util import DimensionError, GradientError

__all__ = (
    'Tape',
    'Tensor',
    'backward_grads',
    'grad_check'
)

FloatArray = NDArray[np.float64]
Backward = Callable[[FloatArray], Sequence[FloatArray | None]]

SOFTMAX_FLOOR = 1e-300
REL_FLOOR = 1e-8


class Tensor:
    """A value on a tape; `node` is its index in the tape record, or -1 for constants."""

    __slots__ = ('value', 'node')

    def __init__(self, value: FloatArray, node: int) -> None:
        """Initialize."""

        self.value = value
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        """Array shape."""

        return tuple(self.value.shape)

    @property
    def size(self) -> int:
        """Value count."""

        return int(self.value.size)

    def __repr__(self) -> str:  # pragma: no cover
        """Representation."""

        return f'Tensor(shape={self.shape}, node={self.node})'


class Tape:
    """Ordered record of primitive evaluations."""

    def __init__(self, record: bool = True) -> None:
        """Initialize."""

        self.record = record
        self._inputs = []  # type: list[tuple[int, ...]]
        self._backward = []  # type: list[Backward | None]
        self._params = {}  # type: dict[str, Tensor]

    def __len__(self) -> int:
        """Recorded node count."""

        return len(self._inputs)

    @property
    def params(self) -> Mapping[str, Tensor]:
        """Parameter leaves in registration order."""

        return self._params

    def _push(self, value: FloatArray, inputs: Sequence[Tensor], backward: Backward) -> Tensor:
        if not self.record or all(t.node < 0 for t in inputs):
            return Tensor(value, -1)
        self._inputs.append(tuple(t.node for t in inputs))
        self._backward.append(backward)
        return Tensor(value, len(self._inputs) - 1)

    def _leaf(self) -> int:
        if not self.record:
            return -1
        self._inputs.append(())
        self._backward.append(None)
        return len(self._inputs) - 1

    # Leaves

    def parameter(self, name: str, value: ArrayLike) -> Tensor:
        """Register a differentiable leaf."""

        if name in self._params:
            raise KeyError(f"Parameter '{name}' registered twice")
        tensor = Tensor(np.array(value, dtype=np.float64), self._leaf())
        self._params[name] = tensor
        return tensor

    def parameters(self, params: Mapping[str, ArrayLike]) -> dict[str, Tensor]:
        """Register every entry of a parameter mapping."""

        return {name: self.parameter(name, value) for name, value in params.items()}

    def constant(self, value: ArrayLike) -> Tensor:
        """Non-differentiable input."""

        return Tensor(np.asarray(value, dtype=np.float64), -1)

    # Primitives

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        """Matrix product of two 2-D tensors."""

        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f'Cannot multiply {a.shape} by {b.shape}')
        av, bv = a.value, b.value

        def backward(g: FloatArray) -> tuple[FloatArray, FloatArray]:
            return g @ bv.T, av.T @ g

        return self._push(av @ bv, (a, b), backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Sum; `b` may be a row `(m,)` or `(1, m)` broadcast over the rows of `a`."""

        broadcast = b.shape != a.shape
        if broadcast and not (b.value.size == a.shape[-1] and a.value.ndim == 2):
            raise DimensionError(f'Cannot add {b.shape} to {a.shape}')
        bshape = b.shape

        def backward(g: FloatArray) -> tuple[FloatArray, FloatArray]:
            return g, (g.sum(axis=0).reshape(bshape) if broadcast else g)

        value = a.value + (b.value.reshape(1, -1) if broadcast else b.value)
        return self._push(value, (a, b), backward)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        """Difference of equal shapes."""

        if a.shape != b.shape:
            raise DimensionError(f'Cannot subtract {b.shape} from {a.shape}')

        def backward(g: FloatArray) -> tuple[FloatArray, FloatArray]:
            return g, -g

        return self._push(a.value - b.value, (a, b), backward)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise product of equal shapes."""

        if a.shape != b.shape:
            raise DimensionError(f'Cannot multiply {a.shape} and {b.shape} elementwise')
        av, bv = a.value, b.value

        def backward(g: FloatArray) -> tuple[FloatArray, FloatArray]:
            return g * bv, g * av

        return self._push(av * bv, (a, b), backward)

    def scale(self, a: Tensor, c: float) -> Tensor:
        """Multiply by a fixed scalar."""

        def backward(g: FloatArray) -> tuple[FloatArray]:
            return (c * g,)

        return self._push(c * a.value, (a,), backward)

    def tanh(self, a: Tensor) -> Tensor:
        """Elementwise `tanh`."""

        out = np.tanh(a.value)

        def backward(g: FloatArray) -> tuple[FloatArray]:
            return (g * (1.0 - out * out),)

        return self._push(out, (a,), backward)

    def exp(self, a: Tensor) -> Tensor:
        """Elementwise exponential."""

        out = np.exp(a.value)

        def backward(g: FloatArray) -> tuple[FloatArray]:
            return (g * out,)

        return self._push(out, (a,), backward)

    def measure_softmax(self, logits: Tensor, weights: ArrayLike) -> Tensor:
        """
        Row softmax with atom weights in numerator and denominator.

        `p_ij = w_j exp(l_ij) / sum_k w_k exp(l_ik)`, stabilized by subtracting the row maximum.
        """

        w = np.asarray(weights, dtype=np.float64)
        lv = logits.value
        if lv.ndim != 2 or w.shape != (lv.shape[1],):
            raise DimensionError(f'Logits {logits.shape} do not match {w.size} atom weights')
        shifted = lv - lv.max(axis=1, keepdims=True)
        num = w[None, :] * np.exp(shifted)
        den = np.maximum(num.sum(axis=1, keepdims=True), SOFTMAX_FLOOR)
        p = num / den

        def backward(g: FloatArray) -> tuple[FloatArray]:
            return (p * (g - np.sum(p * g, axis=1, keepdims=True)),)

        return self._push(p, (logits,), backward)

    def weighted_sum(self, a: Tensor, weights: ArrayLike) -> Tensor:
        """Row combination `sum_j w_j a_j` as a `(1, m)` tensor."""

        w = np.asarray(weights, dtype=np.float64).reshape(1, -1)
        if a.value.ndim != 2 or w.shape[1] != a.shape[0]:
            raise DimensionError(f'Cannot weight {a.shape} rows by {w.size} weights')

        def backward(g: FloatArray) -> tuple[FloatArray]:
            return (w.T @ g,)

        return self._push(w @ a.value, (a,), backward)

    def smooth_clip(self, a: Tensor, clip: SmoothClip) -> Tensor:
        """Elementwise smooth clip."""

        slope = clip.derivative(a.value)

        def backward(g: FloatArray) -> tuple[FloatArray]:
            return (g * slope,)

        return self._push(clip(a.value), (a,), backward)

    def concat(self, tensors: Sequence[Tensor]) -> Tensor:
        """Join 2-D tensors along columns."""

        widths = [t.shape[1] for t in tensors]
        if len({t.shape[0] for t in tensors}) != 1:
            raise DimensionError(f'Row counts differ: {[t.shape for t in tensors]}')
        bounds = np.cumsum([0, *widths])

        def backward(g: FloatArray) -> list[FloatArray]:
            return [g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]

        return self._push(np.concatenate([t.value for t in tensors], axis=1), tensors, backward)

    def columns(self, a: Tensor, start: int, stop: int) -> Tensor:
        """Column slice `a[:, start:stop]`."""

        shape = a.shape

        def backward(g: FloatArray) -> tuple[FloatArray]:
            out = np.zeros(shape)
            out[:, start:stop] = g
            return (out,)

        return self._push(a.value[:, start:stop].copy(), (a,), backward)

    def rows(self, a: Tensor, start: int, stop: int) -> Tensor:
        """Row slice `a[start:stop]`."""

        shape = a.shape

        def backward(g: FloatArray) -> tuple[FloatArray]:
            out = np.zeros(shape)
            out[start:stop] = g
            return (out,)

        return self._push(a.value[start:stop].copy(), (a,), backward)

    def repeat_rows(self, a: Tensor, count: int) -> Tensor:
        """Stack a single row `count` times."""

        if a.value.ndim != 2 or a.shape[0] != 1:
            raise DimensionError(f'Only a single row can be repeated, got {a.shape}')

        def backward(g: FloatArray) -> tuple[FloatArray]:
            return (g.sum(axis=0, keepdims=True),)

        return self._push(np.repeat(a.value, count, axis=0), (a,), backward)

    def transpose(self, a: Tensor) -> Tensor:
        """Matrix transpose."""

        def backward(g: FloatArray) -> tuple[FloatArray]:
            return (g.T,)

        return self._push(a.value.T.copy(), (a,), backward)

    def total(self, a: Tensor) -> Tensor:
        """Sum of every entry as a scalar."""

        shape = a.shape

        def backward(g: FloatArray) -> tuple[FloatArray]:
            return (np.full(shape, float(g)),)

        return self._push(np.asarray(a.value.sum()), (a,), backward)

    def square_error(self, a: Tensor, target: ArrayLike) -> Tensor:
        """`sum |a - target|^2` as a scalar."""

        diff = self.sub(a, self.constant(np.asarray(target, dtype=np.float64).reshape(a.shape)))
        return self.total(self.mul(diff, diff))


def backward_grads(tape: Tape, loss: Tensor) -> dict[str, FloatArray]:
    """
    Gradients of a scalar `loss` with respect to every registered parameter.

    Contributions are accumulated in reverse record order, so repeated runs
    produce identical sums.
    """

    if loss.size != 1:
        raise GradientError(f'Loss must be a scalar, got shape {loss.shape}')
    grads = {}  # type: dict[int, FloatArray]
    if loss.node >= 0:
        grads[loss.node] = np.ones_like(loss.value)
        for node in range(loss.node, -1, -1):
            g = grads.get(node)
            backward = tape._backward[node]
            if g is None or backward is None:
                continue
            for index, contribution in zip(tape._inputs[node], backward(g)):
                if index < 0 or contribution is None:
                    continue
                if index in grads:
                    grads[index] = grads[index] + contribution
                else:
                    grads[index] = np.asarray(contribution, dtype=np.float64)

    out = {}
    for name, tensor in tape.params.items():
        g = grads.get(tensor.node)
        out[name] = np.zeros_like(tensor.value) if g is None else g.reshape(tensor.shape)
    return out


LossFunction = Callable[[Tape, Mapping[str, Tensor]], Tensor]


def _evaluate(f: LossFunction, params: ParamDict) -> float:
    tape = Tape(record=False)
    value = float(f(tape, tape.parameters(params)).value)
    if not math.isfinite(value):
        raise GradientError('Loss is not finite')
    return value


def grad_check(f: LossFunction, params: ParamDict, step: float = 1e-5) -> float:
    """
    Largest relative disagreement between tape gradients and central differences.

    The relative error of a coordinate is `|g - fd| / max(|g|, 1e-8)`.
    """

    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f'Finite-difference step {step} outside [1e-7, 1e-3]')
    tape = Tape()
    loss = f(tape, tape.parameters(params))
    grads = backward_grads(tape, loss)
    analytic = np.concatenate([grads[name].ravel() for name in params]) if len(params) else np.zeros(0)
    if not np.all(np.isfinite(analytic)):
        raise GradientError('Tape gradient is not finite')

    base = params.flatten()
    worst = 0.0
    for i in range(base.size):
        probe = base.copy()
        probe[i] += step
        upper = _evaluate(f, params.unflatten(probe))
        probe[i] = base[i] - step
        lower = _evaluate(f, params.unflatten(probe))
        fd = (upper - lower) / (2.0 * step)
        g = analytic[i]
        worst = max(worst, abs(g - fd) / max(abs(g), REL_FLOOR))
    return worst
