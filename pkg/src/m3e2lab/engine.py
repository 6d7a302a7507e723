"""Dense float64 matrix math with tape-based reverse-mode differentiation.

Every value is a 2-D ``Tensor``. Any operation that touches a trainable
tensor (or something derived from one) is recorded on a thread-local tape,
rebuilt on every forward pass. ``backward`` replays that tape newest entry
first, so each node is visited exactly once after all of its consumers, and
returns the gradients of the trainable tensors the loss actually reaches.
The tape is discarded afterwards.

All math is float64; the finite-difference tolerances used by ``grad_check``
are not reachable in single precision.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ParameterError, ShapeError, UsageError

BCE_EPS = 1e-7


class Tensor:
    """A rows x cols matrix of float64 values.

    1-D input is treated as a column vector, scalars as 1x1. ``trainable``
    marks optimizable leaves; everything else is constant data.
    """

    __slots__ = ("data", "trainable", "_tape")

    def __init__(self, data, trainable: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ShapeError(f"Tensor must be 2-D, got shape {arr.shape}")
        if arr.size and not np.isfinite(arr).all():
            raise ParameterError("Tensor values must be finite")
        self.data = arr
        self.trainable = trainable
        self._tape = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the entries."""
        return self.data.ravel()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __repr__(self):
        tag = ", trainable" if self.trainable else ""
        return f"Tensor({self.rows}x{self.cols}{tag})"


class Tape:
    """Execution-ordered record of primitive operations for one forward pass."""

    __slots__ = ("entries",)

    def __init__(self):
        # each entry: (output, inputs, backward_fn(grad_out) -> per-input grads)
        self.entries: list[tuple[Tensor, tuple, Callable]] = []

    def __len__(self):
        return len(self.entries)


_TLS = threading.local()


def _state():
    if not hasattr(_TLS, "tape"):
        _TLS.tape = None
        _TLS.grad_enabled = True
    return _TLS


def active_tape() -> Tape | None:
    return _state().tape


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        st = _state()
        self._prev = st.grad_enabled
        st.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state().grad_enabled = self._prev
        return False


def _tracked(t) -> bool:
    if not isinstance(t, Tensor):
        return False
    st = _state()
    return t.trainable or (t._tape is not None and t._tape is st.tape)


def _record(out: Tensor, inputs: tuple, back: Callable) -> Tensor:
    st = _state()
    if st.grad_enabled and any(_tracked(t) for t in inputs):
        if st.tape is None:
            st.tape = Tape()
        out._tape = st.tape
        st.tape.entries.append((out, inputs, back))
    return out


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_elementwise(a: Tensor, b: Tensor, op: str):
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: shapes {a.rows}x{a.cols} and {b.rows}x{b.cols} do not broadcast")


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] > 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] > 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: {a.rows}x{a.cols} @ {b.rows}x{b.cols}")
    out = Tensor(a.data @ b.data)

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), back)


def transpose(x: Tensor) -> Tensor:
    out = Tensor(x.data.T.copy())

    def back(g):
        return (g.T,)

    return _record(out, (x,), back)


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise(a, b, "add")
    out = Tensor(a.data + b.data)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise(a, b, "sub")
    out = Tensor(a.data - b.data)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise(a, b, "mul")
    out = Tensor(a.data * b.data)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), back)


def square(x: Tensor) -> Tensor:
    out = Tensor(x.data * x.data)

    def back(g):
        return (2.0 * x.data * g,)

    return _record(out, (x,), back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    out = Tensor(np.where(mask, x.data, 0.0))

    def back(g):
        return (g * mask,)

    return _record(out, (x,), back)


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    s = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    out = Tensor(s)

    def back(g):
        return (g * s * (1.0 - s),)

    return _record(out, (x,), back)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax applied independently to each row, with max subtraction."""
    if x.data.size == 0:
        raise ParameterError("softmax_rows: empty input")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s)

    def back(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return _record(out, (x,), back)


def col(x: Tensor, j: int) -> Tensor:
    """Column j as an n x 1 tensor."""
    if not 0 <= j < x.cols:
        raise ShapeError(f"col: index {j} out of range for {x.rows}x{x.cols}")
    out = Tensor(x.data[:, j : j + 1].copy())

    def back(g):
        full = np.zeros_like(x.data)
        full[:, j : j + 1] = g
        return (full,)

    return _record(out, (x,), back)


def concat_cols(parts: list[Tensor]) -> Tensor:
    parts = [_coerce(p) for p in parts]
    parts = [p for p in parts if p.cols > 0]
    if not parts:
        raise ParameterError("concat_cols: nothing to concatenate")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeError(f"concat_cols: row counts differ ({rows} vs {p.rows})")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    offsets = np.cumsum([0] + [p.cols for p in parts])

    def back(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(parts)))

    return _record(out, tuple(parts), back)


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.array([[x.data.sum()]]))

    def back(g):
        return (np.full_like(x.data, g[0, 0]),)

    return _record(out, (x,), back)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(np.array([[x.data.mean()]]))

    def back(g):
        return (np.full_like(x.data, g[0, 0] / n),)

    return _record(out, (x,), back)


# ---------------------------------------------------------------------------
# loss primitives


def _check_same_shape(pred: Tensor, target: Tensor, op: str):
    if pred.shape != target.shape:
        raise ShapeError(
            f"{op}: prediction is {pred.rows}x{pred.cols}, target is {target.rows}x{target.cols}"
        )


def mse(pred, target) -> Tensor:
    pred, target = _coerce(pred), _coerce(target)
    _check_same_shape(pred, target, "mse")
    diff = pred.data - target.data
    n = diff.size
    out = Tensor(np.array([[float(np.mean(diff * diff))]]))

    def back(g):
        base = (2.0 / n) * diff * g[0, 0]
        return base, -base

    return _record(out, (pred, target), back)


def rmse(pred, target) -> Tensor:
    pred, target = _coerce(pred), _coerce(target)
    _check_same_shape(pred, target, "rmse")
    diff = pred.data - target.data
    n = diff.size
    value = float(np.sqrt(np.mean(diff * diff)))
    out = Tensor(np.array([[value]]))

    def back(g):
        if value == 0.0:
            # sqrt is not differentiable at 0; the zero subgradient is used
            z = np.zeros_like(diff)
            return z, z
        base = diff / (n * value) * g[0, 0]
        return base, -base

    return _record(out, (pred, target), back)


def bce(pred, target) -> Tensor:
    """Mean binary cross-entropy; predictions clamped to [eps, 1-eps]."""
    pred, target = _coerce(pred), _coerce(target)
    _check_same_shape(pred, target, "bce")
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    t = target.data
    n = p.size
    out = Tensor(np.array([[float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log1p(-p))))]]))
    inside = (pred.data > BCE_EPS) & (pred.data < 1.0 - BCE_EPS)

    def back(g):
        gp = np.where(inside, (p - t) / (p * (1.0 - p)), 0.0) / n * g[0, 0]
        gt = (np.log1p(-p) - np.log(p)) / n * g[0, 0]
        return gp, gt

    return _record(out, (pred, target), back)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a taped scalar with respect to every trainable tensor it reaches.

    The active tape is consumed: entries are replayed newest first and the
    tape is cleared before returning.
    """
    st = _state()
    if not isinstance(loss, Tensor) or st.tape is None or loss._tape is not st.tape:
        raise UsageError("backward() requires a value produced by taped operations")
    if loss.shape != (1, 1):
        raise ShapeError(f"backward() expects a scalar loss, got {loss.rows}x{loss.cols}")
    tape, st.tape = st.tape, None

    pending: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    grads: dict[Tensor, np.ndarray] = {}
    for out, inputs, back in reversed(tape.entries):
        g = pending.pop(id(out), None)
        if g is None:
            continue
        for t, ig in zip(inputs, back(g)):
            if ig is None or not isinstance(t, Tensor):
                continue
            if t.trainable:
                if t in grads:
                    grads[t] = grads[t] + ig
                else:
                    grads[t] = np.array(ig, dtype=np.float64)
            elif t._tape is tape:
                key = id(t)
                if key in pending:
                    pending[key] = pending[key] + ig
                else:
                    pending[key] = np.array(ig, dtype=np.float64)
    return grads


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class OptimizerState:
    """Per-parameter optimizer accumulators; ``mode`` is 'sgd' or 'adam'."""

    mode: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("sgd", "adam"):
            raise ParameterError(f"optimizer mode must be 'sgd' or 'adam', got {self.mode!r}")
        if self.lr <= 0:
            raise ParameterError("learning rate must be positive")


def optimizer_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: OptimizerState):
    """One in-place update of every parameter. Grads must be keyed like params."""
    missing = [name for name in params if name not in grads]
    if missing:
        raise UsageError(f"missing gradient for parameter(s): {', '.join(sorted(missing))}")
    state.step_count += 1
    t = state.step_count
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient for {name} is {g.shape}, parameter is {p.data.shape}")
        if state.mode == "sgd":
            p.data -= state.lr * g
        else:
            m = state.first_moment.get(name)
            v = state.second_moment.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = state.beta1 * m + (1.0 - state.beta1) * g
            v = state.beta2 * v + (1.0 - state.beta2) * g * g
            state.first_moment[name] = m
            state.second_moment[name] = v
            m_hat = m / (1.0 - state.beta1**t)
            v_hat = v / (1.0 - state.beta2**t)
            p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-5) -> float:
    """Max relative disagreement between analytic and central-difference gradients.

    ``f`` must be a deterministic closure over ``params`` returning a taped
    scalar. Per entry the error is |analytic - numeric| / max(1e-8,
    |analytic| + |numeric|); the max over all entries is returned.
    """
    analytic_by_tensor = backward(f())
    worst = 0.0
    for p in params.values():
        analytic = analytic_by_tensor.get(p)
        if analytic is None:
            analytic = np.zeros_like(p.data)
        flat = p.data.ravel()
        aflat = analytic.ravel()
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                f_plus = f().item()
                flat[i] = orig - h
                f_minus = f().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(aflat[i] - numeric) / max(1e-8, abs(aflat[i]) + abs(numeric))
            worst = max(worst, err)
    return worst
