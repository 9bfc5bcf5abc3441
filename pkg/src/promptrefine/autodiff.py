"""Minimal reverse-mode automatic differentiation on numpy arrays.

The graph is define-by-run: every primitive returns a new :class:`Tensor`
that remembers its input tensors and a closure propagating the output
gradient back to them.  There is no explicit tape object — each tensor
carries a monotonically increasing creation index, and ``backward`` visits
the nodes reachable from the loss in strictly decreasing creation order,
which is exactly the reverse of execution order.  A tensor used at several
sites receives the *sum* of the gradient contributions from every site.

All arithmetic is float64.  Primitives are pure functions of their inputs:
the same inputs always produce bitwise-identical outputs and gradients.
Shapes are strict; the only implicit broadcast in the whole engine is the
row-wise bias addition of ``add_rowvec``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.special import erf, expit

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "GradCheckResult",
    "constant",
    "parameter",
    "matmul",
    "add",
    "add_rowvec",
    "add_scalar",
    "mul",
    "scale",
    "neg",
    "gelu",
    "relu",
    "sigmoid",
    "softmax_rows",
    "layer_norm_rows",
    "log",
    "power",
    "clamp_min",
    "concat_rows",
    "concat_cols",
    "slice_rows",
    "slice_cols",
    "transpose",
    "reshape",
    "sum_all",
    "sum_rows",
    "mean_all",
    "backward",
    "grad_check",
]

_CREATION_COUNTER = itertools.count()

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Raised when operands have incompatible shapes; names both shapes."""


class NonFiniteError(FloatingPointError):
    """Raised when a value that must be finite contains NaN or +/-Inf."""


class Tensor:
    """A dense float64 array plus an optional gradient accumulator.

    ``grad`` is ``None`` until some backward pass deposits a contribution;
    a parameter that is not reachable from the loss keeps ``grad=None``,
    which readers should treat as an all-zero gradient.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], None] | None = _backward
        self._seq = next(_CREATION_COUNTER)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def is_finite(self) -> bool:
        """Validity check: True when every entry is finite (no NaN/Inf)."""
        return bool(np.isfinite(self.data).all())

    def detach(self) -> "Tensor":
        """A view of the same data, cut loose from the graph.

        Gradients never flow through a detached tensor, which is how the
        two gradient routes into a multiply-used tensor are separated.
        """
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def grad_or_zeros(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    # Small amount of operator sugar; the module-level functions are the API.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, neg(other))
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def constant(data) -> Tensor:
    """A tensor that never receives gradients (inputs, labels, masks)."""
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    """A learnable leaf tensor."""
    return Tensor(data, requires_grad=True)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _from_op(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents,
                  _backward=backward_fn if needs else None)


def _require_2d(x: Tensor, op: str) -> None:
    if x.data.ndim != 2:
        raise ShapeError(f"{op} needs a 2-d tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Strict 2-d matrix product (m,k) @ (k,n) -> (m,n).

    Backward: dA += G @ B^T, dB += A^T @ G.
    """
    _require_2d(a, "matmul")
    _require_2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def _bw(g: np.ndarray) -> None:
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _from_op(out_data, (a, b), _bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")

    def _bw(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, g)

    return _from_op(a.data + b.data, (a, b), _bw)


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Add a length-n vector to every row of an (r, n) matrix.

    The single sanctioned broadcast in the engine (bias addition).
    Backward: dX += G, dv += column-sums of G.
    """
    _require_2d(x, "add_rowvec")
    if v.data.ndim != 1 or v.shape[0] != x.shape[1]:
        raise ShapeError(f"add_rowvec needs ({x.shape[1]},) vector, got {v.shape}")

    def _bw(g: np.ndarray) -> None:
        _accumulate(x, g)
        _accumulate(v, g.sum(axis=0))

    return _from_op(x.data + v.data, (x, v), _bw)


def add_scalar(x: Tensor, c: float) -> Tensor:
    def _bw(g: np.ndarray) -> None:
        _accumulate(x, g)

    return _from_op(x.data + c, (x,), _bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")

    def _bw(g: np.ndarray) -> None:
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _from_op(a.data * b.data, (a, b), _bw)


def scale(x: Tensor, c: float) -> Tensor:
    def _bw(g: np.ndarray) -> None:
        _accumulate(x, g * c)

    return _from_op(x.data * c, (x,), _bw)


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def gelu(x: Tensor) -> Tensor:
    """Exact-erf GELU: 0.5 * x * (1 + erf(x / sqrt(2))).

    Backward: d/dx = 0.5 * (1 + erf(x/sqrt(2))) + x * pdf(x)
    with pdf(x) = exp(-x^2 / 2) / sqrt(2*pi).
    """
    e = erf(x.data * _INV_SQRT2)
    out_data = 0.5 * x.data * (1.0 + e)

    def _bw(g: np.ndarray) -> None:
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        _accumulate(x, g * (0.5 * (1.0 + e) + x.data * pdf))

    return _from_op(out_data, (x,), _bw)


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    mask = x.data > 0.0

    def _bw(g: np.ndarray) -> None:
        _accumulate(x, g * mask)

    return _from_op(np.where(mask, x.data, 0.0), (x,), _bw)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic; backward uses s * (1 - s)."""
    s = expit(x.data)

    def _bw(g: np.ndarray) -> None:
        _accumulate(x, g * s * (1.0 - s))

    return _from_op(s, (x,), _bw)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction for stability.

    Backward: dX = S * (G - rowsum(G * S)), the standard Jacobian action.
    """
    _require_2d(x, "softmax_rows")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def _bw(g: np.ndarray) -> None:
        inner = (g * s).sum(axis=1, keepdims=True)
        _accumulate(x, s * (g - inner))

    return _from_op(s, (x,), _bw)


def layer_norm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row layer normalization with learnable gain and bias.

    Uses the population variance (divide by n).  Backward follows the
    closed form

        dX = (istd / n) * (n*dY' - sum(dY') - xhat * sum(dY' * xhat))

    with dY' = G * gain, all reductions per row.
    """
    _require_2d(x, "layer_norm_rows")
    n = x.shape[1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(
            f"layer_norm_rows gain/bias must be ({n},), got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * istd
    out_data = xhat * gain.data + bias.data

    def _bw(g: np.ndarray) -> None:
        _accumulate(gain, (g * xhat).sum(axis=0))
        _accumulate(bias, g.sum(axis=0))
        dxhat = g * gain.data
        term = (n * dxhat
                - dxhat.sum(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=1, keepdims=True))
        _accumulate(x, term * (istd / n))

    return _from_op(out_data, (x, gain, bias), _bw)


def log(x: Tensor) -> Tensor:
    """Natural log; callers clamp away from 0 first."""
    def _bw(g: np.ndarray) -> None:
        _accumulate(x, g / x.data)

    return _from_op(np.log(x.data), (x,), _bw)


def power(x: Tensor, gamma: float) -> Tensor:
    """Elementwise x**gamma for a constant exponent gamma >= 0.

    gamma = 0 gives the constant 1 (0**0 := 1) with zero gradient.
    At x = 0 with gamma > 0 the derivative is taken as 0 for gamma != 1.
    """
    if gamma < 0:
        raise ValueError(f"power exponent must be >= 0, got {gamma}")
    out_data = np.power(x.data, gamma)

    def _bw(g: np.ndarray) -> None:
        if gamma == 0.0:
            return
        if gamma == 1.0:
            _accumulate(x, g)
            return
        d = np.where(x.data > 0.0, gamma * np.power(x.data, gamma - 1.0), 0.0)
        _accumulate(x, g * d)

    return _from_op(out_data, (x,), _bw)


def clamp_min(x: Tensor, lo: float) -> Tensor:
    """max(x, lo); gradient passes only where x > lo."""
    mask = x.data > lo

    def _bw(g: np.ndarray) -> None:
        _accumulate(x, g * mask)

    return _from_op(np.where(mask, x.data, lo), (x,), _bw)


def concat_rows(*parts: Tensor) -> Tensor:
    """Stack 2-d tensors with equal column counts on top of each other."""
    if len(parts) < 2:
        raise ValueError("concat_rows needs at least two tensors")
    ncols = parts[0].shape[1] if parts[0].data.ndim == 2 else None
    for p in parts:
        _require_2d(p, "concat_rows")
        if p.shape[1] != ncols:
            raise ShapeError(
                f"concat_rows column counts differ: {parts[0].shape} vs {p.shape}")
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def _bw(g: np.ndarray) -> None:
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[a:b])

    return _from_op(np.concatenate([p.data for p in parts], axis=0), tuple(parts), _bw)


def concat_cols(*parts: Tensor) -> Tensor:
    """Stack 2-d tensors with equal row counts side by side."""
    if len(parts) < 2:
        raise ValueError("concat_cols needs at least two tensors")
    nrows = parts[0].shape[0] if parts[0].data.ndim == 2 else None
    for p in parts:
        _require_2d(p, "concat_cols")
        if p.shape[0] != nrows:
            raise ShapeError(
                f"concat_cols row counts differ: {parts[0].shape} vs {p.shape}")
    sizes = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def _bw(g: np.ndarray) -> None:
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[:, a:b])

    return _from_op(np.concatenate([p.data for p in parts], axis=1), tuple(parts), _bw)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows start..stop (half-open) of a 2-d tensor.

    Backward scatters the gradient into an otherwise-zero block.
    """
    _require_2d(x, "slice_rows")
    if not (0 <= start < stop <= x.shape[0]):
        raise ShapeError(f"slice_rows [{start}:{stop}] out of range for {x.shape}")

    def _bw(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[start:stop] = g
        _accumulate(x, full)

    return _from_op(x.data[start:stop].copy(), (x,), _bw)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns start..stop (half-open) of a 2-d tensor."""
    _require_2d(x, "slice_cols")
    if not (0 <= start < stop <= x.shape[1]):
        raise ShapeError(f"slice_cols [{start}:{stop}] out of range for {x.shape}")

    def _bw(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        _accumulate(x, full)

    return _from_op(x.data[:, start:stop].copy(), (x,), _bw)


def transpose(x: Tensor) -> Tensor:
    _require_2d(x, "transpose")

    def _bw(g: np.ndarray) -> None:
        _accumulate(x, g.T)

    return _from_op(x.data.T.copy(), (x,), _bw)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")

    def _bw(g: np.ndarray) -> None:
        _accumulate(x, g.reshape(x.data.shape))

    return _from_op(x.data.reshape(shape).copy(), (x,), _bw)


def sum_all(x: Tensor) -> Tensor:
    """Sum of every entry, as a scalar (shape ()) tensor."""
    def _bw(g: np.ndarray) -> None:
        _accumulate(x, np.full_like(x.data, float(g)))

    return _from_op(np.asarray(x.data.sum()), (x,), _bw)


def sum_rows(x: Tensor) -> Tensor:
    """Row sums of an (r, n) matrix -> (r,) vector."""
    _require_2d(x, "sum_rows")

    def _bw(g: np.ndarray) -> None:
        _accumulate(x, np.repeat(g[:, None], x.shape[1], axis=1))

    return _from_op(x.data.sum(axis=1), (x,), _bw)


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Visits every tensor reachable from ``loss`` through gradient-requiring
    parents, in strictly decreasing creation order (= reverse execution
    order), accumulating into ``.grad`` by summation.  Tensors touched by
    several downstream consumers therefore end up with the sum of all
    contributions.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    reachable: list[Tensor] = []
    seen = {id(loss)}
    stack = [loss]
    while stack:
        t = stack.pop()
        reachable.append(t)
        for p in t._parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    loss.grad = np.ones_like(loss.data)
    for t in sorted(reachable, key=lambda n: n._seq, reverse=True):
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    n_entries: int

    def __str__(self) -> str:
        return (f"max relative error {self.max_rel_error:.3e} "
                f"at {self.worst_param} ({self.n_entries} entries checked)")


def grad_check(f: Callable[[], Tensor],
               params: Mapping[str, Tensor] | Iterable[tuple[str, Tensor]],
               eps: float = 1e-5) -> GradCheckResult:
    """Compare backward gradients against central finite differences.

    ``f`` rebuilds the scalar loss from scratch on every call (reading the
    current values of ``params``).  For each parameter entry the numeric
    derivative is (f(x+eps) - f(x-eps)) / (2*eps) and the reported error is

        |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)

    maximised over all entries.  Non-finite values raise
    :class:`NonFiniteError` naming the offending parameter.
    """
    if eps <= 0:
        raise ValueError(f"grad_check eps must be positive, got {eps}")
    items = list(params.items()) if isinstance(params, Mapping) else list(params)
    for _, t in items:
        t.zero_grad()
    loss = f()
    if loss.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar loss, got shape {loss.shape}")
    if not loss.is_finite():
        raise NonFiniteError("grad_check: loss is not finite")
    backward(loss)
    analytic = {name: t.grad_or_zeros().copy() for name, t in items}

    worst = 0.0
    worst_name = ""
    n_entries = 0
    for name, t in items:
        if not t.requires_grad:
            continue
        flat = t.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            up = float(f().data)
            flat[i] = saved - eps
            down = float(f().data)
            flat[i] = saved
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NonFiniteError(f"grad_check: non-finite loss while perturbing {name}[{i}]")
            numeric = (up - down) / (2.0 * eps)
            rel = abs(a_flat[i] - numeric) / max(abs(a_flat[i]), abs(numeric), 1e-8)
            n_entries += 1
            if rel > worst:
                worst = rel
                worst_name = f"{name}[{i}]"
    return GradCheckResult(max_rel_error=worst, worst_param=worst_name, n_entries=n_entries)
