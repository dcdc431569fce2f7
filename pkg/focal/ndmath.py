"""Dense f64 tensor algebra with a reverse-mode differentiation tape.

Every model equation is built from the primitives in this module. A ``Tape``
is an append-only list of entries; each entry stores its value, the ids of
the entries it was computed from and a closure mapping the output adjoint to
the input adjoints. Ops only ever reference earlier entries, so ``backward``
is a single reverse sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

LEAKY_RELU_SLOPE = 0.01
FLOAT = np.float64

Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class ShapeError(ValueError):
    pass


class EmptyMaskError(ValueError):
    pass


class ZeroVectorError(ValueError):
    pass


class NonScalarLossError(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass


def as_tensor(data: object) -> np.ndarray:
    return np.array(data, dtype=FLOAT)


@dataclass
class _Entry:
    value: np.ndarray
    parents: tuple[int, ...]
    backward: Backward | None
    trainable: bool
    name: str


class Tape:
    """Append-only record of primitive ops for one forward pass."""

    def __init__(self) -> None:
        self.entries: list[_Entry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def _record(
        self,
        value: np.ndarray,
        parents: tuple[int, ...],
        backward: Backward | None,
        *,
        trainable: bool = False,
        name: str = "",
    ) -> Var:
        value = np.asarray(value, dtype=FLOAT)
        if not np.all(np.isfinite(value)):
            raise NumericalError(f"non-finite value produced by {name or 'op'} (shape {value.shape})")
        self.entries.append(_Entry(value, parents, backward, trainable, name))
        return Var(self, len(self.entries) - 1)

    def leaf(self, value: object, name: str = "") -> Var:
        return self._record(as_tensor(value), (), None, trainable=True, name=name or "leaf")

    def constant(self, value: object, name: str = "") -> Var:
        return self._record(as_tensor(value), (), None, name=name or "constant")

    def value(self, var_id: int) -> np.ndarray:
        return self.entries[var_id].value


class Var:
    """Handle to one tape entry (a VarId plus its tape)."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: Tape, var_id: int) -> None:
        self.tape = tape
        self.id = var_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.entries[self.id].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other: Var) -> Var:
        return add(self, other)

    def __sub__(self, other: Var) -> Var:
        return sub(self, other)

    def __mul__(self, other: Var) -> Var:
        return mul(self, other)

    def __matmul__(self, other: Var) -> Var:
        return matmul(self, other)

    def __neg__(self) -> Var:
        return scale(self, -1.0)

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.shape})"


def lift(tape: Tape, x: Var | np.ndarray | float) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ValueError("operands live on different tapes")
        return x
    return tape.constant(x)


def _tape_of(*xs: object) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _lift_all(*xs: Var | np.ndarray | float) -> tuple[Tape, list[Var]]:
    tape = _tape_of(*xs)
    return tape, [lift(tape, x) for x in xs]


def backward(tape: Tape, loss: Var) -> dict[int, np.ndarray]:
    """Reverse accumulation from ``loss``; returns gradients of every trainable leaf."""
    if loss.value.size != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {loss.shape}")
    grads: list[np.ndarray | None] = [None] * len(tape.entries)
    grads[loss.id] = np.ones_like(loss.value)
    for index in range(loss.id, -1, -1):
        entry = tape.entries[index]
        grad = grads[index]
        if grad is None or entry.backward is None:
            continue
        for parent, parent_grad in zip(entry.parents, entry.backward(grad)):
            if parent_grad is None:
                continue
            if grads[parent] is None:
                grads[parent] = np.array(parent_grad, dtype=FLOAT)
            else:
                grads[parent] = grads[parent] + parent_grad
    result: dict[int, np.ndarray] = {}
    for index, entry in enumerate(tape.entries):
        if entry.trainable:
            grad = grads[index]
            result[index] = np.zeros_like(entry.value) if grad is None else grad
    return result


# -- shape helpers ----------------------------------------------------------


def _broadcast_ok(a: tuple[int, ...], b: tuple[int, ...]) -> bool:
    if a == b:
        return True
    if len(a) != 2 or len(b) != 2:
        return False
    rows, cols = a
    return b in {(1, cols), (rows, 1), (1, 1)}


def _check_elementwise(op: str, a: Var, b: Var) -> None:
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not conformable")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True).reshape(shape)


def _require_2d(op: str, *xs: Var) -> None:
    for x in xs:
        if x.value.ndim != 2:
            raise ShapeError(f"{op}: expected a matrix, got shape {x.shape}")


# -- linear algebra ---------------------------------------------------------


def matmul(a: Var | np.ndarray, b: Var | np.ndarray) -> Var:
    tape, (a, b) = _lift_all(a, b)
    _require_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not conformable")
    av, bv = a.value, b.value
    return tape._record(av @ bv, (a.id, b.id), lambda g: (g @ bv.T, av.T @ g), name="matmul")


def add(a: Var | np.ndarray | float, b: Var | np.ndarray | float) -> Var:
    tape, (a, b) = _lift_all(a, b)
    _check_elementwise("add", a, b)
    sa, sb = a.shape, b.shape
    return tape._record(
        a.value + b.value, (a.id, b.id), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)), name="add"
    )


def sub(a: Var | np.ndarray | float, b: Var | np.ndarray | float) -> Var:
    tape, (a, b) = _lift_all(a, b)
    _check_elementwise("sub", a, b)
    sa, sb = a.shape, b.shape
    return tape._record(
        a.value - b.value, (a.id, b.id), lambda g: (_reduce_to(g, sa), -_reduce_to(g, sb)), name="sub"
    )


def mul(a: Var | np.ndarray | float, b: Var | np.ndarray | float) -> Var:
    tape, (a, b) = _lift_all(a, b)
    _check_elementwise("mul", a, b)
    av, bv = a.value, b.value
    return tape._record(
        av * bv,
        (a.id, b.id),
        lambda g: (_reduce_to(g * bv, av.shape), _reduce_to(g * av, bv.shape)),
        name="mul",
    )


def scale(a: Var, c: float) -> Var:
    c = float(c)
    return a.tape._record(a.value * c, (a.id,), lambda g: (g * c,), name="scale")


def add_scalar(a: Var, c: float) -> Var:
    c = float(c)
    return a.tape._record(a.value + c, (a.id,), lambda g: (g,), name="add_scalar")


def rsub_scalar(c: float, a: Var) -> Var:
    """c - a."""
    c = float(c)
    return a.tape._record(c - a.value, (a.id,), lambda g: (-g,), name="rsub_scalar")


def concat_cols(xs: Sequence[Var | np.ndarray]) -> Var:
    tape, parts = _lift_all(*xs)
    _require_2d("concat_cols", *parts)
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ: {[p.shape for p in parts]}")
    widths = [p.shape[1] for p in parts]
    cuts = np.cumsum(widths)[:-1]
    return tape._record(
        np.concatenate([p.value for p in parts], axis=1),
        tuple(p.id for p in parts),
        lambda g: tuple(np.split(g, cuts, axis=1)),
        name="concat_cols",
    )


def concat_rows(xs: Sequence[Var | np.ndarray]) -> Var:
    tape, parts = _lift_all(*xs)
    _require_2d("concat_rows", *parts)
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ: {[p.shape for p in parts]}")
    heights = [p.shape[0] for p in parts]
    cuts = np.cumsum(heights)[:-1]
    return tape._record(
        np.concatenate([p.value for p in parts], axis=0),
        tuple(p.id for p in parts),
        lambda g: tuple(np.split(g, cuts, axis=0)),
        name="concat_rows",
    )


def column(a: Var, j: int) -> Var:
    _require_2d("column", a)
    cols = a.shape[1]

    def grad(g: np.ndarray) -> tuple[np.ndarray]:
        out = np.zeros((g.shape[0], cols))
        out[:, j] = g[:, 0]
        return (out,)

    return a.tape._record(a.value[:, j : j + 1].copy(), (a.id,), grad, name="column")


def sum_all(a: Var) -> Var:
    shape = a.shape
    return a.tape._record(np.array(a.value.sum()), (a.id,), lambda g: (np.full(shape, float(g)),), name="sum")


def mean_all(a: Var) -> Var:
    n = a.value.size
    if n == 0:
        raise ShapeError("mean_all: empty tensor")
    return scale(sum_all(a), 1.0 / n)


def row_sum(a: Var) -> Var:
    _require_2d("row_sum", a)
    cols = a.shape[1]
    return a.tape._record(
        a.value.sum(axis=1, keepdims=True), (a.id,), lambda g: (np.repeat(g, cols, axis=1),), name="row_sum"
    )


# -- indexing / segments ----------------------------------------------------


def _scatter_rows(values: np.ndarray, index: np.ndarray, num_rows: int) -> np.ndarray:
    out = np.empty((num_rows, values.shape[1]))
    for j in range(values.shape[1]):
        out[:, j] = np.bincount(index, weights=values[:, j], minlength=num_rows)
    return out


def gather_rows(a: Var, index: np.ndarray) -> Var:
    _require_2d("gather_rows", a)
    index = np.asarray(index, dtype=np.int64)
    rows = a.shape[0]
    if index.size and (index.min() < 0 or index.max() >= rows):
        raise ShapeError(f"gather_rows: index out of range for {rows} rows")
    return a.tape._record(
        a.value[index], (a.id,), lambda g: (_scatter_rows(g, index, rows),), name="gather_rows"
    )


@dataclass(frozen=True)
class Segments:
    """Assignment of rows to ``num_segments`` groups (e.g. edges to destination nodes)."""

    ids: np.ndarray
    num_segments: int

    @classmethod
    def from_ids(cls, ids: Sequence[int] | np.ndarray, num_segments: int) -> Segments:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
            raise ShapeError(f"segment id out of range for {num_segments} segments")
        return cls(ids, int(num_segments))

    def counts(self) -> np.ndarray:
        return np.bincount(self.ids, minlength=self.num_segments)

    def starts(self) -> np.ndarray | None:
        """Start offsets when ids are sorted and every segment is non-empty, else None."""
        if self.ids.size == 0 or np.any(np.diff(self.ids) < 0):
            return None
        counts = self.counts()
        if np.any(counts == 0):
            return None
        return np.concatenate(([0], np.cumsum(counts)[:-1]))


def _segment_max(values: np.ndarray, seg: Segments) -> np.ndarray:
    starts = seg.starts()
    if starts is not None:
        return np.maximum.reduceat(values, starts, axis=0)
    out = np.full((seg.num_segments, values.shape[1]), -np.inf)
    np.maximum.at(out, seg.ids, values)
    return out


def segment_sum(a: Var, seg: Segments) -> Var:
    _require_2d("segment_sum", a)
    if a.shape[0] != seg.ids.size:
        raise ShapeError(f"segment_sum: {a.shape[0]} rows but {seg.ids.size} segment ids")
    ids = seg.ids
    return a.tape._record(
        _scatter_rows(a.value, ids, seg.num_segments), (a.id,), lambda g: (g[ids],), name="segment_sum"
    )


def segment_softmax(logits: Var, seg: Segments) -> Var:
    """Column-wise softmax within each segment, max-shifted for stability."""
    _require_2d("segment_softmax", logits)
    if logits.shape[0] != seg.ids.size:
        raise ShapeError(f"segment_softmax: {logits.shape[0]} rows but {seg.ids.size} segment ids")
    ids = seg.ids
    x = logits.value
    peak = _segment_max(x, seg)
    ex = np.exp(x - peak[ids])
    denom = _scatter_rows(ex, ids, seg.num_segments)
    y = ex / denom[ids]

    def grad(g: np.ndarray) -> tuple[np.ndarray]:
        inner = _scatter_rows(y * g, ids, seg.num_segments)
        return (y * (g - inner[ids]),)

    return logits.tape._record(y, (logits.id,), grad, name="segment_softmax")


def softmax_masked(logits: Var, mask: Sequence[bool] | np.ndarray) -> Var:
    """Softmax over the masked entries of a vector; unmasked entries are exactly 0."""
    mask = np.asarray(mask, dtype=bool)
    x = logits.value
    if x.ndim != 1 or mask.shape != x.shape:
        raise ShapeError(f"softmax_masked: logits {x.shape} and mask {mask.shape} must be equal-length vectors")
    if not mask.any():
        raise EmptyMaskError("softmax_masked: mask selects no entries")
    peak = x[mask].max()
    ex = np.where(mask, np.exp(np.where(mask, x - peak, 0.0)), 0.0)
    y = ex / ex.sum()

    def grad(g: np.ndarray) -> tuple[np.ndarray]:
        return (y * (g - np.dot(y, g)),)

    return logits.tape._record(y, (logits.id,), grad, name="softmax_masked")


def softmax_rows(logits: Var) -> Var:
    _require_2d("softmax_rows", logits)
    x = logits.value
    ex = np.exp(x - x.max(axis=1, keepdims=True))
    y = ex / ex.sum(axis=1, keepdims=True)

    def grad(g: np.ndarray) -> tuple[np.ndarray]:
        return (y * (g - (y * g).sum(axis=1, keepdims=True)),)

    return logits.tape._record(y, (logits.id,), grad, name="softmax_rows")


# -- elementwise nonlinearities --------------------------------------------


def sigmoid_value(x: np.ndarray | float) -> np.ndarray:
    x = np.asarray(x, dtype=FLOAT)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def log1p_exp_value(x: np.ndarray | float) -> np.ndarray:
    return np.logaddexp(0.0, np.asarray(x, dtype=FLOAT))


def sigmoid(x: Var) -> Var:
    y = sigmoid_value(x.value)
    return x.tape._record(y, (x.id,), lambda g: (g * y * (1.0 - y),), name="sigmoid")


def tanh(x: Var) -> Var:
    y = np.tanh(x.value)
    return x.tape._record(y, (x.id,), lambda g: (g * (1.0 - y * y),), name="tanh")


def leaky_relu(x: Var, slope: float = LEAKY_RELU_SLOPE) -> Var:
    xv = x.value
    factor = np.where(xv > 0, 1.0, slope)
    return x.tape._record(xv * factor, (x.id,), lambda g: (g * factor,), name="leaky_relu")


def relu(x: Var) -> Var:
    return leaky_relu(x, 0.0)


def log1p_exp(x: Var) -> Var:
    """Stable log(1 + e^x); this is also softplus."""
    xv = x.value
    return x.tape._record(log1p_exp_value(xv), (x.id,), lambda g: (g * sigmoid_value(xv),), name="log1p_exp")


softplus = log1p_exp


def exp(x: Var) -> Var:
    with np.errstate(over="ignore"):
        y = np.exp(x.value)
    return x.tape._record(y, (x.id,), lambda g: (g * y,), name="exp")


def log(x: Var) -> Var:
    xv = x.value
    if np.any(xv <= 0):
        raise NumericalError("log of a non-positive value")
    return x.tape._record(np.log(xv), (x.id,), lambda g: (g / xv,), name="log")


def power(x: Var, exponent: float) -> Var:
    """x ** exponent for x >= 0."""
    xv = x.value
    if np.any(xv < 0):
        raise NumericalError("power of a negative base")
    exponent = float(exponent)
    if exponent == 0.0:
        return x.tape._record(np.ones_like(xv), (x.id,), lambda g: (np.zeros_like(g),), name="power")
    y = np.power(xv, exponent)

    def grad(g: np.ndarray) -> tuple[np.ndarray]:
        if exponent >= 1.0:
            local = exponent * np.power(xv, exponent - 1.0)
        else:
            with np.errstate(divide="ignore"):
                local = np.where(xv > 0, exponent * np.power(np.where(xv > 0, xv, 1.0), exponent - 1.0), 0.0)
        return (g * local,)

    return x.tape._record(y, (x.id,), grad, name="power")


def dropout(x: Var, rate: float, rng: np.random.Generator) -> Var:
    """Inverted dropout; the caller disables it outside training."""
    if rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


# -- cosine -----------------------------------------------------------------


def cosine(u: Var, v: Var) -> Var:
    uv, vv = u.value, v.value
    if uv.shape != vv.shape or uv.ndim != 1:
        raise ShapeError(f"cosine: vectors {uv.shape} and {vv.shape} must be equal-length")
    nu, nv = float(np.linalg.norm(uv)), float(np.linalg.norm(vv))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine of a zero vector is undefined")
    dot = float(np.dot(uv, vv))
    c = dot / (nu * nv)

    def grad(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gu = vv / (nu * nv) - c * uv / (nu * nu)
        gv = uv / (nu * nv) - c * vv / (nv * nv)
        return (float(g) * gu, float(g) * gv)

    return u.tape._record(np.array(min(1.0, max(-1.0, c))), (u.id, v.id), grad, name="cosine")


def cosine_rows(a: Var, b: Var) -> tuple[Var, np.ndarray]:
    """Row-wise cosine as an (n, 1) column; rows where either side is zero get 0 and no gradient.

    Returns the column and the boolean mask of zero rows.
    """
    _require_2d("cosine_rows", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_rows: shapes {a.shape} and {b.shape} differ")
    av, bv = a.value, b.value
    na = np.linalg.norm(av, axis=1, keepdims=True)
    nb = np.linalg.norm(bv, axis=1, keepdims=True)
    zero = (na[:, 0] == 0.0) | (nb[:, 0] == 0.0)
    safe_na = np.where(na == 0.0, 1.0, na)
    safe_nb = np.where(nb == 0.0, 1.0, nb)
    dots = (av * bv).sum(axis=1, keepdims=True)
    c = np.where(zero[:, None], 0.0, dots / (safe_na * safe_nb))
    live = (~zero)[:, None].astype(FLOAT)

    def grad(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ga = bv / (safe_na * safe_nb) - c * av / (safe_na * safe_na)
        gb = av / (safe_na * safe_nb) - c * bv / (safe_nb * safe_nb)
        return (g * ga * live, g * gb * live)

    return a.tape._record(np.clip(c, -1.0, 1.0), (a.id, b.id), grad, name="cosine_rows"), zero


# -- gradient checking ------------------------------------------------------


def grad_check(
    f: Callable[..., Var],
    point: np.ndarray | Sequence[np.ndarray],
    h: float = 1e-6,
    *,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``f(tape, *vars)`` builds a scalar on ``tape``. With ``max_coords`` only that
    many randomly chosen coordinates per input are differenced.
    """
    points = [as_tensor(point)] if isinstance(point, np.ndarray) else [as_tensor(p) for p in point]

    tape = Tape()
    leaves = [tape.leaf(p) for p in points]
    out = f(tape, *leaves)
    grads = backward(tape, out)
    analytic = [grads[leaf.id] for leaf in leaves]

    def evaluate(values: list[np.ndarray]) -> float:
        scratch = Tape()
        return float(f(scratch, *[scratch.constant(v) for v in values]).value)

    worst = 0.0
    for which, base in enumerate(points):
        coords = np.arange(base.size)
        if max_coords is not None and base.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(base.size, size=max_coords, replace=False)
        for flat in coords:
            plus = [p.copy() for p in points]
            minus = [p.copy() for p in points]
            plus[which].flat[flat] += h
            minus[which].flat[flat] -= h
            numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * h)
            exact = float(analytic[which].flat[flat])
            worst = max(worst, abs(exact - numeric) / max(1.0, abs(exact)))
    return worst


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))
