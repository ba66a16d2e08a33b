"""Dense fields, differentiable primitives and a reverse-mode tape.

Fields are plain float64 numpy arrays laid out row-major:

* scalar field   ``(H, W)``
* channel volume ``(H, W, N)``
* RGB image      ``(H, W, 3)`` with values in ``[0, 1]``

Differentiable code wraps arrays in :class:`Var`. While a :class:`Tape` is
active (``with tape:``), every primitive whose inputs require a gradient
records a node holding the closure that maps the output cotangent to input
cotangents. :meth:`Tape.backward` replays those closures in reverse order.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "active_tape", default=None
)


class FieldError(ValueError):
    """Raised for malformed fields or violated operation preconditions."""


class TapeError(RuntimeError):
    """Raised when a backward pass cannot be performed."""


# ---------------------------------------------------------------------------
# containers


def scalar_field(data) -> np.ndarray:
    a = np.array(data, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise FieldError(f"scalar field must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise FieldError("scalar field contains non-finite values")
    return a


def channel_volume(data, probability: bool = False, atol: float = 1e-6) -> np.ndarray:
    a = np.array(data, dtype=np.float64)
    if a.ndim != 3 or a.size == 0:
        raise FieldError(f"channel volume must be a non-empty 3-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise FieldError("channel volume contains non-finite values")
    if probability:
        check_probability(a, atol)
    return a


def check_probability(volume: np.ndarray, atol: float = 1e-6) -> None:
    if np.any(volume < 0):
        raise FieldError("probability volume has negative entries")
    total = volume.sum(axis=-1)
    if np.max(np.abs(total - 1.0)) > atol:
        raise FieldError("probability volume channels do not sum to one")


def rgb_image(data) -> np.ndarray:
    """Return a float64 ``(H, W, 3)`` copy of ``data`` clamped to ``[0, 1]``."""
    a = np.array(data, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] == 0 or a.shape[1] == 0:
        raise FieldError(f"RGB image must have shape (H, W, 3), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise FieldError("RGB image contains non-finite values")
    return np.clip(a, 0.0, 1.0)


# ---------------------------------------------------------------------------
# tape


class Var:
    """An array value that may participate in reverse-mode differentiation."""

    __array_priority__ = 100.0
    __slots__ = ("value", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        v = np.array(value, dtype=np.float64)
        v.flags.writeable = False
        self.value = v
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Var{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)


@dataclass
class _Node:
    op: str
    out: Var
    parents: tuple[Var, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of differentiable operations executed in one context.

    A tape belongs to a single forward pass; do not share one across threads.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.params: dict[str, Var] = {}
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def param(self, value, name: str) -> Var:
        """Register ``value`` as a differentiable parameter called ``name``."""
        if name in self.params:
            raise TapeError(f"parameter {name!r} registered twice")
        v = Var(value, requires_grad=True, name=name)
        self.params[name] = v
        return v

    def record(self, node: _Node) -> None:
        self.nodes.append(node)

    def backward(self, output: Var, seed: float = 1.0) -> dict[str, np.ndarray]:
        """Gradient of the scalar ``output`` with respect to every parameter."""
        return backward(self, output, seed)


def backward(tape: Tape, output: Var, seed: float = 1.0) -> dict[str, np.ndarray]:
    if not tape.nodes and not tape.params:
        raise TapeError("tape is empty")
    if not isinstance(output, Var) or output.value.size != 1:
        raise TapeError("backward needs a scalar-valued terminal node")
    produced = {id(n.out) for n in tape.nodes}
    registered = {id(p) for p in tape.params.values()}
    if id(output) not in produced and id(output) not in registered:
        raise TapeError("terminal node was not recorded on this tape")

    grads: dict[int, np.ndarray] = {id(output): np.full(output.shape, float(seed))}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64)
    return {
        name: grads.get(id(p), np.zeros(p.shape)).reshape(p.shape)
        for name, p in tape.params.items()
    }


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def detach(x) -> Var:
    return Var(value_of(x))


def _emit(op: str, value: np.ndarray, parents: tuple[Var, ...], vjp) -> Var:
    needs = any(p.requires_grad for p in parents)
    out = Var(value, requires_grad=needs)
    if needs:
        tape = _ACTIVE_TAPE.get()
        if tape is not None:
            tape.record(_Node(op, out, parents, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise algebra


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _emit(
        "add",
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _emit(
        "sub",
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _emit(
        "mul",
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value / b.value
    return _emit(
        "div",
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * out / b.value, b.shape),
        ),
    )


def power(a, exponent: float) -> Var:
    a = as_var(a)
    return _emit(
        "power",
        a.value**exponent,
        (a,),
        lambda g: (g * exponent * a.value ** (exponent - 1),),
    )


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Var:
    a = as_var(a)
    return _emit("log", np.log(a.value), (a,), lambda g: (g / a.value,))


def absolute(a) -> Var:
    a = as_var(a)
    return _emit("abs", np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def sigmoid(a) -> Var:
    a = as_var(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Var:
    a = as_var(a)
    x = a.value
    out = np.logaddexp(0.0, x)
    return _emit("softplus", out, (a,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * x)),))


def where(cond, a, other: float = 0.0) -> Var:
    """``a`` where ``cond`` holds, the constant ``other`` elsewhere (NaN-safe)."""
    a = as_var(a)
    cond = np.broadcast_to(np.asarray(cond, dtype=bool), a.shape)
    return _emit(
        "where", np.where(cond, a.value, other), (a,), lambda g: (np.where(cond, g, 0.0),)
    )


def maximum(a, floor: float) -> Var:
    """Clamp from below by a constant; the gradient passes where ``a >= floor``."""
    a = as_var(a)
    keep = a.value >= floor
    return _emit("maximum", np.where(keep, a.value, floor), (a,), lambda g: (g * keep,))


def minimum(a, ceil: float) -> Var:
    a = as_var(a)
    keep = a.value <= ceil
    return _emit("minimum", np.where(keep, a.value, ceil), (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# reductions and structure


def sum_(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit("sum", out, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    count = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / float(count))


def norm(a, axis: int = -1) -> Var:
    """Euclidean norm along ``axis``; the gradient at a zero vector is taken as 0."""
    a = as_var(a)
    out = np.sqrt(np.sum(a.value**2, axis=axis))

    def vjp(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        return (np.expand_dims(scale, axis) * a.value,)

    return _emit("norm", out, (a,), vjp)


def getitem(a, index) -> Var:
    """Basic (view) indexing: slices, integers, ``None`` and ``Ellipsis``."""
    a = as_var(a)

    def vjp(g):
        ga = np.zeros(a.shape)
        ga[index] += g
        return (ga,)

    return _emit("getitem", a.value[index], (a,), vjp)


def reshape(a, shape) -> Var:
    a = as_var(a)
    return _emit("reshape", a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def take(a, indices: np.ndarray, axis: int) -> Var:
    """Gather along one axis with an integer index array (duplicates allowed)."""
    a = as_var(a)
    indices = np.asarray(indices, dtype=np.intp)

    def vjp(g):
        moved = np.moveaxis(g, axis, 0)
        acc = np.zeros((a.shape[axis],) + moved.shape[1:])
        np.add.at(acc, indices, moved)
        return (np.moveaxis(acc, 0, axis),)

    return _emit("take", np.take(a.value, indices, axis=axis), (a,), vjp)


def stack(items: Sequence, axis: int = -1) -> Var:
    vs = tuple(as_var(x) for x in items)
    out = np.stack([v.value for v in vs], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(vs)))

    return _emit("stack", out, vs, vjp)


def pad_reflect(a, pad: int) -> Var:
    """Mirror-pad the two leading (spatial) axes by ``pad`` pixels."""
    a = as_var(a)
    out = a
    for axis in (0, 1):
        idx = np.pad(np.arange(a.shape[axis]), pad, mode="reflect")
        out = take(out, idx, axis=axis)
    return out


def softmax_channels(volume, axis: int = -1) -> Var:
    """Softmax along the channel axis, stabilised by the per-pixel maximum."""
    v = as_var(volume)
    z = v.value - v.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _emit("softmax", out, (v,), vjp)


def diff_x(field) -> Var:
    """Forward difference along x; the last column is zero."""
    f = as_var(field)
    if f.ndim < 2 or f.shape[1] < 2:
        raise FieldError("diff_x needs a field at least 2 pixels wide")
    out = np.zeros(f.shape)
    out[:, :-1] = f.value[:, 1:] - f.value[:, :-1]

    def vjp(g):
        gf = np.zeros(f.shape)
        gf[:, 1:] += g[:, :-1]
        gf[:, :-1] -= g[:, :-1]
        return (gf,)

    return _emit("diff_x", out, (f,), vjp)


def diff_y(field) -> Var:
    """Forward difference along y; the last row is zero."""
    f = as_var(field)
    if f.ndim < 2 or f.shape[0] < 2:
        raise FieldError("diff_y needs a field at least 2 pixels tall")
    out = np.zeros(f.shape)
    out[:-1] = f.value[1:] - f.value[:-1]

    def vjp(g):
        gf = np.zeros(f.shape)
        gf[1:] += g[:-1]
        gf[:-1] -= g[:-1]
        return (gf,)

    return _emit("diff_y", out, (f,), vjp)


# ---------------------------------------------------------------------------
# sampling


def _corner_index(coord: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lower/upper neighbour indices and the interpolation weight of the upper one."""
    if size == 1:
        zero = np.zeros(coord.shape, dtype=np.intp)
        return zero, zero, np.zeros(coord.shape)
    lo = np.clip(np.floor(coord), 0, size - 2).astype(np.intp)
    return lo, lo + 1, np.asarray(coord - lo)


def bilinear_sample(field, x, y, fill: float = 0.0) -> Var:
    """Sample a ``(H, W)`` or ``(H, W, C)`` field at real pixel coordinates.

    ``x`` and ``y`` are arrays (or scalars) of equal shape. Points outside
    ``[0, W-1] x [0, H-1]`` return ``fill``. Inside the frame the result is the
    bilinear blend of the surrounding pixels, so integer coordinates are exact.
    Differentiable with respect to the field and both coordinates.
    """
    f, xv, yv = as_var(field), as_var(x), as_var(y)
    h, w = f.shape[:2]
    xs, ys = np.broadcast_arrays(xv.value, yv.value)
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.where(inside, xs, 0.0)
    yc = np.where(inside, ys, 0.0)
    x0, x1, fx = _corner_index(xc, w)
    y0, y1, fy = _corner_index(yc, h)
    data = f.value
    f00, f01 = data[y0, x0], data[y0, x1]
    f10, f11 = data[y1, x0], data[y1, x1]
    extra = (Ellipsis,) + (None,) * (data.ndim - 2)
    fx_, fy_ = fx[extra], fy[extra]
    mask = inside[extra]
    blend = (1 - fy_) * ((1 - fx_) * f00 + fx_ * f01) + fy_ * ((1 - fx_) * f10 + fx_ * f11)
    out = np.where(mask, blend, fill)

    def vjp(g):
        gm = np.where(mask, g, 0.0)
        gfield = np.zeros(data.shape)
        for yi, xi, wgt in (
            (y0, x0, (1 - fy_) * (1 - fx_)),
            (y0, x1, (1 - fy_) * fx_),
            (y1, x0, fy_ * (1 - fx_)),
            (y1, x1, fy_ * fx_),
        ):
            np.add.at(gfield, (yi, xi), gm * wgt)
        dx = (1 - fy_) * (f01 - f00) + fy_ * (f11 - f10)
        dy = (1 - fx_) * (f10 - f00) + fx_ * (f11 - f01)
        gx = gm * dx
        gy = gm * dy
        if data.ndim > 2:
            tail = tuple(range(gx.ndim - data.ndim + 2, gx.ndim))
            gx, gy = gx.sum(axis=tail), gy.sum(axis=tail)
        return gfield, _unbroadcast(gx, xv.shape), _unbroadcast(gy, yv.shape)

    return _emit("bilinear_sample", out, (f, xv, yv), vjp)


def sample_x(field, offset, fill: float = 0.0) -> Var:
    """Resample along x: ``out[y, x, ...] = field<x + offset[y, x, ...], y>``.

    ``offset`` broadcasts against ``field`` (which has rows and columns on its
    first two axes); the output takes the broadcast shape. This is the
    horizontal-only case of :func:`bilinear_sample` and is what both warps in
    a rectified stereo pair reduce to.
    """
    f, o = as_var(field), as_var(offset)
    w = f.shape[1]
    ndim = max(f.ndim, o.ndim)
    fv = f.value.reshape(f.shape + (1,) * (ndim - f.ndim))
    ov = o.value.reshape(o.shape + (1,) * (ndim - o.ndim))
    shape = np.broadcast_shapes(fv.shape, ov.shape)
    cols = np.arange(w, dtype=np.float64).reshape((1, w) + (1,) * (ndim - 2))
    xs = np.broadcast_to(cols + ov, shape)
    inside = (xs >= 0) & (xs <= w - 1)
    x0, x1, fx = _corner_index(np.where(inside, xs, 0.0), w)
    fb = np.broadcast_to(fv, shape)
    v0 = np.take_along_axis(fb, x0, axis=1)
    v1 = np.take_along_axis(fb, x1, axis=1)
    out = np.where(inside, (1 - fx) * v0 + fx * v1, fill)

    def vjp(g):
        gm = np.where(inside, g, 0.0)
        size = int(np.prod(shape))
        strides = np.array([int(np.prod(shape[i + 1 :])) for i in range(ndim)])
        grids = np.ix_(*[np.arange(n) for n in shape])
        base = sum(grids[i] * strides[i] for i in range(ndim) if i != 1)
        i0 = (base + x0 * strides[1]).ravel()
        i1 = (base + x1 * strides[1]).ravel()
        gb = np.bincount(
            np.concatenate([i0, i1]),
            weights=np.concatenate([(gm * (1 - fx)).ravel(), (gm * fx).ravel()]),
            minlength=size,
        ).reshape(shape)
        gf = _unbroadcast(gb, fv.shape).reshape(f.shape)
        go = _unbroadcast(gm * (v1 - v0), ov.shape).reshape(o.shape)
        return gf, go

    return _emit("sample_x", out, (f, o), vjp)


def horizontal_shift(field, shift, direction: int = 1, fill: float = 0.0) -> Var:
    """``out(p) = field<p_x + direction * shift, p_y>`` with zero fill.

    ``direction=+1`` moves left-view content into the right view (the
    ``p + [d, 0]`` convention of the discrete reconstruction); ``-1`` undoes it.
    """
    if direction not in (1, -1):
        raise FieldError("direction must be +1 or -1")
    s = as_var(shift)
    return sample_x(field, s * float(direction), fill=fill)
