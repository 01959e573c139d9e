"""Dense reverse-mode automatic differentiation on float64 numpy arrays.

The engine is define-by-run: every differentiable op executed while a
:class:`Tape` is active appends a record (output, parents, backward closure)
to that tape, and :meth:`Tape.backward` replays the records in exact reverse
order.  Only the handful of ops the segment-fusion network needs are
provided; broadcasting is limited to what numpy does for elementwise ops.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# Non-finite op outputs raise when set.
DEBUG_FINITE = True

_ACTIVE: list["Tape"] = []


class ShapeError(ValueError):
    pass


class Tensor:
    """A float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "node")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        # extended precision passes through so finite-difference oracles can use it
        self.data = arr if arr.dtype == np.longdouble else arr.astype(np.float64, copy=False)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: int | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    @property
    def T(self):
        return transpose(self)


@dataclass
class _Record:
    out: Tensor
    parents: tuple
    backward: Callable
    name: str


class Tape:
    """Ordered record of operations; use as a context manager.

    Nodes are appended in execution order, so parents always precede
    children and a single reverse sweep visits them topologically.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.kinks: list[np.ndarray] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out: Tensor, parents: tuple, backward: Callable, name: str):
        out.node = len(self.records)
        self.records.append(_Record(out, parents, backward, name))

    def kink_signature(self) -> list[np.ndarray]:
        """Activation patterns of every non-smooth op evaluated on this tape."""
        return self.kinks

    def backward(self, loss: Tensor):
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar output, got shape {loss.shape}")
        if loss.node is None or loss.node >= len(self.records) or self.records[loss.node].out is not loss:
            raise ValueError("loss was not recorded on this tape")
        loss.grad = np.ones_like(loss.data)
        for rec in reversed(self.records[: loss.node + 1]):
            g = rec.out.grad
            if g is None:
                continue
            for parent, pg in zip(rec.parents, rec.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.shape)
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=np.float64, copy=True)
                else:
                    parent.grad = parent.grad + pg


def _tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data: np.ndarray, parents: tuple, backward: Callable, name: str) -> Tensor:
    if DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite output from {name}")
    out = Tensor(data)
    tape = _tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, backward, name)
    return out


def _note_kink(pattern: np.ndarray):
    tape = _tape()
    if tape is not None:
        tape.kinks.append(pattern)


def _broadcast_check(a: Tensor, b: Tensor, name: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "div")
    ad, bd = a.data, b.data
    return _make(ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)), "div")


def scalar_mul(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scalar_mul")


def elementwise_mask_mul(x, mask) -> Tensor:
    """Multiply by a constant mask; masked-out entries receive zero gradient."""
    x = as_tensor(x)
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if m.shape != x.shape:
        raise ShapeError(f"elementwise_mask_mul: incompatible shapes {x.shape} and {m.shape}")
    return _make(x.data * m, (x,), lambda g: (g * m,), "elementwise_mask_mul")


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2.0 * xd * g,), "square")


def relu(x) -> Tensor:
    x = as_tensor(x)
    on = x.data > 0
    _note_kink(on)
    return _make(np.where(on, x.data, 0.0), (x,), lambda g: (g * on,), "relu")


def hinge(x) -> Tensor:
    """max(0, x) with subgradient 0 at the kink."""
    x = as_tensor(x)
    on = x.data > 0
    _note_kink(on)
    return _make(np.where(on, x.data, 0.0), (x,), lambda g: (g * on,), "hinge")


def abs_l1(x, axis=None, keepdims: bool = False) -> Tensor:
    """Sum of absolute values along ``axis`` (all entries when None)."""
    x = as_tensor(x)
    sgn = np.sign(x.data)
    _note_kink(sgn)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (g * sgn,)

    return _make(np.abs(x.data).sum(axis=axis, keepdims=keepdims), (x,), back, "abs_l1")


def row_l2(x) -> Tensor:
    """Euclidean norm of each row of a 2-D tensor; gradient 0 at the origin."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"row_l2: expected 2-D input, got {x.shape}")
    nrm = np.sqrt((x.data ** 2).sum(axis=1))
    nz = nrm > 0
    _note_kink(nz)
    safe = np.where(nz, nrm, 1.0)

    def back(g):
        return ((g / safe * nz)[:, None] * x.data,)

    return _make(nrm, (x,), back, "row_l2")


# ---------------------------------------------------------------- reductions

def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), back, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    if n == 0:
        raise ShapeError(f"mean over an empty axis of shape {x.shape}")
    return scalar_mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D input, got {x.shape}")
    return _make(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


def gather_rows(x, idx) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), back, "gather_rows")


def concat_cols(xs: Sequence) -> Tensor:
    xs = tuple(as_tensor(x) for x in xs)
    rows = {x.shape[0] for x in xs}
    if len(rows) != 1 or any(x.data.ndim != 2 for x in xs):
        raise ShapeError(f"concat_cols: incompatible shapes {[x.shape for x in xs]}")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return _make(np.concatenate([x.data for x in xs], axis=1), xs, back, "concat_cols")


def slice_cols(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _make(x.data[:, start:stop].copy(), (x,), back, "slice_cols")


# ---------------------------------------------------------------- normalisation

def row_softmax(x) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)
    return _make(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),), "row_softmax")


def masked_row_softmax(x, mask) -> Tensor:
    """Row softmax multiplied by a 0/1 mask and renormalised per row.

    This equals a softmax restricted to the unmasked entries, so the backward
    pass uses that closed form.  Masked entries get exactly zero output and
    exactly zero gradient.  Every row needs at least one unmasked entry.
    """
    x = as_tensor(x)
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != x.shape:
        raise ShapeError(f"masked_row_softmax: incompatible shapes {x.shape} and {m.shape}")
    keep = m > 0
    if not keep.any(axis=-1).all():
        raise ValueError("masked_row_softmax: a row has no unmasked entries")
    top = np.where(keep, x.data, -np.inf).max(axis=-1, keepdims=True)
    e = np.exp(np.where(keep, x.data - top, -np.inf)) * m
    y = e / e.sum(axis=-1, keepdims=True)
    return _make(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),), "masked_row_softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise each row to zero mean / unit variance, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.data.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"layer_norm: incompatible shapes {x.shape}, {gamma.shape}, {beta.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(x.data.var(axis=1, keepdims=True) + eps)
    xhat = (x.data - mu) * inv
    gd = gamma.data

    def back(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make(xhat * gd + beta.data, (x, gamma, beta), back, "layer_norm")


# ---------------------------------------------------------------- checking

def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-6, fd_dtype=np.float64) -> float:
    """Compare tape gradients of scalar ``f`` at ``x`` with central differences.

    Returns the max over coordinates of ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``.
    A coordinate is skipped when a +/-eps perturbation flips the activation
    pattern of any hinge, relu, abs or norm evaluated inside ``f`` (that is,
    the coordinate sits within eps of a kink).  ``fd_dtype=np.longdouble``
    evaluates the difference quotients in extended precision, which keeps
    round-off below the 1e-8 floor where the true gradient is exactly zero.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    def run(values, need_grad):
        t = Tensor(values.copy() if need_grad else values.astype(fd_dtype), requires_grad=True)
        with Tape() as tape:
            out = f(t)
        if out.data.size != 1:
            raise ShapeError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
        if need_grad:
            tape.backward(out)
        return out.data.reshape(()), t.grad, tape.kink_signature()

    _, g_ad, base_kinks = run(x0, True)
    g_ad = np.zeros_like(x0) if g_ad is None else g_ad

    worst = 0.0
    flat = x0.reshape(-1).astype(fd_dtype)
    for i in range(flat.size):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += eps
        minus[i] -= eps
        fp, _, kp = run(plus.reshape(x0.shape), False)
        fm, _, km = run(minus.reshape(x0.shape), False)
        if not (_same_pattern(kp, base_kinks) and _same_pattern(km, base_kinks)):
            continue
        g_fd = float((fp - fm) / (2 * fd_dtype(eps)))
        ga = g_ad.reshape(-1)[i]
        err = abs(ga - g_fd) / max(1e-8, abs(ga) + abs(g_fd))
        worst = max(worst, err)
    return worst


def grad_check_params(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6,
                      fd_dtype=np.float64) -> float:
    """Like :func:`grad_check`, but over every entry of every tensor in ``params``.

    ``loss_fn`` takes no arguments and reads the parameters it closes over;
    they are perturbed in place and restored afterwards.
    """
    def run(need_grad):
        with Tape() as tape:
            out = loss_fn()
        if out.data.size != 1:
            raise ShapeError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
        if need_grad:
            tape.backward(out)
        return out.data.reshape(()), tape.kink_signature()

    for p in params:
        p.grad = None
    _, base_kinks = run(True)
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
    saved = [p.data for p in params]
    for p in params:
        p.data = p.data.astype(fd_dtype)
    h = fd_dtype(eps)
    worst = 0.0
    try:
        for p, g_ad in zip(params, grads):
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                fp, kp = run(False)
                flat[i] = old - h
                fm, km = run(False)
                flat[i] = old
                if not (_same_pattern(kp, base_kinks) and _same_pattern(km, base_kinks)):
                    continue
                g_fd = float((fp - fm) / (2 * h))
                ga = g_ad.reshape(-1)[i]
                worst = max(worst, abs(ga - g_fd) / max(1e-8, abs(ga) + abs(g_fd)))
    finally:
        for p, d in zip(params, saved):
            p.data = d
            p.grad = None
    return worst


def _same_pattern(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(p, q) for p, q in zip(a, b))


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0


def adam_step(params: Sequence[Tensor], grads: Sequence, state: AdamState | None = None,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if state is None:
        state = AdamState()
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for k, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} vs parameter {p.shape}")
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        p.data = p.data - lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + eps)
    return state


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"SFCK\x01"


def save_checkpoint(path, params: dict[str, Tensor]):
    chunks = [CHECKPOINT_MAGIC, struct.pack("<Q", len(params))]
    for name, p in params.items():
        raw = name.encode("utf-8")
        arr = np.asarray(p.data if isinstance(p, Tensor) else p, dtype="<f8")  # ascontiguousarray promotes 0-d to 1-d
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if not buf.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    pos = len(CHECKPOINT_MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, buf, pos)
        pos += struct.calcsize(fmt)
        return vals

    try:
        (count,) = take("<Q")
        out = {}
        for _ in range(count):
            (n,) = take("<I")
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = take("<I")
            dims = take(f"<{rank}Q")
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(dims)
            pos += 8 * size
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise ValueError(f"{path}: truncated or corrupt checkpoint") from exc
    if pos != len(buf):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return out
