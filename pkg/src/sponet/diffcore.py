"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Only the handful of operations the processors and the loss need are
provided. Operations executed inside an active :class:`Tape` on inputs
that require gradients are recorded; :meth:`Tape.backward` replays the
records in reverse and accumulates into the ``grad`` of leaf tensors.

Node-feature tensors use the layout ``(batch, nodes, channels)``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .sparse import CsrMatrix

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple, Callable]] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor, retain: bool = False) -> None:
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise RuntimeError("loss was not produced on this tape; run the forward pass under it first")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for t, gi in zip(inputs, fn(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t._tape is None:
                    t.grad = np.array(gi, dtype=np.float64) if t.grad is None else t.grad + gi
                else:
                    k = id(t)
                    grads[k] = grads[k] + gi if k in grads else gi
        if not retain:
            self.records.clear()


def backward(loss: Tensor) -> None:
    if loss._tape is None:
        raise RuntimeError("backward called before any recorded forward pass")
    loss._tape.backward(loss)


def no_tape_active() -> bool:
    return not _ACTIVE


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, inputs: Sequence[Tensor], fn: Callable) -> Tensor:
    tape = _ACTIVE[-1] if _ACTIVE else None
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)
        out._tape = tape
        tape.records.append((out, tuple(inputs), fn))
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise -----------------------------------------------------------------


def add(x, y) -> Tensor:
    x, y = _as_tensor(x), _as_tensor(y)
    return _record(
        x.data + y.data, (x, y),
        lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)),
    )


def sub(x, y) -> Tensor:
    x, y = _as_tensor(x), _as_tensor(y)
    return _record(
        x.data - y.data, (x, y),
        lambda g: (_unbroadcast(g, x.shape), -_unbroadcast(g, y.shape)),
    )


def mul(x, y) -> Tensor:
    x, y = _as_tensor(x), _as_tensor(y)
    return _record(
        x.data * y.data, (x, y),
        lambda g: (_unbroadcast(g * y.data, x.shape), _unbroadcast(g * x.data, y.shape)),
    )


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return _record(x.data * s, (x,), lambda g: (g * s,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _record(out, (x,), lambda g: (g * 0.5 / out,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    s = np.negative(x)
    with np.errstate(over="ignore"):
        np.exp(s, out=s)
    s += 1.0
    return np.reciprocal(s, out=s)


def swish(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = x.data * s

    def fn(g):
        # d/dx x*s(x) = s + x*s*(1-s) = s + out - out*s
        d = out * s
        np.subtract(out, d, out=d)
        d += s
        d *= g
        return (d,)

    return _record(out, (x,), fn)


def affine_combine(a: Tensor, x, b: Tensor, y, c: Tensor) -> Tensor:
    """``a * x + b * y + c`` with scalar tensors ``a``, ``b``, ``c``."""
    x, y = _as_tensor(x), _as_tensor(y)
    av, bv, cv = a.data.reshape(()), b.data.reshape(()), c.data.reshape(())
    out = av * x.data + bv * y.data + cv

    def fn(g):
        return (
            np.reshape(np.sum(g * x.data), a.shape),
            g * av,
            np.reshape(np.sum(g * y.data), b.shape),
            g * bv,
            np.reshape(np.sum(g), c.shape),
        )

    return _record(out, (a, x, b, y, c), fn)


def reduce_sum(x: Tensor, axis=None) -> Tensor:
    out = np.sum(x.data, axis=axis)

    def fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(out, (x,), fn)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return scale(reduce_sum(x, axis), 1.0 / n)


# linear algebra ----------------------------------------------------------------


def matmul(x: Tensor, w: Tensor) -> Tensor:
    """Contract the trailing axis of ``x`` with ``w`` of shape ``(k, m)``."""
    return linear(x, w, None)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the trailing (channel) axis."""
    k, m = w.shape
    if x.shape[-1] != k:
        raise ValueError(f"shape mismatch: input has {x.shape[-1]} channels, weight expects {k}")
    x2 = x.data.reshape(-1, k)
    out = x2 @ w.data
    if b is not None:
        out += b.data
    lead = x.shape[:-1]

    def fn(g):
        g2 = g.reshape(-1, m)
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out.reshape(lead + (m,)), inputs, fn)


def lmatmul(w: Tensor, x: Tensor) -> Tensor:
    """Dense product over the node axis: ``(m, n) x (batch, n, c) -> (batch, m, c)``."""
    m, n = w.shape
    if x.ndim != 3 or x.shape[1] != n:
        raise ValueError(f"shape mismatch: weight {w.shape} against input {x.shape}")
    bsz, _, c = x.shape
    xs = x.data.transpose(1, 0, 2).reshape(n, bsz * c)
    out = (w.data @ xs).reshape(m, bsz, c).transpose(1, 0, 2)

    def fn(g):
        gs = g.transpose(1, 0, 2).reshape(m, bsz * c)
        gw = gs @ xs.T if w.requires_grad else None
        gx = (w.data.T @ gs).reshape(n, bsz, c).transpose(1, 0, 2) if x.requires_grad else None
        return gw, gx

    return _record(np.ascontiguousarray(out), (w, x), fn)


def sparse_matvec(a: CsrMatrix, x: Tensor) -> Tensor:
    """Sparse product over the node axis; the matrix is a constant."""
    if x.ndim != 3:
        raise ValueError(f"expected (batch, nodes, channels), got {x.shape}")
    out = a.apply_batched(x.data)
    return _record(out, (x,), lambda g: (a.T.apply_batched(g),))


def quad_form(x: Tensor, a: CsrMatrix) -> Tensor:
    """Per-sample ``sum_c x[b,:,c]^T A x[b,:,c]``, shape ``(batch,)``."""
    ax = a.apply_batched(x.data)
    out = np.einsum("bnc,bnc->b", x.data, ax)

    def fn(g):
        sym = ax + a.T.apply_batched(x.data)
        return (g[:, None, None] * sym,)

    return _record(out, (x,), fn)


MLP_CHUNK = 2048


def _sigmoid_inplace(z: np.ndarray) -> np.ndarray:
    np.negative(z, out=z)
    with np.errstate(over="ignore"):
        np.exp(z, out=z)
    z += 1.0
    return np.reciprocal(z, out=z)


def mlp(x: Tensor, weights: Sequence[Tensor], biases: Sequence[Tensor]) -> Tensor:
    """Chain of ``linear`` layers with ``swish`` between them, no activation
    after the last layer.

    Same values and gradients as composing :func:`linear` and
    :func:`swish`, but rows are processed in cache-sized chunks, which
    matters for per-edge MLPs.
    """
    depth = len(weights)
    k = weights[0].shape[0]
    if x.shape[-1] != k:
        raise ValueError(f"shape mismatch: input has {x.shape[-1]} channels, first layer expects {k}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, k)
    rows = x2.shape[0]
    ws = [w.data for w in weights]
    bs = [b.data for b in biases]
    acts = [x2] + [np.empty((rows, w.shape[1])) for w in ws[:-1]]
    ders = [np.empty((rows, w.shape[1])) for w in ws[:-1]]
    out = np.empty((rows, ws[-1].shape[1]))
    for start in range(0, rows, MLP_CHUNK):
        sl = slice(start, start + MLP_CHUNK)
        h = x2[sl]
        for l in range(depth):
            z = h @ ws[l]
            z += bs[l]
            if l == depth - 1:
                out[sl] = z
                break
            s = _sigmoid_inplace(z.copy())
            y = acts[l + 1][sl]
            np.multiply(z, s, out=y)
            d = ders[l][sl]
            np.multiply(y, s, out=d)
            np.subtract(y, d, out=d)
            d += s
            h = y

    def fn(g):
        g2 = g.reshape(rows, -1)
        gw = [np.zeros_like(w) for w in ws]
        gb = [np.zeros_like(b) for b in bs]
        gx = np.empty_like(x2) if x.requires_grad else None
        for start in range(0, rows, MLP_CHUNK):
            sl = slice(start, start + MLP_CHUNK)
            gz = g2[sl]
            for l in range(depth - 1, -1, -1):
                gw[l] += acts[l][sl].T @ gz
                gb[l] += gz.sum(axis=0)
                if l == 0 and gx is None:
                    break
                gh = gz @ ws[l].T
                if l > 0:
                    gh *= ders[l - 1][sl]
                gz = gh
            if gx is not None:
                gx[sl] = gz
        return (None if gx is None else gx.reshape(x.shape), *gw, *gb)

    return _record(out.reshape(lead + (ws[-1].shape[1],)), (x, *weights, *biases), fn)


# graph ops -----------------------------------------------------------------------


def segment_sum(values: np.ndarray, index: np.ndarray, num_nodes: int) -> np.ndarray:
    """Sum ``(batch, E, c)`` edge values into ``(batch, num_nodes, c)``."""
    bsz, _, c = values.shape
    flat_index = (index[None, :] + num_nodes * np.arange(bsz)[:, None]).ravel()
    out = np.empty((bsz, num_nodes, c))
    for ch in range(c):
        out[:, :, ch] = np.bincount(
            flat_index, weights=values[:, :, ch].ravel(), minlength=bsz * num_nodes
        ).reshape(bsz, num_nodes)
    return out


def gather(x: Tensor, index: np.ndarray) -> Tensor:
    """Select node rows: ``(batch, n, c) -> (batch, len(index), c)``."""
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[1]
    return _record(x.data[:, index, :], (x,), lambda g: (segment_sum(g, index, n),))


def scatter_mean(values: Tensor, index: np.ndarray, num_nodes: int) -> Tensor:
    """Average edge values per receiving node; nodes without edges get 0."""
    index = np.asarray(index, dtype=np.int64)
    deg = np.bincount(index, minlength=num_nodes).astype(np.float64)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    out = segment_sum(values.data, index, num_nodes) * inv[None, :, None]
    return _record(out, (values,), lambda g: ((g * inv[None, :, None])[:, index, :],))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return _record(
        np.concatenate([x.data for x in xs], axis=axis), tuple(xs),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def overwrite(x: Tensor, index: np.ndarray, values: np.ndarray) -> Tensor:
    """Replace node rows ``index`` with fixed ``values``; no gradient flows
    through the replaced entries."""
    index = np.asarray(index, dtype=np.int64)
    out = x.data.copy()
    out[:, index, :] = np.asarray(values, dtype=np.float64).reshape(1, -1, 1)

    def fn(g):
        g = g.copy()
        g[:, index, :] = 0.0
        return (g,)

    return _record(out, (x,), fn)


# gradient checking -------------------------------------------------------------------


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    n_coords: int = 20,
    h: float = 1e-6,
    seed: int = 0,
):
    """Compare tape gradients against central finite differences.

    Coordinates are drawn so every tensor contributes at least one. The
    per-coordinate error is ``|a - n| / max(|a|, |n|, floor)`` with
    ``floor = 1e-3 * max|n|`` to keep vanishing components from
    dominating. Returns ``(max_error, analytic, numeric)``.
    """
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    rng = np.random.default_rng(seed)
    per = max(1, -(-n_coords // len(params)))
    analytic, numeric = [], []
    for p in params:
        grad = np.zeros_like(p.data) if p.grad is None else p.grad
        for i in rng.choice(p.size, size=min(per, p.size), replace=False):
            v = p.data.flat[i]
            p.data.flat[i] = v + h
            fp = loss_fn().item()
            p.data.flat[i] = v - h
            fm = loss_fn().item()
            p.data.flat[i] = v
            analytic.append(grad.flat[i])
            numeric.append((fp - fm) / (2 * h))
    analytic, numeric = np.array(analytic), np.array(numeric)
    floor = max(1e-3 * np.max(np.abs(numeric)), 1e-300)
    err = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(err.max()), analytic, numeric
