"""Dense float64 tensors with reverse-mode gradient accumulation.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to one gradient per
parent.  :meth:`Tensor.backward` walks the graph once in reverse
topological order and sums contributions, so a tensor used twice receives
both.
"""

from __future__ import annotations

import builtins
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Callable | None = None, name: str | None = None):
        data = np.asarray(data, dtype=DTYPE)
        # ascontiguousarray would turn 0-d scalars into shape (1,)
        self.data = data if data.flags.c_contiguous else np.ascontiguousarray(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that need gradients, parents first."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form cannot overflow
    out = np.tanh(0.5 * z)
    out *= 0.5
    out += 0.5
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def dropout_mask(shape: tuple[int, ...], rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: entries are 0 or 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=DTYPE)
    keep = rng.random(shape) >= rate
    return keep.astype(DTYPE) / (1.0 - rate)


def apply_mask(x: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a constant (broadcastable) mask; the mask gets no gradient."""
    mask = np.asarray(mask, dtype=DTYPE)
    try:
        np.broadcast_shapes(x.shape, mask.shape)
    except ValueError:
        raise DimensionError(f"mask shape {mask.shape} does not fit {x.shape}") from None
    return _make(x.data * mask, (x,), lambda g: (_unbroadcast(g * mask, x.shape),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, mask_shape=None) -> Tensor:
    if rate == 0.0 or rng is None:
        return x
    return apply_mask(x, dropout_mask(mask_shape or x.shape, rate, rng))


# ---------------------------------------------------------------------------
# shape and indexing


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of zero tensors")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def take(x: Tensor, index) -> Tensor:
    """Numpy-style indexing; repeated indices accumulate in the backward pass."""
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, dtype=DTYPE), (x,), backward)


def gather(table: Tensor, rows) -> Tensor:
    """Embedding-row lookup: ``table[rows]`` for an integer index array."""
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size and (rows.min() < 0 or rows.max() >= table.shape[0]):
        raise IndexError(f"row index out of range for table with {table.shape[0]} rows")
    return take(table, rows)


def max(x: Tensor, axis: int) -> Tensor:  # noqa: A001 - mirrors numpy
    """Max over ``axis``; the gradient flows to the first maximal entry."""
    arg = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _make(out, (x,), backward)


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(out, (x,), backward)


# ---------------------------------------------------------------------------
# products


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., k) and ``b`` of shape (k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make(out, (a, b), backward)


def einsum(subscripts: str, *operands: Tensor) -> Tensor:
    """Differentiable einsum.

    Each operand index must appear in the output or another operand, and no
    operand may repeat an index (no traces).
    """
    operands = tuple(as_tensor(o) for o in operands)
    ins, out_sub = subscripts.replace(" ", "").split("->")
    in_subs = ins.split(",")
    if len(in_subs) != len(operands):
        raise DimensionError(f"einsum {subscripts!r} expects {len(in_subs)} operands, got {len(operands)}")
    try:
        out = np.einsum(subscripts, *(o.data for o in operands), optimize=True)
    except ValueError as exc:
        shapes = ", ".join(str(o.shape) for o in operands)
        raise DimensionError(f"einsum {subscripts!r} on shapes {shapes}: {exc}") from None

    def backward(g):
        grads = []
        for i, sub_i in enumerate(in_subs):
            others = [s for j, s in enumerate(in_subs) if j != i]
            other_data = [o.data for j, o in enumerate(operands) if j != i]
            spec = ",".join([out_sub] + others) + "->" + sub_i
            grads.append(np.einsum(spec, g, *other_data, optimize=True))
        return tuple(grads)

    return _make(out, operands, backward)


def bilinear(h1: Tensor, U: Tensor, h2: Tensor) -> Tensor:
    """``out[k] = sum_pq h1[p] U[p,k,q] h2[q]``."""
    h1, U, h2 = as_tensor(h1), as_tensor(U), as_tensor(h2)
    if (h1.ndim != 1 or h2.ndim != 1 or U.ndim != 3
            or U.shape[0] != h1.shape[0] or U.shape[2] != h2.shape[0]):
        raise DimensionError(f"bilinear: h1 {h1.shape}, U {U.shape}, h2 {h2.shape} are inconsistent")
    return einsum("p,pkq,q->k", h1, U, h2)


def biaffine_grid(h_s: Tensor, U: Tensor, h_e: Tensor) -> Tensor:
    """``out[s, e, k] = h_s[s] . U[:, k, :] . h_e[e]`` for all row pairs; (l, l, c)."""
    if h_s.ndim != 2 or h_e.ndim != 2 or U.ndim != 3 or U.shape[0] != h_s.shape[1] \
            or U.shape[2] != h_e.shape[1] or h_s.shape[0] != h_e.shape[0]:
        raise DimensionError(f"biaffine_grid: h_s {h_s.shape}, U {U.shape}, h_e {h_e.shape} are inconsistent")
    l, d = h_s.shape
    c, d2 = U.shape[1], U.shape[2]
    U2 = U.data.reshape(d, c * d2)
    A = (h_s.data @ U2).reshape(l * c, d2)            # rows (s, k)
    out = (A @ h_e.data.T).reshape(l, c, l).transpose(0, 2, 1)

    def backward(g):
        gT = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(l * c, l)
        dA = (gT @ h_e.data).reshape(l, c * d2)
        return dA @ U2.T, (h_s.data.T @ dA).reshape(U.shape), gT.T @ A

    return _make(out, (h_s, U, h_e), backward)


# ---------------------------------------------------------------------------
# loss


def softmax_cross_entropy(logits: Tensor, gold) -> Tensor:
    """Summed ``-log softmax(logits)[gold]``.

    ``logits`` is a (c,) vector with an integer ``gold``, or an (n, c) matrix
    with an (n,) array of gold indices.  Max-subtraction keeps exp finite.
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    z = logits.data[None, :] if single else logits.data
    if z.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy expects 1-D or 2-D logits, got {logits.shape}")
    gold_idx = np.atleast_1d(np.asarray(gold, dtype=np.int64))
    n, c = z.shape
    if gold_idx.shape != (n,):
        raise DimensionError(f"gold indices shape {gold_idx.shape} does not match {n} rows")
    if gold_idx.size and (gold_idx.min() < 0 or gold_idx.max() >= c):
        raise IndexError(f"gold index out of range for {c} categories")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float((log_norm - shifted[rows, gold_idx]).sum())

    def backward(g):
        p = np.exp(shifted - log_norm[:, None])
        p[rows, gold_idx] -= 1.0
        p *= g
        return (p[0] if single else p,)

    return _make(np.array(loss), (logits,), backward)


# ---------------------------------------------------------------------------
# fused recurrent layer


def lstm(x: Tensor, Wx: Tensor, Wh: Tensor, b: Tensor, reverse: bool = False,
         lengths: Sequence[int] | None = None) -> Tensor:
    """One LSTM direction over packed sequences; returns (N, H) hidden states.

    ``x`` is (N, D): the rows of one or more sequences laid end to end, with
    ``lengths`` giving each sequence's row count (default: one sequence).
    Every sequence starts from zero hidden and cell states and only sees its
    own rows.  Gates are packed as [input, forget, output, candidate] along
    the last axis of ``Wx`` (D, 4H), ``Wh`` (H, 4H) and ``b`` (4H,).  With
    ``reverse`` each sequence is read from its last row, outputs staying
    aligned with input rows.
    """
    if x.ndim != 2 or Wx.ndim != 2 or Wx.shape[0] != x.shape[1] or Wx.shape[1] % 4:
        raise DimensionError(f"lstm: input {x.shape} and Wx {Wx.shape} are not aligned")
    N = x.shape[0]
    H = Wx.shape[1] // 4
    if Wh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise DimensionError(f"lstm: Wh {Wh.shape} / b {b.shape} inconsistent with hidden size {H}")
    lengths = np.array([N] if lengths is None else lengths, dtype=np.int64)
    if N == 0 or lengths.min() < 1 or lengths.sum() != N:
        raise DimensionError(f"lstm: sequence lengths {lengths.tolist()} do not partition {N} rows")
    # Time-major packing: sequences sorted by decreasing length, so the rows
    # processed at step t are one contiguous block and the active sequences
    # are a prefix of the state matrices.
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    by_len = np.argsort(-lengths, kind="stable")
    steps = int(lengths.max())
    active = np.array([int((lengths > t).sum()) for t in range(steps)])
    bounds = np.concatenate([[0], np.cumsum(active)])
    perm = np.empty(N, dtype=np.int64)       # packed row -> original row
    for t in range(steps):
        seqs = by_len[:active[t]]
        pos = lengths[seqs] - 1 - t if reverse else t
        perm[bounds[t]:bounds[t + 1]] = offsets[seqs] + pos

    Z = (x.data @ Wx.data + b.data)[perm]
    Whd = Wh.data
    acts = np.empty((N, 4 * H))
    cells = np.empty((N, H))
    hs = np.empty((N, H))
    h = np.zeros((active[0], H))
    c = np.zeros((active[0], H))
    for t in range(steps):
        lo, hi, n = bounds[t], bounds[t + 1], active[t]
        a = acts[lo:hi]
        np.add(Z[lo:hi], h[:n] @ Whd, out=a)
        a[:, :3 * H] = _sigmoid(a[:, :3 * H])
        np.tanh(a[:, 3 * H:], out=a[:, 3 * H:])
        c = a[:, H:2 * H] * c[:n] + a[:, :H] * a[:, 3 * H:]
        h = a[:, 2 * H:3 * H] * np.tanh(c)
        cells[lo:hi] = c
        hs[lo:hi] = h
    out = np.empty((N, H))
    out[perm] = hs

    def backward(G):
        G = G[perm]
        dZ = np.empty((N, 4 * H))
        dh_next = np.zeros((active[0], H))
        dc_next = np.zeros((active[0], H))
        WhT = Whd.T
        for t in range(steps - 1, -1, -1):
            lo, hi, n = bounds[t], bounds[t + 1], active[t]
            a = acts[lo:hi]
            i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            tc = np.tanh(cells[lo:hi])
            dh = G[lo:hi] + dh_next[:n]
            dc = dh * o * (1.0 - tc * tc) + dc_next[:n]
            c_prev = cells[bounds[t - 1]:bounds[t - 1] + n] if t else 0.0
            dz = dZ[lo:hi]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
            dz[:, 3 * H:] = dc * i * (1.0 - g * g)
            dc_next[:n] = dc * f
            dh_next[:n] = dz @ WhT
        # hidden state entering each packed row = output of the same sequence one step earlier
        h_prev = np.zeros((N, H))
        for t in range(1, steps):
            n = active[t]
            h_prev[bounds[t]:bounds[t] + n] = hs[bounds[t - 1]:bounds[t - 1] + n]
        dZ_rows = np.empty((N, 4 * H))
        dZ_rows[perm] = dZ
        return dZ_rows @ Wx.data.T, x.data.T @ dZ_rows, h_prev.T @ dZ, dZ.sum(axis=0)

    return _make(out, (x, Wx, Wh, b), backward)


# ---------------------------------------------------------------------------
# finite differences


def numerical_gradient(f: Callable[[], float], array: np.ndarray, eps: float = 1e-5,
                       entries: Iterable[tuple[int, ...]] | None = None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``array`` (perturbed in place).

    Entries not listed in ``entries`` are left as NaN.
    """
    grad = np.full(array.shape, np.nan) if entries is not None else np.zeros(array.shape)
    it = entries if entries is not None else np.ndindex(*array.shape)
    for idx in it:
        orig = array[idx]
        array[idx] = orig + eps
        up = f()
        array[idx] = orig - eps
        down = f()
        array[idx] = orig
        grad[idx] = (up - down) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a|| + ||n||, 1e-12)`` over entries that were checked."""
    keep = ~np.isnan(numeric)
    a = np.asarray(analytic)[keep]
    n = numeric[keep]
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    return float(np.linalg.norm(a - n) / builtins.max(denom, 1e-12))
