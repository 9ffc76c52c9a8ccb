"""Minimal reverse-mode autodiff over dense float64 arrays.

The graph is define-by-run: every operation links its output tensor to its
inputs and a backward closure; ``Tensor.backward`` walks the recorded tape
in reverse topological order exactly once.  Gradients on leaf tensors
accumulate across backward calls; use :func:`zero_grads` between steps.

Only the shapes this model needs are supported: vectors, matrices, and
vector/matrix products.  No broadcasting beyond the few explicit fused ops.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (used for decoding)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar used by tests and the training loop.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Populate ``grad`` on every reachable requires_grad tensor.

        The loss must be scalar.  Repeated calls on fresh graphs accumulate
        into leaf gradients.
        """
        if self.data.shape != ():
            raise ValueError(
                f"backward expects a scalar loss, got shape {self.data.shape}"
            )
        topo = _toposort(self)
        for t in topo:
            if t._backward is not None:
                t.grad = np.zeros_like(t.data)
            elif t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)
        if self._backward is None:
            # A bare leaf scalar: nothing upstream of it.
            if self.requires_grad:
                self.grad = self.grad + 1.0
            return
        self.grad = np.ones_like(self.data)
        for t in reversed(topo):
            if t._backward is not None:
                t._backward()


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = None  # allocated lazily by backward()
        out._parents = tuple(parents)
        out._backward = backward(out)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is not None:
        t.grad += g


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        if t.requires_grad:
            t.grad = np.zeros_like(t.data)


# ---------------------------------------------------------------------------
# Elementwise and reduction ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")

    def bw(out):
        def run():
            _accum(a, out.grad)
            _accum(b, out.grad)

        return run

    return _make(a.data + b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")

    def bw(out):
        def run():
            _accum(a, out.grad * b.data)
            _accum(b, out.grad * a.data)

        return run

    return _make(a.data * b.data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bw(out):
        def run():
            _accum(a, out.grad * s)

        return run

    return _make(a.data * s, (a,), bw)


def tensor_sum(a: Tensor) -> Tensor:
    def bw(out):
        def run():
            _accum(a, np.full_like(a.data, float(out.grad)))

        return run

    return _make(np.asarray(a.data.sum()), (a,), bw)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bw(out):
        def run():
            _accum(a, out.grad * (1.0 - y * y))

        return run

    return _make(y, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    y = np.empty_like(a.data)
    pos = a.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    y[~pos] = ex / (1.0 + ex)

    def bw(out):
        def run():
            _accum(a, out.grad * y * (1.0 - y))

        return run

    return _make(y, (a,), bw)


# ---------------------------------------------------------------------------
# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix/vector product for the (2d,2d), (2d,1d) and (1d,2d) cases."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ValueError(f"matmul shape mismatch: {ad.shape} vs {bd.shape}")

        def bw(out):
            def run():
                _accum(a, out.grad @ bd.T)
                _accum(b, ad.T @ out.grad)

            return run

    elif ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise ValueError(f"matmul shape mismatch: {ad.shape} vs {bd.shape}")

        def bw(out):
            def run():
                _accum(a, np.outer(out.grad, bd))
                _accum(b, ad.T @ out.grad)

            return run

    elif ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise ValueError(f"matmul shape mismatch: {ad.shape} vs {bd.shape}")

        def bw(out):
            def run():
                _accum(a, bd @ out.grad)
                _accum(b, np.outer(ad, out.grad))

            return run

    else:
        raise ValueError(f"matmul unsupported ranks: {ad.shape} vs {bd.shape}")

    return _make(ad @ bd, (a, b), bw)


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ValueError(f"dot shape mismatch: {a.data.shape} vs {b.data.shape}")

    def bw(out):
        def run():
            _accum(a, out.grad * b.data)
            _accum(b, out.grad * a.data)

        return run

    return _make(np.asarray(a.data @ b.data), (a, b), bw)


# ---------------------------------------------------------------------------
# Shape ops


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the leading axis (entries for vectors, rows for
    matrices); backward splits the gradient at the same offsets."""
    if not parts:
        raise ValueError("concat_rows of an empty list")
    ndim = parts[0].data.ndim
    for p in parts:
        if p.data.ndim != ndim or p.data.shape[1:] != parts[0].data.shape[1:]:
            raise ValueError(
                "concat_rows incompatible shapes: "
                + ", ".join(str(p.data.shape) for p in parts)
            )
    sizes = [p.data.shape[0] for p in parts]

    def bw(out):
        def run():
            off = 0
            for p, sz in zip(parts, sizes):
                _accum(p, out.grad[off : off + sz])
                off += sz

        return run

    return _make(np.concatenate([p.data for p in parts], axis=0), parts, bw)


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors into a matrix, one row per part."""
    if not parts:
        raise ValueError("stack_rows of an empty list")
    for p in parts:
        if p.data.ndim != 1 or p.data.shape != parts[0].data.shape:
            raise ValueError(
                "stack_rows incompatible shapes: "
                + ", ".join(str(p.data.shape) for p in parts)
            )

    def bw(out):
        def run():
            for i, p in enumerate(parts):
                _accum(p, out.grad[i])

        return run

    return _make(np.stack([p.data for p in parts], axis=0), parts, bw)


def slice_vec(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 1:
        raise ValueError(f"slice_vec expects a vector, got shape {a.data.shape}")

    def bw(out):
        def run():
            if a.grad is not None:
                a.grad[start:stop] += out.grad

        return run

    return _make(a.data[start:stop].copy(), (a,), bw)


def broadcast_concat(rows: Tensor, h: Tensor, e: Tensor) -> Tensor:
    """Per-row concatenation [rows_i ; h ; e] with h and e broadcast.

    rows: (N, d) -> output (N, d + |h| + |e|).  Backward sums the broadcast
    blocks back into h and e.
    """
    if rows.data.ndim != 2 or h.data.ndim != 1 or e.data.ndim != 1:
        raise ValueError(
            f"broadcast_concat expects (matrix, vector, vector), got "
            f"{rows.data.shape}, {h.data.shape}, {e.data.shape}"
        )
    n, d = rows.data.shape
    nh, ne = h.data.shape[0], e.data.shape[0]
    out_data = np.empty((n, d + nh + ne))
    out_data[:, :d] = rows.data
    out_data[:, d : d + nh] = h.data
    out_data[:, d + nh :] = e.data

    def bw(out):
        def run():
            _accum(rows, out.grad[:, :d])
            _accum(h, out.grad[:, d : d + nh].sum(axis=0))
            _accum(e, out.grad[:, d + nh :].sum(axis=0))

        return run

    return _make(out_data, (rows, h, e), bw)


def embedding_lookup(table: Tensor, index: int) -> Tensor:
    if table.data.ndim != 2:
        raise ValueError(f"embedding table must be 2-d, got {table.data.shape}")
    if not 0 <= index < table.data.shape[0]:
        raise IndexError(
            f"embedding index {index} out of range for table of {table.data.shape[0]}"
        )

    def bw(out):
        def run():
            if table.grad is not None:
                table.grad[index] += out.grad

        return run

    return _make(table.data[index].copy(), (table,), bw)


# ---------------------------------------------------------------------------
# Probability ops


def softmax(v: Tensor) -> Tensor:
    """Stable softmax over a vector (max-subtraction)."""
    if v.data.ndim != 1:
        raise ValueError(f"softmax expects a vector, got shape {v.data.shape}")
    if v.data.size == 0:
        raise ValueError("softmax of an empty vector")
    shifted = v.data - v.data.max()
    ex = np.exp(shifted)
    y = ex / ex.sum()
    # Keep the output strictly positive even when an entry underflows;
    # the floor is far below the sum-to-one tolerance.
    y = np.maximum(y, np.finfo(np.float64).tiny)

    def bw(out):
        def run():
            _accum(v, y * (out.grad - float(out.grad @ y)))

        return run

    return _make(y, (v,), bw)


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """Negative log-likelihood of ``target`` under softmax(logits).

    Takes unnormalized scores: the log-softmax is fused for stability, and
    the backward rule is softmax(logits) minus the target one-hot.
    """
    if logits.data.ndim != 1:
        raise ValueError(f"cross_entropy expects a logit vector, got {logits.data.shape}")
    n = logits.data.shape[0]
    if not 0 <= target < n:
        raise IndexError(f"target index {target} out of range for {n} classes")
    m = logits.data.max()
    ex = np.exp(logits.data - m)
    z = ex.sum()
    probs = ex / z
    loss = np.log(z) + m - logits.data[target]

    def bw(out):
        def run():
            d = probs.copy()
            d[target] -= 1.0
            _accum(logits, d * float(out.grad))

        return run

    return _make(np.asarray(loss), (logits,), bw)


# ---------------------------------------------------------------------------
# Fused recurrent cell


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor, b: Tensor):
    """Fused LSTM cell; returns (h_new, c_new).

    Dispatches to the compiled kernel lane when available.  The two outputs
    are views into one tape node so the shared backward runs exactly once.
    """
    hidden = h.data.shape[0]
    if wx.data.shape != (x.data.shape[0], 4 * hidden) or wh.data.shape != (
        hidden,
        4 * hidden,
    ):
        raise ValueError(
            f"lstm_cell shape mismatch: x {x.data.shape}, h {h.data.shape}, "
            f"wx {wx.data.shape}, wh {wh.data.shape}"
        )
    h_new, c_new, cache = kernels.lstm_cell_forward(
        np.ascontiguousarray(x.data),
        np.ascontiguousarray(h.data),
        np.ascontiguousarray(c.data),
        np.ascontiguousarray(wx.data),
        np.ascontiguousarray(wh.data),
        np.ascontiguousarray(b.data),
    )

    def bw(out):
        def run():
            dh = out.grad[:hidden]
            dc = out.grad[hidden:]
            dx, dhp, dcp, dwx, dwh, db = kernels.lstm_cell_backward(
                np.ascontiguousarray(dh),
                np.ascontiguousarray(dc),
                cache,
                np.ascontiguousarray(x.data),
                np.ascontiguousarray(h.data),
                np.ascontiguousarray(c.data),
                np.ascontiguousarray(wx.data),
                np.ascontiguousarray(wh.data),
            )
            _accum(x, dx)
            _accum(h, dhp)
            _accum(c, dcp)
            _accum(wx, dwx)
            _accum(wh, dwh)
            _accum(b, db)

        return run

    pair = _make(np.concatenate([h_new, c_new]), (x, h, c, wx, wh, b), bw)
    return slice_vec(pair, 0, hidden), slice_vec(pair, hidden, 2 * hidden)
