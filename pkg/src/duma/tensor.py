"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: row-major numpy storage, no broadcasting
beyond what the model ops need, and one backward rule per op. Gradients
accumulate into ``Tensor.grad`` until explicitly zeroed, so calling
``backward`` twice on the same graph doubles them.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph construction (pure forward)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """A dense float64 array plus its position in the autodiff graph.

    Leaves are created directly; interior nodes are created by ops and
    carry the parent references and the backward rule needed to push a
    gradient one step toward the leaves.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            # ascontiguousarray would promote 0-d to 1-d, so guard it
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


def _make(data, parents, backward, op: str) -> Tensor:
    """Wrap an op result, recording the graph edge only when it can matter."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


# ---------------------------------------------------------------------------
# elementwise and broadcast ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        return g, g

    return _make(a.data + b.data, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data

    def backward(g):
        return g * bd, g * ad

    return _make(ad * bd, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (g * c,)

    return _make(a.data * c, (a,), backward, "scale")


def add_row(x: Tensor, b: Tensor) -> Tensor:
    """Add a width-d row vector to every row of x (last axis must match)."""
    if x.ndim < 1 or b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_row: shapes {x.shape} and {b.shape} incompatible")
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        return g, g.sum(axis=lead) if lead else g

    return _make(x.data + b.data, (x, b), backward, "add_row")


def relu(x: Tensor) -> Tensor:
    xd = x.data

    def backward(g):
        return (g * (xd > 0.0),)

    return _make(np.maximum(xd, 0.0), (x,), backward, "relu")


# ---------------------------------------------------------------------------
# matrix ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Leading axes must match exactly, except that a 2-d b (a weight matrix)
    broadcasts over any leading axes of a.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    broadcast_b = b.ndim == 2 and a.ndim > 2
    if a.shape[-1] != b.shape[-2] or (not broadcast_b and a.shape[:-2] != b.shape[:-2]):
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if broadcast_b:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(ad @ bd, (a, b), backward, "matmul")


def transpose_last2(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise ShapeError(f"transpose_last2: needs at least 2-d, got {x.shape}")

    def backward(g):
        return (np.swapaxes(g, -1, -2),)

    return _make(np.swapaxes(x.data, -1, -2), (x,), backward, "transpose")


def dot(u: Tensor, v: Tensor) -> Tensor:
    if u.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"dot: need equal 1-d shapes, got {u.shape} and {v.shape}")
    ud, vd = u.data, v.data

    def backward(g):
        return g * vd, g * ud

    return _make(np.asarray(ud @ vd), (u, v), backward, "dot")


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def concat_last(x: Tensor, y: Tensor) -> Tensor:
    """Concatenate along the last axis; x occupies the first slots."""
    if x.shape[:-1] != y.shape[:-1]:
        raise ShapeError(f"concat_last: leading dims differ, {x.shape} vs {y.shape}")
    d1 = x.shape[-1]

    def backward(g):
        return g[..., :d1], g[..., d1:]

    return _make(np.concatenate([x.data, y.data], axis=-1), (x, y), backward, "concat_last")


def concat_rows(x: Tensor, y: Tensor) -> Tensor:
    """Concatenate along the row axis (second to last); x rows come first."""
    if (x.ndim < 2 or x.ndim != y.ndim or x.shape[-1] != y.shape[-1]
            or x.shape[:-2] != y.shape[:-2]):
        raise ShapeError(f"concat_rows: shapes {x.shape} and {y.shape} incompatible")
    n = x.shape[-2]

    def backward(g):
        return g[..., :n, :], g[..., n:, :]

    return _make(np.concatenate([x.data, y.data], axis=-2), (x, y), backward, "concat_rows")


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice along the row axis (second to last); leading axes pass through."""
    if x.ndim < 2 or not (0 <= start < stop <= x.shape[-2]):
        raise ShapeError(f"slice_rows: bad range [{start}:{stop}] for shape {x.shape}")
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape)
        gx[..., start:stop, :] = g
        return (gx,)

    return _make(x.data[..., start:stop, :].copy(), (x,), backward, "slice_rows")


def split_heads(x: Tensor, h: int) -> Tensor:
    """[..., l, h*dh] -> [..., h, l, dh], one slab per attention head."""
    if x.ndim < 2 or x.shape[-1] % h != 0:
        raise ShapeError(f"split_heads: width of {x.shape} not divisible into {h} heads")
    *lead, l, w = x.shape
    dh = w // h

    def backward(g):
        return (np.moveaxis(g, -3, -2).reshape(*lead, l, w),)

    return _make(np.moveaxis(x.data.reshape(*lead, l, h, dh), -2, -3),
                 (x,), backward, "split_heads")


def merge_heads(x: Tensor) -> Tensor:
    """[..., h, l, dh] -> [..., l, h*dh], inverse of split_heads."""
    if x.ndim < 3:
        raise ShapeError(f"merge_heads: needs at least 3-d input, got {x.shape}")
    *lead, h, l, dh = x.shape

    def backward(g):
        return (np.moveaxis(g.reshape(*lead, l, h, dh), -2, -3),)

    return _make(np.moveaxis(x.data, -3, -2).reshape(*lead, l, h * dh),
                 (x,), backward, "merge_heads")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    orig = x.shape

    def backward(g):
        return (g.reshape(orig),)

    return _make(x.data.reshape(shape), (x,), backward, "reshape")


def matvec(x: Tensor, w: Tensor) -> Tensor:
    """Contract the last axis of x with the vector w: [..., d] @ [d] -> [...]."""
    if w.ndim != 1 or x.ndim < 1 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"matvec: shapes {x.shape} and {w.shape} incompatible")
    xd, wd = x.data, w.data
    d = wd.shape[0]

    def backward(g):
        g = np.asarray(g)
        return g[..., None] * wd, g.reshape(-1) @ xd.reshape(-1, d)

    return _make(xd @ wd, (x, w), backward, "matvec")


def stack(scalars) -> Tensor:
    """Stack scalar tensors into a 1-d vector."""
    scalars = list(scalars)
    for s in scalars:
        if s.ndim != 0:
            raise ShapeError(f"stack: expected scalars, got shape {s.shape}")

    def backward(g):
        return tuple(np.asarray(g[i]) for i in range(len(scalars)))

    return _make(np.array([s.data for s in scalars]), scalars, backward, "stack")


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of table by integer ids; backward scatter-adds."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-d, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"embedding: id out of range for table with {table.shape[0]} rows")
    shape = table.shape

    def backward(g):
        gt = np.zeros(shape)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(table.data[ids], (table,), backward, "embedding")


# ---------------------------------------------------------------------------
# reductions and normalizations
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    shape = x.shape

    def backward(g):
        return (np.full(shape, float(g)),)

    return _make(np.asarray(x.data.sum()), (x,), backward, "sum")


def softmax_last(x: Tensor) -> Tensor:
    """Softmax over the last axis; -inf entries map to exactly 0."""
    xd = x.data
    if xd.shape[-1] < 1:
        raise ShapeError("softmax_last: empty last axis")
    m = xd.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        # a row max of -inf means every entry was masked; +inf or nan means
        # the scores themselves blew up, which is a numerical failure
        if np.any(np.isnan(m)) or np.any(m == np.inf):
            raise FloatingPointError("softmax_last: non-finite scores")
        raise ValueError("softmax_last: fully masked row (no finite entry)")
    e = np.exp(xd - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


def mean_rows(x: Tensor) -> Tensor:
    """Plain mean over the row axis (second to last), every row weighted equally."""
    if x.ndim < 2:
        raise ShapeError(f"mean_rows: needs at least 2-d input, got {x.shape}")
    shape = x.shape
    l = shape[-2]

    def backward(g):
        return (np.broadcast_to(np.asarray(g)[..., None, :] / l, shape).copy(),)

    return _make(x.data.mean(axis=-2), (x,), backward, "mean_rows")


def mean_pool_rows(x: Tensor, mask) -> Tensor:
    """Mean over rows where mask==1; masked rows contribute nothing."""
    mask = np.asarray(mask, dtype=np.float64)
    if x.ndim != 2 or mask.shape != (x.shape[0],):
        raise ShapeError(f"mean_pool_rows: shapes {x.shape} and {mask.shape} incompatible")
    n = mask.sum()
    if n == 0:
        raise ValueError("mean_pool_rows: all rows masked")
    w = mask / n

    def backward(g):
        return (np.outer(w, g),)

    return _make(w @ x.data, (x,), backward, "mean_pool")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Per-row normalization to zero mean / unit population variance, then scale+shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},)")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        dxhat = g * gamma.data
        dx = inv / d * (d * dxhat
                        - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        dgamma = (g * xhat).sum(axis=lead) if lead else g * xhat
        dbeta = g.sum(axis=lead) if lead else g
        return dx, dgamma, dbeta

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward, "layer_norm")


def cross_entropy(logits: Tensor, gold: int) -> Tensor:
    """Negative log softmax probability of the gold index."""
    if logits.ndim != 1:
        raise ShapeError(f"cross_entropy: logits must be 1-d, got {logits.shape}")
    s = logits.shape[0]
    if not 0 <= gold < s:
        raise ValueError(f"cross_entropy: gold index {gold} out of range for {s} options")
    x = logits.data
    m = x.max()
    e = np.exp(x - m)
    z = e.sum()
    p = e / z
    loss = np.log(z) + m - x[gold]

    def backward(g):
        gx = p.copy()
        gx[gold] -= 1.0
        return (gx * float(g),)

    return _make(np.asarray(loss), (logits,), backward, "cross_entropy")


def cross_entropy_rows(logits: Tensor, golds) -> Tensor:
    """Mean negative log softmax probability of each row's gold index."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy_rows: logits must be 2-d, got {logits.shape}")
    golds = np.asarray(golds, dtype=np.int64)
    n, s = logits.shape
    if golds.shape != (n,):
        raise ShapeError(f"cross_entropy_rows: need {n} gold indices, got shape {golds.shape}")
    if golds.size and (golds.min() < 0 or golds.max() >= s):
        raise ValueError(f"cross_entropy_rows: gold index out of range for {s} options")
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    z = e.sum(axis=-1, keepdims=True)
    p = e / z
    rows = np.arange(n)
    losses = np.log(z[:, 0]) + m[:, 0] - x[rows, golds]

    def backward(g):
        gx = p.copy()
        gx[rows, golds] -= 1.0
        return (gx * (float(g) / n),)

    return _make(np.asarray(losses.mean()), (logits,), backward, "cross_entropy_rows")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate .grad for every requires_grad tensor reachable from loss.

    Visits each node exactly once in reverse topological order; grads
    accumulate across calls until zeroed.
    """
    if loss.ndim != 0:
        raise ShapeError(f"backward: root must be a scalar, got shape {loss.shape}")

    order = []
    visited = set()
    stack_ = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack_.append((p, False))

    pending = {id(loss): np.asarray(1.0)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            acc = pending.get(id(p))
            pending[id(p)] = np.asarray(pg, dtype=np.float64) if acc is None else acc + pg


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def grad_check(f, params, eps: float = 1e-5) -> float:
    """Compare backward grads of f(params) against central finite differences.

    f must be deterministic and return a scalar Tensor. Returns the worst
    relative error over all parameter entries, with denominator
    max(|analytic|, |numeric|, 1e-8).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"grad_check: eps {eps} outside [1e-7, 1e-3]")
    params = list(params)
    zero_grads(params)
    loss = f(params)
    if not np.isfinite(loss.data):
        raise ValueError("grad_check: f returned a non-finite value")
    backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            aflat = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = float(f(params).data)
                flat[i] = orig - eps
                f_minus = float(f(params).data)
                flat[i] = orig
                if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                    raise ValueError("grad_check: f returned a non-finite value")
                numeric = (f_plus - f_minus) / (2.0 * eps)
                denom = max(abs(aflat[i]), abs(numeric), 1e-8)
                worst = max(worst, abs(aflat[i] - numeric) / denom)
    zero_grads(params)
    return worst
