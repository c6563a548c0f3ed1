"""Reverse-mode automatic differentiation on dense float64 arrays.

Forward operations build an implicit DAG of `Tensor` nodes; calling
``backward()`` on a scalar result replays the graph in reverse topological
order and accumulates partials into every reachable ``requires_grad`` leaf.
Everything is double precision with row-major storage so runs (and the
checkpoints they write) are bit-reproducible.

The graph is rebuilt from scratch on every forward pass and is confined to
one thread; tensors themselves are value-semantic (ops copy, never alias
caller data).
"""

from __future__ import annotations

import math

import numpy as np

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _as_f64(data):
    return np.ascontiguousarray(data, dtype=np.float64)


class Tensor:
    """Dense float64 array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        self.data = _as_f64(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ---- graph replay ----

    def _topo_order(self):
        """Iterative post-order DFS (model graphs exceed the recursion limit)."""
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into every requires_grad ancestor."""
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        if seed is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward() without a seed needs a scalar, got shape {self.data.shape}"
                )
            seed = np.ones_like(self.data)
        _accumulate(self, _as_f64(seed))
        for node in reversed(self._topo_order()):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # ---- operator sugar ----

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_view(self, key)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, shape):
        return reshape(self, shape)


def _accumulate(tensor, grad):
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=np.float64, copy=True)
    else:
        tensor.grad += grad


def _node(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---- elementwise ----


def add(a, b):
    """Elementwise a + b; b may be a tensor of identical shape or a scalar."""
    if isinstance(b, Tensor):
        _check_same_shape("add", a, b)

        def backward(g):
            _accumulate(a, g)
            _accumulate(b, g)

        return _node(a.data + b.data, (a, b), backward)
    b = float(b)

    def backward(g):
        _accumulate(a, g)

    return _node(a.data + b, (a,), backward)


def sub(a, b):
    """Elementwise a - b; b may be a tensor of identical shape or a scalar."""
    if isinstance(b, Tensor):
        _check_same_shape("sub", a, b)

        def backward(g):
            _accumulate(a, g)
            _accumulate(b, -g)

        return _node(a.data - b.data, (a, b), backward)
    b = float(b)

    def backward(g):
        _accumulate(a, g)

    return _node(a.data - b, (a,), backward)


def mul(a, b):
    """Hadamard product, or scaling when b is a scalar."""
    if isinstance(b, Tensor):
        _check_same_shape("mul", a, b)

        def backward(g):
            _accumulate(a, g * b.data)
            _accumulate(b, g * a.data)

        return _node(a.data * b.data, (a, b), backward)
    b = float(b)

    def backward(g):
        _accumulate(a, g * b)

    return _node(a.data * b, (a,), backward)


def scale(a, s):
    """Multiply every entry by the scalar s."""
    return mul(a, float(s))


# ---- linear algebra ----


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul: expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: inner extents differ, {a.data.shape} @ {b.data.shape}")

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backward)


def transpose(a):
    if a.data.ndim != 2:
        raise ValueError(f"transpose: expects a 2-d tensor, got shape {a.data.shape}")

    def backward(g):
        _accumulate(a, g.T)

    return _node(a.data.T.copy(), (a,), backward)


def add_bias(x, b):
    """Add a width-D bias row to every row of a [N, D] tensor."""
    if x.data.ndim != 2:
        raise ValueError(f"add_bias: expects a 2-d tensor, got shape {x.data.shape}")
    bias_row = b.data.reshape(-1)
    if bias_row.shape[0] != x.data.shape[1]:
        raise ValueError(f"add_bias: width mismatch {x.data.shape} vs bias {b.data.shape}")

    def backward(g):
        _accumulate(x, g)
        _accumulate(b, g.sum(axis=0).reshape(b.data.shape))

    return _node(x.data + bias_row[None, :], (x, b), backward)


# ---- nonlinearities and normalization ----


def softmax(x, axis=-1):
    ndim = x.data.ndim
    if not -ndim <= axis < ndim:
        raise ValueError(f"softmax: axis {axis} invalid for shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        _accumulate(x, s * (g - inner))

    return _node(s, (x,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize each row to zero mean / unit variance, then apply the affine."""
    if x.data.ndim != 2:
        raise ValueError(f"layer_norm: expects a 2-d tensor, got shape {x.data.shape}")
    d = x.data.shape[1]
    if gain.data.reshape(-1).shape[0] != d or bias.data.reshape(-1).shape[0] != d:
        raise ValueError(
            f"layer_norm: affine width mismatch, rows of width {d} vs "
            f"gain {gain.data.shape} / bias {bias.data.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    g_row = gain.data.reshape(-1)
    out = xhat * g_row[None, :] + bias.data.reshape(-1)[None, :]

    def backward(g):
        dxhat = g * g_row[None, :]
        term = dxhat - dxhat.mean(axis=1, keepdims=True)
        term -= xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        _accumulate(x, inv_std * term)
        _accumulate(gain, (g * xhat).sum(axis=0).reshape(gain.data.shape))
        _accumulate(bias, g.sum(axis=0).reshape(bias.data.shape))

    return _node(out, (x, gain, bias), backward)


def batch_norm(x, gain, bias, eps=1e-5):
    """Normalize each column over the batch axis, then apply the affine.

    Statistics (mean, biased variance) come from x itself: the training-mode
    form. Callers that keep running statistics read them off x.data.
    """
    if x.data.ndim != 2 or x.data.shape[0] < 2:
        raise ValueError(f"batch_norm: needs [B>=2, D] input, got shape {x.data.shape}")
    d = x.data.shape[1]
    if gain.data.reshape(-1).shape[0] != d or bias.data.reshape(-1).shape[0] != d:
        raise ValueError(
            f"batch_norm: affine width mismatch, columns of width {d} vs "
            f"gain {gain.data.shape} / bias {bias.data.shape}"
        )
    mu = x.data.mean(axis=0, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=0, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    g_row = gain.data.reshape(-1)
    out = xhat * g_row[None, :] + bias.data.reshape(-1)[None, :]

    def backward(g):
        dxhat = g * g_row[None, :]
        term = dxhat - dxhat.mean(axis=0, keepdims=True)
        term -= xhat * (dxhat * xhat).mean(axis=0, keepdims=True)
        _accumulate(x, inv_std * term)
        _accumulate(gain, (g * xhat).sum(axis=0).reshape(gain.data.shape))
        _accumulate(bias, g.sum(axis=0).reshape(bias.data.shape))

    return _node(out, (x, gain, bias), backward)


def affine_rows(x, scale_row, shift_row):
    """Per-column affine y = x * scale + shift with constant row vectors
    (the evaluation-mode form of batch_norm)."""
    if x.data.ndim != 2:
        raise ValueError(f"affine_rows: expects a 2-d tensor, got shape {x.data.shape}")
    a = np.asarray(scale_row, dtype=np.float64).reshape(-1)
    c = np.asarray(shift_row, dtype=np.float64).reshape(-1)
    if a.shape[0] != x.data.shape[1] or c.shape[0] != x.data.shape[1]:
        raise ValueError(
            f"affine_rows: width mismatch {x.data.shape} vs {a.shape}/{c.shape}"
        )

    def backward(g):
        _accumulate(x, g * a[None, :])

    return _node(x.data * a[None, :] + c[None, :], (x,), backward)


def gelu(x):
    """tanh-form GELU (exact analytic derivative of the same form)."""
    xd = x.data
    x_sq = xd * xd
    t = np.tanh(_GELU_C * (xd + _GELU_A * (x_sq * xd)))
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + (3.0 * _GELU_A) * x_sq)
        _accumulate(x, g * (0.5 * (1.0 + t) + (0.5 * xd) * ((1.0 - t * t) * du)))

    return _node(out, (x,), backward)


def relu(x):
    def backward(g):
        _accumulate(x, g * (x.data > 0.0))

    return _node(np.maximum(x.data, 0.0), (x,), backward)


def sqrt(x):
    if (x.data < 0.0).any():
        raise ValueError("sqrt: negative input")
    root = np.sqrt(x.data)

    def backward(g):
        _accumulate(x, g * 0.5 / np.maximum(root, 1e-300))

    return _node(root, (x,), backward)


# ---- reductions ----


def sum_all(x):
    def backward(g):
        _accumulate(x, np.full_like(x.data, np.ravel(g)[0]))

    return _node(np.sum(x.data), (x,), backward)


def mean_all(x):
    n = x.data.size

    def backward(g):
        _accumulate(x, np.full_like(x.data, np.ravel(g)[0] / n))

    return _node(np.mean(x.data), (x,), backward)


# ---- shape surgery ----


def _validate_basic_key(key, shape):
    parts = key if isinstance(key, tuple) else (key,)
    if len(parts) > len(shape):
        raise ValueError(f"slice: too many indices {key!r} for shape {shape}")
    for part in parts:
        if not isinstance(part, (int, np.integer, slice)):
            raise ValueError(f"slice: only ints and slices supported, got {part!r}")


def slice_view(x, key):
    """Basic (int/slice) indexing; the backward scatters into the source."""
    _validate_basic_key(key, x.data.shape)
    # contiguous row slices stay views; graphs never outlive the data they read
    out = np.ascontiguousarray(x.data[key])

    def backward(g):
        z = np.zeros_like(x.data)
        z[key] = g
        _accumulate(x, z)

    return _node(out, (x,), backward)


def take_rows(x, indices):
    """Gather rows by integer index (duplicates allowed; backward scatter-adds)."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError("take_rows: indices must be 1-d")
    if x.data.ndim != 2:
        raise ValueError(f"take_rows: expects a 2-d tensor, got shape {x.data.shape}")

    def backward(g):
        z = np.zeros_like(x.data)
        np.add.at(z, idx, g)
        _accumulate(x, z)

    return _node(x.data[idx].copy(), (x,), backward)


def concat(parts, axis=0):
    parts = list(parts)
    if not parts:
        raise ValueError("concat: no tensors given")
    ndim = parts[0].data.ndim
    if not -ndim <= axis < ndim:
        raise ValueError(f"concat: axis {axis} invalid for {ndim}-d tensors")
    axis = axis % ndim
    for p in parts[1:]:
        a, b = list(parts[0].data.shape), list(p.data.shape)
        a.pop(axis)
        b.pop(axis)
        if a != b:
            raise ValueError(
                f"concat: incompatible shapes {parts[0].data.shape} vs {p.data.shape} on axis {axis}"
            )
    extents = [p.data.shape[axis] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(extents)])

    def backward(g):
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            sl = [np.s_[:]] * ndim
            sl[axis] = np.s_[start:stop]
            _accumulate(p, g[tuple(sl)])

    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise ValueError(f"reshape: cannot reshape {x.data.shape} into {shape}")

    def backward(g):
        _accumulate(x, g.reshape(x.data.shape))

    return _node(x.data.reshape(shape).copy(), (x,), backward)


# ---- composite loss primitives ----


def cross_entropy(logits, labels):
    """Mean cross-entropy of integer labels under row-softmax of the logits."""
    if logits.data.ndim != 2:
        raise ValueError(f"cross_entropy: logits must be 2-d, got shape {logits.data.shape}")
    labels = np.asarray(labels, dtype=np.intp)
    n, k = logits.data.shape
    if labels.shape != (n,):
        raise ValueError(f"cross_entropy: expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"cross_entropy: label out of range [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(lse - shifted[np.arange(n), labels]))
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)

    def backward(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        _accumulate(logits, d * (np.ravel(g)[0] / n))

    return _node(loss, (logits,), backward)


def pairwise_sqdist(x):
    """All-pairs squared euclidean distances between rows of a [B, d] tensor."""
    if x.data.ndim != 2:
        raise ValueError(f"pairwise_sqdist: expects a 2-d tensor, got shape {x.data.shape}")
    sq = (x.data**2).sum(axis=1)
    d = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x.data @ x.data.T), 0.0)

    def backward(g):
        s = g + g.T
        _accumulate(x, 2.0 * (s.sum(axis=1)[:, None] * x.data - s @ x.data))

    return _node(d, (x,), backward)


def gather_pairs(m, rows, cols):
    """Pick entries m[rows[i], cols[i]] into a vector; backward scatter-adds."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if m.data.ndim != 2:
        raise ValueError(f"gather_pairs: expects a 2-d tensor, got shape {m.data.shape}")
    if rows.shape != cols.shape or rows.ndim != 1:
        raise ValueError("gather_pairs: rows and cols must be matching 1-d index vectors")

    def backward(g):
        z = np.zeros_like(m.data)
        np.add.at(z, (rows, cols), g)
        _accumulate(m, z)

    return _node(m.data[rows, cols].copy(), (m,), backward)


# ---- finite-difference oracle ----


def grad_check(f, x, eps=1e-5, indices=None, max_entries=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps one Tensor to a scalar Tensor. Error per entry is
    |analytic - cd| / max(|analytic|, |cd|, 1e-8). ``indices`` restricts the
    check to specific flat coordinates; ``max_entries`` samples that many at
    random instead of sweeping all of them.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise ValueError(f"grad_check: f must return a scalar, got shape {out.data.shape}")
    if not np.isfinite(out.data).all():
        raise ValueError("grad_check: f is non-finite at x")
    out.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)
    analytic = analytic.reshape(-1)

    if indices is None:
        indices = np.arange(x.data.size)
        if max_entries is not None and max_entries < indices.size:
            rng = rng or np.random.default_rng(0)
            indices = rng.choice(indices, size=max_entries, replace=False)
    indices = np.asarray(indices, dtype=np.intp)

    base = x.data.reshape(-1).copy()
    worst = 0.0
    for i in indices:
        pert = base.copy()
        pert[i] = base[i] + eps
        f_plus = f(Tensor(pert.reshape(x.data.shape))).item()
        pert[i] = base[i] - eps
        f_minus = f(Tensor(pert.reshape(x.data.shape))).item()
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise ValueError(f"grad_check: f is non-finite near entry {int(i)}")
        cd = (f_plus - f_minus) / (2.0 * eps)
        err = abs(analytic[i] - cd) / max(abs(analytic[i]), abs(cd), 1e-8)
        worst = max(worst, err)
    return worst
