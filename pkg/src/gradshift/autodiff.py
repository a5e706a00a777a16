"""Minimal reverse-mode automatic differentiation over numpy arrays.

Values are plain ``numpy.ndarray`` objects in row-major order. Every
differentiable operation produces a :class:`Node` that remembers its parents
and whatever it needs to run its backward rule. :func:`backward` walks the
recorded graph in reverse topological order and accumulates gradients.

Image tensors use the NHWC layout throughout. Convolution kernels are stored
as ``[kh, kw, c_in, c_out]``.

Broadcasting is deliberately limited to scalar-with-tensor so every gradient
rule stays easy to audit.
"""

from __future__ import annotations

import os
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "Node",
    "ShapeError",
    "BackwardError",
    "OPS",
    "forward_op",
    "backward",
    "variable",
    "constant",
    "sign",
    "set_checked",
    "add",
    "mul",
    "sum",
    "mean",
    "reshape",
    "conv2d",
    "relu",
    "sigmoid",
    "maxpool2x2",
    "global_avg_pool",
    "dense",
    "softmax",
    "upsample",
    "batchnorm",
    "cross_entropy",
    "logit_cross_entropy",
    "binary_cross_entropy",
]

PROB_CLAMP = 1e-7

_CHECKED = os.environ.get("GRADSHIFT_CHECKED", "") not in ("", "0")


def set_checked(flag: bool) -> bool:
    """Toggle finiteness checks on every forward output. Returns the old flag."""
    global _CHECKED
    old, _CHECKED = _CHECKED, bool(flag)
    return old


class ShapeError(ValueError):
    """Raised when an operation receives inputs of incompatible shape."""


class BackwardError(RuntimeError):
    """Raised when backward is called on something that is not a scalar."""


class Node:
    """One recorded value in the computation graph."""

    __slots__ = ("op", "parents", "value", "attrs", "requires_grad", "_cache", "_grad", "__weakref__")

    def __init__(self, op, parents, value, attrs=None, requires_grad=False, cache=None):
        self.op = op
        self.parents = tuple(parents)
        self.value = value
        self.attrs = attrs or {}
        self.requires_grad = requires_grad
        self._cache = cache
        self._grad = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.value.shape}, requires_grad={self.requires_grad})"

    # light operator sugar, used mostly in tests and loss construction
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -1.0 * _as_node(other))


def _check_finite(op: str, value: np.ndarray) -> None:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"{op}: produced non-finite values")


def variable(value, dtype=None) -> Node:
    """Leaf whose gradient is wanted (parameters, attacked inputs)."""
    arr = np.array(value, dtype=dtype if dtype is not None else np.float64)
    if _CHECKED:
        _check_finite("variable", arr)
    return Node("leaf", (), arr, requires_grad=True)


def constant(value, dtype=None) -> Node:
    arr = np.asarray(value, dtype=dtype if dtype is not None else np.float64)
    if _CHECKED:
        _check_finite("constant", arr)
    return Node("leaf", (), arr, requires_grad=False)


def _as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    arr = np.asarray(x)
    if arr.dtype.kind not in "f":
        arr = arr.astype(np.float64)
    return Node("leaf", (), arr)


def sign(t) -> np.ndarray:
    """Elementwise sign with sign(0) == 0."""
    if isinstance(t, Node):
        t = t.value
    return np.sign(t)


# ---------------------------------------------------------------------------
# primitive rules
#
# Each entry maps a kind to (forward, backward).
#   forward(values, attrs) -> (output, cache)
#   backward(gout, values, output, cache, attrs, needs) -> tuple of grads
# ``needs[i]`` is False when input i does not require a gradient; the rule
# may return None in that slot.
# ---------------------------------------------------------------------------


def _is_scalar(a: np.ndarray) -> bool:
    return a.size == 1


def _reduce_to(g: np.ndarray, like: np.ndarray) -> np.ndarray:
    if g.shape == like.shape:
        return g
    return np.asarray(g.sum()).reshape(like.shape)


def _binary_shape(kind, a, b):
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} differ and neither is a scalar")


def _add_fwd(vals, attrs):
    a, b = vals
    _binary_shape("add", a, b)
    return a + b, None


def _add_bwd(g, vals, out, cache, attrs, needs):
    a, b = vals
    return (_reduce_to(g, a) if needs[0] else None, _reduce_to(g, b) if needs[1] else None)


def _mul_fwd(vals, attrs):
    a, b = vals
    _binary_shape("mul", a, b)
    return a * b, None


def _mul_bwd(g, vals, out, cache, attrs, needs):
    a, b = vals
    ga = _reduce_to(g * b, a) if needs[0] else None
    gb = _reduce_to(g * a, b) if needs[1] else None
    return ga, gb


def _sum_fwd(vals, attrs):
    (a,) = vals
    return np.asarray(a.sum(), dtype=a.dtype).reshape(1), None


def _sum_bwd(g, vals, out, cache, attrs, needs):
    (a,) = vals
    return (np.full(a.shape, g.reshape(()), dtype=a.dtype),)


def _mean_fwd(vals, attrs):
    (a,) = vals
    return np.asarray(a.mean(), dtype=a.dtype).reshape(1), None


def _mean_bwd(g, vals, out, cache, attrs, needs):
    (a,) = vals
    return (np.full(a.shape, g.reshape(()) / a.size, dtype=a.dtype),)


def _reshape_fwd(vals, attrs):
    (a,) = vals
    shape = tuple(attrs["shape"])
    try:
        return a.reshape(shape), None
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from exc


def _reshape_bwd(g, vals, out, cache, attrs, needs):
    return (g.reshape(vals[0].shape),)


def _conv_out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _conv2d_fwd(vals, attrs):
    x, w = vals[0], vals[1]
    b = vals[2] if len(vals) > 2 else None
    stride, pad = attrs.get("stride", 1), attrs.get("padding", 0)
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d: stride must be >= 1 and padding >= 0, got stride={stride}, padding={pad}")
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected x [N,H,W,C] and w [kh,kw,Cin,Cout], got {x.shape} and {w.shape}")
    n, h, wd, c = x.shape
    kh, kw, cin, cout = w.shape
    if cin != c:
        raise ShapeError(f"conv2d: input has {c} channels but kernel expects {cin}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match {cout} output channels")
    ho, wo = _conv_out(h, kh, stride, pad), _conv_out(wd, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{wd + 2 * pad}")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x

    def tap(i, j):
        return xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]

    if c < 4 and kh * kw > 1:
        # few input channels: one im2col matmul beats many skinny ones
        cols = np.empty((n, ho, wo, kh, kw, c), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, :, i, j, :] = tap(i, j)
        cols2 = cols.reshape(n * ho * wo, kh * kw * c)
        out = (cols2 @ w.reshape(kh * kw * c, cout)).reshape(n, ho, wo, cout)
        cache = ("cols", cols2)
    else:
        # sum of one matmul per kernel tap; no im2col buffer
        out = np.zeros((n, ho, wo, cout), dtype=np.result_type(x, w))
        for i in range(kh):
            for j in range(kw):
                out += tap(i, j) @ w[i, j]
        cache = ("taps", xp)
    if b is not None:
        out += b
    return out, cache


def _conv2d_bwd(g, vals, out, cache, attrs, needs):
    x, w = vals[0], vals[1]
    stride, pad = attrs.get("stride", 1), attrs.get("padding", 0)
    n, h, wd, c = x.shape
    kh, kw, _, cout = w.shape
    _, ho, wo, _ = g.shape
    g2 = g.reshape(-1, cout)
    gx = gw = gb = None
    if len(vals) > 2 and needs[2]:
        gb = g2.sum(axis=0)
    kind, data = cache
    if kind == "cols":
        if needs[1]:
            gw = (data.T @ g2).reshape(w.shape)
        if needs[0]:
            gcols = (g2 @ w.reshape(-1, cout).T).reshape(n, ho, wo, kh, kw, c)
            gxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, c), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += gcols[:, :, :, i, j, :]
            gx = gxp[:, pad : pad + h, pad : pad + wd, :] if pad else gxp
    else:
        xp = data
        if needs[1]:
            gw = np.empty_like(w)
            gt = np.ascontiguousarray(g2.T)
        if needs[0]:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                rows = slice(i, i + stride * ho, stride)
                cols = slice(j, j + stride * wo, stride)
                if needs[1]:
                    xs = np.ascontiguousarray(xp[:, rows, cols, :]).reshape(-1, c)
                    gw[i, j] = (gt @ xs).T
                if needs[0]:
                    gxp[:, rows, cols, :] += g @ w[i, j].T
        if needs[0]:
            gx = gxp[:, pad : pad + h, pad : pad + wd, :] if pad else gxp
    return (gx, gw, gb) if len(vals) > 2 else (gx, gw)


def _relu_fwd(vals, attrs):
    (a,) = vals
    return np.maximum(a, 0), None


def _relu_bwd(g, vals, out, cache, attrs, needs):
    return (g * (vals[0] > 0),)


def _sigmoid_fwd(vals, attrs):
    (a,) = vals
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out, None


def _sigmoid_bwd(g, vals, out, cache, attrs, needs):
    return (g * out * (1.0 - out),)


def _maxpool_fwd(vals, attrs):
    (x,) = vals
    if x.ndim != 4 or x.shape[1] % 2 or x.shape[2] % 2:
        raise ShapeError(f"maxpool2x2: expected [N,H,W,C] with even H and W, got {x.shape}")
    quads = [x[:, i::2, j::2, :] for i in (0, 1) for j in (0, 1)]
    out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
    return out, None


def _maxpool_bwd(g, vals, out, cache, attrs, needs):
    (x,) = vals
    gx = np.zeros_like(x, dtype=g.dtype)
    taken = np.zeros(out.shape, dtype=bool)
    # each window's gradient goes to its first maximal element (row-major)
    for i in (0, 1):
        for j in (0, 1):
            hit = (x[:, i::2, j::2, :] == out) & ~taken
            gx[:, i::2, j::2, :] = g * hit
            taken |= hit
    return (gx,)


def _gap_fwd(vals, attrs):
    (x,) = vals
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected [N,H,W,C], got {x.shape}")
    return x.mean(axis=(1, 2)), None


def _gap_bwd(g, vals, out, cache, attrs, needs):
    (x,) = vals
    n, h, w, c = x.shape
    return (np.broadcast_to(g[:, None, None, :] / (h * w), x.shape).copy(),)


def _dense_fwd(vals, attrs):
    x, w = vals[0], vals[1]
    b = vals[2] if len(vals) > 2 else None
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: cannot multiply input {x.shape} by weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias shape {b.shape} does not match {w.shape[1]} outputs")
    out = x @ w
    if b is not None:
        out = out + b
    return out, None


def _dense_bwd(g, vals, out, cache, attrs, needs):
    x, w = vals[0], vals[1]
    gx = g @ w.T if needs[0] else None
    gw = x.T @ g if needs[1] else None
    if len(vals) > 2:
        return gx, gw, (g.sum(axis=0) if needs[2] else None)
    return gx, gw


def _softmax_fwd(vals, attrs):
    (z,) = vals
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True), None


def _softmax_bwd(g, vals, p, cache, attrs, needs):
    return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)


def _nearest_up(x, f):
    n, h, w, c = x.shape
    return np.broadcast_to(x[:, :, None, :, None, :], (n, h, f, w, f, c)).reshape(n, h * f, w * f, c)


def _bilinear_matrix(n_in: int, f: int, dtype) -> np.ndarray:
    # half-pixel centres, edge clamped
    n_out = n_in * f
    src = (np.arange(n_out) + 0.5) / f - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in), dtype=dtype)
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m


def _upsample_fwd(vals, attrs):
    (x,) = vals
    f = int(attrs.get("factor", 2))
    if x.ndim != 4 or f < 1:
        raise ShapeError(f"upsample: expected [N,H,W,C] and factor >= 1, got {x.shape}, factor={f}")
    if attrs.get("mode", "nearest") == "bilinear":
        mh = _bilinear_matrix(x.shape[1], f, x.dtype)
        mw = _bilinear_matrix(x.shape[2], f, x.dtype)
        return np.einsum("ih,nhwc,jw->nijc", mh, x, mw, optimize=True), (mh, mw)
    return _nearest_up(x, f), None


def _upsample_bwd(g, vals, out, cache, attrs, needs):
    (x,) = vals
    f = int(attrs.get("factor", 2))
    if cache is not None:
        mh, mw = cache
        return (np.einsum("ih,nijc,jw->nhwc", mh, g, mw, optimize=True),)
    gx = np.zeros_like(x)
    for i in range(f):
        for j in range(f):
            gx += g[:, i::f, j::f, :]
    return (gx,)


def _batchnorm_fwd(vals, attrs):
    x, gamma, beta = vals
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: scale/shift shapes {gamma.shape}/{beta.shape} do not match {c} channels")
    mean = np.asarray(attrs["mean"], dtype=x.dtype)
    inv = 1.0 / np.sqrt(np.asarray(attrs["var"], dtype=x.dtype) + attrs.get("eps", 1e-5))
    # statistics are constants here, so the op is a per-channel affine map
    scale = gamma * inv
    return x * scale + (beta - mean * scale), (mean, inv)


def _batchnorm_bwd(g, vals, out, cache, attrs, needs):
    x, gamma, beta = vals
    mean, inv = cache
    c = x.shape[-1]
    g2 = g.reshape(-1, c)
    gsum = g2.sum(axis=0) if (needs[1] or needs[2]) else None
    gx = g * (gamma * inv) if needs[0] else None
    gg = None
    if needs[1]:
        gx_dot = np.einsum("ij,ij->j", g2, x.reshape(-1, c))
        gg = (gx_dot - mean * gsum) * inv
    return gx, gg, (gsum if needs[2] else None)


def _ce_fwd(vals, attrs):
    (p,) = vals
    labels = np.asarray(attrs["labels"], dtype=int)
    if p.ndim != 2 or labels.shape != (p.shape[0],):
        raise ShapeError(f"cross_entropy: probs {p.shape} do not align with labels {labels.shape}")
    if labels.min() < 0 or labels.max() >= p.shape[1]:
        raise ShapeError(f"cross_entropy: label out of range for {p.shape[1]} classes")
    picked = p[np.arange(p.shape[0]), labels]
    clamped = np.clip(picked, PROB_CLAMP, 1 - PROB_CLAMP)
    return np.asarray(-np.log(clamped).mean(), dtype=p.dtype).reshape(1), (labels, picked)


def _ce_bwd(g, vals, out, cache, attrs, needs):
    (p,) = vals
    labels, picked = cache
    n = p.shape[0]
    inside = (picked > PROB_CLAMP) & (picked < 1 - PROB_CLAMP)
    gp = np.zeros_like(p)
    gp[np.arange(n), labels] = np.where(inside, -1.0 / np.where(inside, picked, 1.0), 0.0) / n
    return (gp * g.reshape(()),)


def _lce_fwd(vals, attrs):
    (z,) = vals
    labels = np.asarray(attrs["labels"], dtype=int)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeError(f"logit_cross_entropy: logits {z.shape} do not align with labels {labels.shape}")
    if labels.min() < 0 or labels.max() >= z.shape[1]:
        raise ShapeError(f"logit_cross_entropy: label out of range for {z.shape[1]} classes")
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(z.shape[0]), labels].mean()
    return np.asarray(loss, dtype=z.dtype).reshape(1), (labels, np.exp(logp))


def _lce_bwd(g, vals, out, cache, attrs, needs):
    labels, p = cache
    n = p.shape[0]
    gz = p.copy()
    rows = np.arange(n)
    # p_y - 1 written as -sum of the other classes; 1 - p_y would cancel to 0
    gz[rows, labels] = 0.0
    gz[rows, labels] = -gz.sum(axis=1)
    return (gz * (g.reshape(()) / n),)


def _bce_fwd(vals, attrs):
    pred, target = vals
    if pred.shape != target.shape:
        raise ShapeError(f"binary_cross_entropy: prediction {pred.shape} vs target {target.shape}")
    q = np.clip(pred, PROB_CLAMP, 1 - PROB_CLAMP)
    loss = -(target * np.log(q) + (1 - target) * np.log(1 - q)).mean()
    return np.asarray(loss, dtype=pred.dtype).reshape(1), q


def _bce_bwd(g, vals, out, q, attrs, needs):
    pred, target = vals
    inside = (pred > PROB_CLAMP) & (pred < 1 - PROB_CLAMP)
    gp = (-target / q + (1 - target) / (1 - q)) * inside / pred.size
    gt = (np.log(1 - q) - np.log(q)) / pred.size if needs[1] else None
    s = g.reshape(())
    return gp * s, (gt * s if gt is not None else None)


OPS: Dict[str, Tuple[Callable, Callable]] = {
    "add": (_add_fwd, _add_bwd),
    "mul": (_mul_fwd, _mul_bwd),
    "sum": (_sum_fwd, _sum_bwd),
    "mean": (_mean_fwd, _mean_bwd),
    "reshape": (_reshape_fwd, _reshape_bwd),
    "conv2d": (_conv2d_fwd, _conv2d_bwd),
    "relu": (_relu_fwd, _relu_bwd),
    "sigmoid": (_sigmoid_fwd, _sigmoid_bwd),
    "maxpool2x2": (_maxpool_fwd, _maxpool_bwd),
    "global_avg_pool": (_gap_fwd, _gap_bwd),
    "dense": (_dense_fwd, _dense_bwd),
    "softmax": (_softmax_fwd, _softmax_bwd),
    "upsample": (_upsample_fwd, _upsample_bwd),
    "batchnorm": (_batchnorm_fwd, _batchnorm_bwd),
    "cross_entropy": (_ce_fwd, _ce_bwd),
    "logit_cross_entropy": (_lce_fwd, _lce_bwd),
    "binary_cross_entropy": (_bce_fwd, _bce_bwd),
}


def forward_op(kind: str, inputs: Sequence, **attrs) -> Node:
    """Run primitive ``kind`` on ``inputs`` and record the result."""
    try:
        fwd, _ = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown operation {kind!r}") from None
    parents = [_as_node(x) for x in inputs]
    out, cache = fwd([p.value for p in parents], attrs)
    if _CHECKED:
        _check_finite(kind, out)
    needs_grad = any(p.requires_grad for p in parents)
    return Node(kind, parents, out, attrs, requires_grad=needs_grad, cache=cache if needs_grad else None)


def _topo_order(root: Node) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node, seed: Optional[np.ndarray] = None) -> Dict[Node, np.ndarray]:
    """Accumulate d(loss)/d(node) into every reachable node's ``grad``.

    Returns a mapping from node to gradient for every node visited. Gradients
    from earlier calls are discarded, not summed.
    """
    if loss.value.size != 1:
        raise BackwardError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    order = _topo_order(loss)
    for node in order:
        node._grad = None
    loss._grad = np.ones_like(loss.value) if seed is None else np.asarray(seed, dtype=loss.value.dtype)
    grads: Dict[Node, np.ndarray] = {}
    for node in reversed(order):
        g = node._grad
        if g is None:
            g = node._grad = np.zeros_like(node.value)
        grads[node] = g
        if not node.parents:
            continue
        _, bwd = OPS[node.op]
        needs = [p.requires_grad for p in node.parents]
        pgrads = bwd(g, [p.value for p in node.parents], node.value, node._cache, node.attrs, needs)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if p._grad is None:
                p._grad = pg
            else:
                p._grad = p._grad + pg
    return grads


# ---------------------------------------------------------------------------
# thin wrappers
# ---------------------------------------------------------------------------


def add(a, b) -> Node:
    return forward_op("add", (a, b))


def mul(a, b) -> Node:
    return forward_op("mul", (a, b))


def sum(a) -> Node:  # noqa: A001 - mirrors numpy naming
    return forward_op("sum", (a,))


def mean(a) -> Node:
    return forward_op("mean", (a,))


def reshape(a, shape: Iterable[int]) -> Node:
    return forward_op("reshape", (a,), shape=tuple(shape))


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Node:
    inputs = (x, w) if b is None else (x, w, b)
    return forward_op("conv2d", inputs, stride=stride, padding=padding)


def relu(x) -> Node:
    return forward_op("relu", (x,))


def sigmoid(x) -> Node:
    return forward_op("sigmoid", (x,))


def maxpool2x2(x) -> Node:
    return forward_op("maxpool2x2", (x,))


def global_avg_pool(x) -> Node:
    return forward_op("global_avg_pool", (x,))


def dense(x, w, b=None) -> Node:
    return forward_op("dense", (x, w) if b is None else (x, w, b))


def softmax(z) -> Node:
    return forward_op("softmax", (z,))


def upsample(x, factor: int = 2, mode: str = "nearest") -> Node:
    return forward_op("upsample", (x,), factor=factor, mode=mode)


def batchnorm(x, gamma, beta, mean, var, eps: float = 1e-5) -> Node:
    return forward_op("batchnorm", (x, gamma, beta), mean=mean, var=var, eps=eps)


def cross_entropy(probs, labels) -> Node:
    return forward_op("cross_entropy", (probs,), labels=np.atleast_1d(np.asarray(labels, dtype=int)))


def logit_cross_entropy(logits, labels) -> Node:
    """Mean ``-log softmax(logits)[label]`` computed without clamping.

    Unlike :func:`cross_entropy` on probabilities its gradient never
    vanishes for a saturated softmax.
    """
    return forward_op("logit_cross_entropy", (logits,), labels=np.atleast_1d(np.asarray(labels, dtype=int)))


def binary_cross_entropy(pred, target) -> Node:
    return forward_op("binary_cross_entropy", (pred, target))
