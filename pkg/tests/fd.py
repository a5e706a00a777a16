"""Central finite-difference gradient checking shared by the test modules."""

import numpy as np

from gradshift import autodiff as ad

H = 1e-5


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def check_op(build, inputs, wrt, rng, h=H):
    """Largest relative error between analytic and numeric gradients.

    ``build(*nodes)`` returns the op output; it is reduced to a scalar by a
    fixed random projection so every output element contributes.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    proj = None

    def scalar(vals):
        nonlocal proj
        out = build(*[ad.constant(v) for v in vals]).value
        if proj is None:
            proj = rng.standard_normal(out.shape)
        return float((out * proj).sum())

    scalar(inputs)
    nodes = [ad.variable(v) if i in wrt else ad.constant(v) for i, v in enumerate(inputs)]
    out = build(*nodes)
    ad.backward(ad.sum(ad.mul(out, proj)))
    worst = 0.0
    for i in wrt:
        num = np.zeros_like(inputs[i])
        it = np.nditer(inputs[i], flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            plus = [v.copy() for v in inputs]
            minus = [v.copy() for v in inputs]
            plus[i][idx] += h
            minus[i][idx] -= h
            num[idx] = (scalar(plus) - scalar(minus)) / (2 * h)
        worst = max(worst, rel_error(nodes[i].grad, num))
    return worst


def away_from_zero(rng, shape, gap=1e-2):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap, x)


def distinct(rng, shape):
    # well separated values so max-pool windows never tie under a 1e-5 nudge
    return rng.permutation(int(np.prod(shape))).reshape(shape) * 0.01 + 0.1 * rng.standard_normal()


def probs(rng, n, k):
    p = rng.uniform(0.05, 1.0, size=(n, k))
    return p / p.sum(axis=1, keepdims=True)


def small_shape(rng, even=False):
    n = int(rng.integers(1, 3))
    h, w = (int(rng.integers(1, 4)) * 2, int(rng.integers(1, 4)) * 2) if even else tuple(rng.integers(2, 6, size=2))
    c = int(rng.integers(1, 4))
    return (n, h, w, c)


def _conv_case(rng):
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    k = int(rng.choice([1, 3]))
    # both channel regimes: im2col (< 4) and per-tap (>= 4)
    cin = int(rng.choice([1, 2, 5]))
    cout = int(rng.integers(1, 4))
    h = int(rng.integers(k, 6))
    n = int(rng.integers(1, 3))
    bias = bool(rng.integers(0, 2))
    inputs = [rng.standard_normal((n, h, h, cin)), rng.standard_normal((k, k, cin, cout))]
    if bias:
        inputs.append(rng.standard_normal(cout))
        build = lambda x, w, b: ad.conv2d(x, w, b, stride=stride, padding=pad)  # noqa: E731
    else:
        build = lambda x, w: ad.conv2d(x, w, stride=stride, padding=pad)  # noqa: E731
    return build, inputs, list(range(len(inputs)))


def fd_case(kind, rng):
    """(build, inputs, wrt) for one random instance of primitive ``kind``."""
    if kind == "add":
        s = small_shape(rng)
        if rng.integers(0, 2):
            return ad.add, [rng.standard_normal(s), rng.standard_normal(s)], [0, 1]
        return ad.add, [rng.standard_normal(s), rng.standard_normal(1)], [0, 1]
    if kind == "mul":
        s = small_shape(rng)
        if rng.integers(0, 2):
            return ad.mul, [rng.standard_normal(s), rng.standard_normal(s)], [0, 1]
        return ad.mul, [rng.standard_normal(s), rng.standard_normal(1)], [0, 1]
    if kind == "sum":
        return ad.sum, [rng.standard_normal(small_shape(rng))], [0]
    if kind == "mean":
        return ad.mean, [rng.standard_normal(small_shape(rng))], [0]
    if kind == "reshape":
        s = small_shape(rng)
        return (lambda x: ad.reshape(x, (s[0], -1))), [rng.standard_normal(s)], [0]
    if kind == "conv2d":
        return _conv_case(rng)
    if kind == "relu":
        return ad.relu, [away_from_zero(rng, small_shape(rng))], [0]
    if kind == "sigmoid":
        return ad.sigmoid, [3 * rng.standard_normal(small_shape(rng))], [0]
    if kind == "maxpool2x2":
        return ad.maxpool2x2, [distinct(rng, small_shape(rng, even=True))], [0]
    if kind == "global_avg_pool":
        return ad.global_avg_pool, [rng.standard_normal(small_shape(rng))], [0]
    if kind == "dense":
        n, i, o = rng.integers(1, 5, size=3)
        x, w, b = rng.standard_normal((n, i)), rng.standard_normal((i, o)), rng.standard_normal(o)
        return ad.dense, [x, w, b], [0, 1, 2]
    if kind == "softmax":
        return ad.softmax, [2 * rng.standard_normal((int(rng.integers(1, 4)), int(rng.integers(2, 5))))], [0]
    if kind == "upsample":
        f = int(rng.integers(2, 4))
        mode = str(rng.choice(["nearest", "bilinear"]))
        return (lambda x: ad.upsample(x, f, mode)), [rng.standard_normal(small_shape(rng))], [0]
    if kind == "batchnorm":
        s = small_shape(rng)
        c = s[-1]
        mean, var = rng.standard_normal(c), rng.uniform(0.5, 2.0, c)
        build = lambda x, g, b: ad.batchnorm(x, g, b, mean, var)  # noqa: E731
        return build, [rng.standard_normal(s), rng.standard_normal(c), rng.standard_normal(c)], [0, 1, 2]
    if kind == "cross_entropy":
        n, k = int(rng.integers(1, 5)), int(rng.integers(2, 4))
        labels = rng.integers(0, k, size=n)
        return (lambda p: ad.cross_entropy(p, labels)), [probs(rng, n, k)], [0]
    if kind == "logit_cross_entropy":
        n, k = int(rng.integers(1, 5)), int(rng.integers(2, 4))
        labels = rng.integers(0, k, size=n)
        return (lambda z: ad.logit_cross_entropy(z, labels)), [3 * rng.standard_normal((n, k))], [0]
    if kind == "binary_cross_entropy":
        s = small_shape(rng)
        return ad.binary_cross_entropy, [rng.uniform(0.05, 0.95, s), (rng.random(s) < 0.5).astype(float)], [0]
    raise AssertionError(f"no finite-difference case for {kind}")
