"""Reverse-mode kernels and the Adam optimizer for the dual-branch models.

All arithmetic is float64. Forwards return whatever context the exact analytic
backward needs; backwards accumulate into Param.grad so several loss terms can
share parameters. No general autodiff graph: the model composes these kernels
by hand and every composition is checked against central finite differences.
"""

import numpy as np


class Param:
    """A trainable tensor with its gradient and Adam moment buffers."""

    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0


def zero_grads(params):
    for p in params:
        p.zero_grad()


def _as_batch(x, cols, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{what}: expected a 2-D batch, got shape {x.shape}")
    if cols is not None and x.shape[1] != cols:
        raise ValueError(f"{what}: expected {cols} columns, got {x.shape[1]}")
    return x


class AffineLayer:
    """Dense layer y = x @ W + b with W of shape (in_dim, out_dim)."""

    def __init__(self, weight: Param, bias: Param):
        self.weight = weight
        self.bias = bias
        if weight.value.ndim != 2 or bias.value.ndim != 1:
            raise ValueError("weight must be 2-D and bias 1-D")
        if weight.value.shape[1] != bias.value.shape[0]:
            raise ValueError("weight and bias disagree on out_dim")

    @classmethod
    def create(cls, rng, in_dim: int, out_dim: int):
        # uniform +-sqrt(6 / (fan_in + fan_out)), bias zero
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        w = rng.uniform(-limit, limit, size=(in_dim, out_dim))
        return cls(Param(w), Param(np.zeros(out_dim)))

    @property
    def in_dim(self):
        return self.weight.value.shape[0]

    @property
    def out_dim(self):
        return self.weight.value.shape[1]

    def params(self):
        return [self.weight, self.bias]


def affine_forward(layer: AffineLayer, x) -> np.ndarray:
    x = _as_batch(x, layer.in_dim, "affine_forward")
    return x @ layer.weight.value + layer.bias.value


def affine_backward(layer: AffineLayer, x, grad_y) -> np.ndarray:
    """Accumulate parameter gradients; return the gradient w.r.t. x."""
    x = _as_batch(x, layer.in_dim, "affine_backward")
    grad_y = _as_batch(grad_y, layer.out_dim, "affine_backward grad")
    if grad_y.shape[0] != x.shape[0]:
        raise ValueError("affine_backward: x and grad_y disagree on rows")
    layer.weight.grad += x.T @ grad_y
    layer.bias.grad += grad_y.sum(axis=0)
    return grad_y @ layer.weight.value.T


def relu_forward(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x, grad_y) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.asarray(grad_y, dtype=np.float64) * (x > 0.0)


def softmax(logits) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross entropy over rows and its gradient w.r.t. the logits."""
    logits = _as_batch(logits, None, "softmax_xent")
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"softmax_xent: {n} rows but {labels.shape} labels")
    if n == 0:
        raise ValueError("softmax_xent: empty batch")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"softmax_xent: label outside [0, {c})")
    p = softmax(logits)
    picked = p[np.arange(n), labels]
    loss = float(-np.log(picked).mean())
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad


class GrlGate:
    """Gradient-reversal gate: identity forward, -lambda scaling backward."""

    __slots__ = ("lam",)

    def __init__(self, lam: float):
        if lam < 0:
            raise ValueError(f"lambda must be non-negative, got {lam}")
        self.lam = float(lam)


def grl_forward(gate: GrlGate, z):
    return z


def grl_backward(gate: GrlGate, upstream) -> np.ndarray:
    return -gate.lam * np.asarray(upstream, dtype=np.float64)


def concat_cols(a, b) -> np.ndarray:
    a = _as_batch(a, None, "concat_cols")
    b = _as_batch(b, None, "concat_cols")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"concat_cols: row mismatch {a.shape[0]} vs {b.shape[0]}")
    return np.concatenate([a, b], axis=1)


def split_cols(h, at: int):
    h = _as_batch(h, None, "split_cols")
    if not 0 <= at <= h.shape[1]:
        raise ValueError(f"split_cols: split point {at} outside [0, {h.shape[1]}]")
    return h[:, :at], h[:, at:]


def adam_step(params, lr: float, t: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update in place from each Param's accumulated grad."""
    if t < 1:
        raise ValueError(f"adam step counter must be >= 1, got {t}")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p in params:
        g = p.grad
        if g.shape != p.value.shape:
            raise ValueError("adam_step: gradient and parameter shapes differ")
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * (g * g)
        p.value -= lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)
        if not np.all(np.isfinite(p.value)):
            raise FloatingPointError("non-finite parameter after Adam update")


class Mlp2:
    """Two affine layers with a ReLU between them."""

    def __init__(self, l1: AffineLayer, l2: AffineLayer):
        self.l1 = l1
        self.l2 = l2

    @classmethod
    def create(cls, rng, in_dim: int, hidden: int, out_dim: int):
        return cls(AffineLayer.create(rng, in_dim, hidden), AffineLayer.create(rng, hidden, out_dim))

    @property
    def in_dim(self):
        return self.l1.in_dim

    @property
    def out_dim(self):
        return self.l2.out_dim

    def params(self):
        return self.l1.params() + self.l2.params()

    def forward(self, x):
        a1 = affine_forward(self.l1, x)
        h1 = relu_forward(a1)
        y = affine_forward(self.l2, h1)
        return y, (x, a1, h1)

    def backward(self, cache, grad_y):
        x, a1, h1 = cache
        grad_h1 = affine_backward(self.l2, h1, grad_y)
        grad_a1 = relu_backward(a1, grad_h1)
        return affine_backward(self.l1, x, grad_a1)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking


def numeric_gradient(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. x, in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |a - n| / max(1, |a|, |n|)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_param_gradients(loss_fn, params, eps: float = 1e-5) -> float:
    """Compare analytic parameter gradients of loss_fn against finite differences.

    loss_fn() must run forward + backward, accumulating into param grads, and
    return the scalar loss. Returns the worst relative error over all params.
    """
    zero_grads(params)
    loss_fn()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        def forward_only():
            zero_grads(params)
            return loss_fn()

        numeric = numeric_gradient(forward_only, p.value, eps)
        worst = max(worst, max_rel_error(a, numeric))
    zero_grads(params)
    return worst


def kernel_gradient_checks(seed: int, eps: float = 1e-5) -> dict:
    """Finite-difference checks for every kernel; returns name -> max rel error."""
    rng = np.random.default_rng(seed)
    results = {}

    # affine: scalar loss = sum(tanh(y)) to mix rows/cols nonlinearly
    layer = AffineLayer.create(rng, 4, 3)
    x = rng.normal(size=(5, 4))
    downstream = rng.normal(size=(5, 3))

    def affine_loss():
        y = affine_forward(layer, x)
        loss = float(np.sum(np.tanh(y) * downstream))
        grad_y = (1.0 - np.tanh(y) ** 2) * downstream
        affine_backward(layer, x, grad_y)
        return loss

    results["affine"] = check_param_gradients(affine_loss, layer.params(), eps)

    # relu: inputs pushed away from the kink so differences are two-sided
    def off_kink(v):
        return np.where(np.abs(v) < 0.1, v + 0.2 * np.sign(v) + 0.01, v)

    z = off_kink(rng.normal(size=(6, 3)))
    w = Param(off_kink(rng.normal(size=(6, 3))))
    mix = rng.normal(size=(6, 3))

    def relu_loss():
        y = relu_forward(w.value * z)
        loss = float(np.sum(y * mix))
        grad_in = relu_backward(w.value * z, mix)
        w.grad += grad_in * z
        return loss

    results["relu"] = check_param_gradients(relu_loss, [w], eps)

    # softmax cross entropy through logits held as a Param
    logits = Param(rng.normal(size=(5, 4)))
    labels = rng.integers(0, 4, size=5)

    def xent_loss():
        loss, grad = softmax_xent(logits.value, labels)
        logits.grad += grad
        return loss

    results["softmax_xent"] = check_param_gradients(xent_loss, [logits], eps)

    # gradient reversal composed with a quadratic head
    gate = GrlGate(lam=0.7)
    zp = Param(rng.normal(size=(4, 3)))
    target = rng.normal(size=(4, 3))

    def grl_loss():
        out = grl_forward(gate, zp.value)
        loss = float(-gate.lam * 0.5 * np.sum((out - target) ** 2))
        zp.grad += grl_backward(gate, out - target)
        return loss

    results["grl"] = check_param_gradients(grl_loss, [zp], eps)

    # concat/split routing
    a = Param(rng.normal(size=(3, 2)))
    b = Param(rng.normal(size=(3, 4)))
    mix2 = rng.normal(size=(3, 6))

    def concat_loss():
        h = concat_cols(a.value, b.value)
        loss = float(np.sum(np.sin(h) * mix2))
        grad_h = np.cos(h) * mix2
        ga, gb = split_cols(grad_h, a.value.shape[1])
        a.grad += ga
        b.grad += gb
        return loss

    results["concat_split"] = check_param_gradients(concat_loss, [a, b], eps)

    # two-layer MLP block
    mlp = Mlp2.create(rng, 4, 5, 3)
    xm = rng.normal(size=(6, 4))
    labels_m = rng.integers(0, 3, size=6)

    def mlp_loss():
        y, cache = mlp.forward(xm)
        loss, grad = softmax_xent(y, labels_m)
        mlp.backward(cache, grad)
        return loss

    results["mlp2"] = check_param_gradients(mlp_loss, mlp.params(), eps)

    return results
