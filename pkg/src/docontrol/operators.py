"""Forward measurement operators and the Gaussian / cross-entropy terminal cost."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .adam import Adam
from .errors import DegenerateLikelihoodError, InvalidStateError

KINDS = ("identity", "mask", "downsample", "gaussian-blur", "motion-blur", "classifier")


class ForwardOperator:
    """Base class. Subclasses define ``apply``, ``jvp`` and ``vjp`` on flat vectors."""

    kind = None
    linear = True

    def __init__(self, in_dim, out_dim):
        self.in_dim = in_dim
        self.out_dim = out_dim

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.in_dim,):
            raise InvalidStateError(f"{self.kind}: expected input of shape ({self.in_dim},), got {x.shape}")
        return x

    def _check_out(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.out_dim,):
            raise InvalidStateError(f"{self.kind}: expected seed of shape ({self.out_dim},), got {w.shape}")
        return w

    def __call__(self, x):
        return self.apply(x)


class Identity(ForwardOperator):
    kind = "identity"

    def __init__(self, d):
        super().__init__(d, d)

    def apply(self, x):
        return self._check(x).copy()

    def jvp(self, x, v):
        return self._check(v).copy()

    def vjp(self, x, w):
        return self._check_out(w).copy()


class Mask(ForwardOperator):
    """Keeps the entries at ``indices`` (sorted, unique)."""

    kind = "mask"

    def __init__(self, d, indices):
        idx = np.unique(np.asarray(indices, dtype=int))
        if idx.size == 0 or idx[0] < 0 or idx[-1] >= d:
            raise ValueError("mask indices must be a nonempty subset of 0..d-1")
        super().__init__(d, idx.size)
        self.indices = idx

    def apply(self, x):
        return self._check(x)[self.indices]

    def jvp(self, x, v):
        return self._check(v)[self.indices]

    def vjp(self, x, w):
        out = np.zeros(self.in_dim)
        out[self.indices] = self._check_out(w)
        return out


def random_mask(d, keep_fraction=0.08, seed=0):
    """Uniformly drop ``1 - keep_fraction`` of the entries."""
    m = max(1, int(round(keep_fraction * d)))
    rng = np.random.default_rng(seed)
    return Mask(d, np.sort(rng.choice(d, size=m, replace=False)))


class Downsample(ForwardOperator):
    """Average pooling of an (H, W) image over ``factor`` x ``factor`` blocks."""

    kind = "downsample"

    def __init__(self, shape, factor=4):
        h, w = shape
        if h % factor or w % factor:
            raise ValueError(f"image shape {shape} not divisible by factor {factor}")
        super().__init__(h * w, (h // factor) * (w // factor))
        self.shape = (h, w)
        self.factor = factor

    def _pool(self, x):
        h, w = self.shape
        f = self.factor
        return x.reshape(h // f, f, w // f, f).mean(axis=(1, 3)).ravel()

    def apply(self, x):
        return self._pool(self._check(x))

    def jvp(self, x, v):
        return self._pool(self._check(v))

    def vjp(self, x, w):
        h, w_ = self.shape
        f = self.factor
        g = self._check_out(w).reshape(h // f, w_ // f) / (f * f)
        return np.repeat(np.repeat(g, f, axis=0), f, axis=1).ravel()


class Blur(ForwardOperator):
    """Reflect-padded 2-D correlation with a fixed odd-sized kernel."""

    def __init__(self, shape, kernel, kind):
        kernel = np.ascontiguousarray(kernel, dtype=float)
        if kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
            raise ValueError("blur kernel sides must be odd")
        if kernel.shape[0] // 2 >= shape[0] or kernel.shape[1] // 2 >= shape[1]:
            raise ValueError("blur kernel too large for reflect padding on this image")
        super().__init__(shape[0] * shape[1], shape[0] * shape[1])
        self.shape = tuple(shape)
        self.kernel = kernel
        self.kind = kind

    def _conv(self, x):
        return kernels.conv2d_reflect(np.ascontiguousarray(x.reshape(self.shape)), self.kernel).ravel()

    def apply(self, x):
        return self._conv(self._check(x))

    def jvp(self, x, v):
        return self._conv(self._check(v))

    def vjp(self, x, w):
        w = np.ascontiguousarray(self._check_out(w).reshape(self.shape))
        return kernels.conv2d_reflect_adjoint(w, self.kernel).ravel()


def gaussian_kernel(size=5, std=1.0):
    r = np.arange(size) - size // 2
    g = np.exp(-0.5 * (r / std) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def motion_kernel(length=5, angle_deg=0.0):
    """Directional box kernel: ``length`` taps along a line through the center."""
    k = np.zeros((length, length))
    c = length // 2
    th = np.deg2rad(angle_deg)
    for o in range(-c, c + 1):
        i = int(round(c - o * np.sin(th)))
        j = int(round(c + o * np.cos(th)))
        k[i, j] += 1.0
    return k / k.sum()


def gaussian_blur(shape, size=5, std=1.0):
    return Blur(shape, gaussian_kernel(size, std), "gaussian-blur")


def motion_blur(shape, length=5, angle_deg=0.0):
    return Blur(shape, motion_kernel(length, angle_deg), "motion-blur")


# ---------------------------------------------------------------- classifier


def _log_softmax(z):
    z = z - z.max()
    return z - np.log(np.sum(np.exp(z)))


class Classifier(ForwardOperator):
    """One-hidden-layer tanh classifier; ``apply`` returns class log-probabilities."""

    kind = "classifier"
    linear = False

    def __init__(self, W1, b1, W2, b2):
        self.W1, self.b1 = np.asarray(W1, float), np.asarray(b1, float)
        self.W2, self.b2 = np.asarray(W2, float), np.asarray(b2, float)
        super().__init__(self.W1.shape[1], self.W2.shape[0])

    @property
    def n_classes(self):
        return self.out_dim

    def logits(self, x):
        return self.W2 @ np.tanh(self.W1 @ x + self.b1) + self.b2

    def logits_jvp(self, x, v):
        a = np.tanh(self.W1 @ x + self.b1)
        return self.W2 @ ((1.0 - a * a) * (self.W1 @ v))

    def logits_vjp(self, x, w):
        a = np.tanh(self.W1 @ x + self.b1)
        return self.W1.T @ ((1.0 - a * a) * (self.W2.T @ w))

    def probs(self, x):
        return np.exp(_log_softmax(self.logits(self._check(x))))

    def apply(self, x):
        return _log_softmax(self.logits(self._check(x)))

    def jvp(self, x, v):
        x = self._check(x)
        dz = self.logits_jvp(x, self._check(v))
        p = np.exp(_log_softmax(self.logits(x)))
        return dz - p @ dz

    def vjp(self, x, w):
        x = self._check(x)
        w = self._check_out(w)
        p = np.exp(_log_softmax(self.logits(x)))
        return self.logits_vjp(x, w - p * w.sum())


def make_classifier(d, n_classes, hidden=32, seed=0):
    rng = np.random.default_rng(seed)
    return Classifier(
        rng.standard_normal((hidden, d)) / np.sqrt(d),
        np.zeros(hidden),
        rng.standard_normal((n_classes, hidden)) / np.sqrt(hidden),
        np.zeros(n_classes),
    )


def train_classifier(clf, X, labels, steps=300, lr=1e-2, seed=0):
    """Full-batch cross-entropy training with Adam; returns a new classifier."""
    X = np.asarray(X, float)
    labels = np.asarray(labels, int)
    params = [clf.W1.copy(), clf.b1.copy(), clf.W2.copy(), clf.b2.copy()]
    opts = [Adam(lr=lr) for _ in params]
    onehot = np.eye(clf.n_classes)[labels]
    n = X.shape[0]
    for _ in range(steps):
        W1, b1, W2, b2 = params
        a = np.tanh(X @ W1.T + b1)
        z = a @ W2.T + b2
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        gz = (p - onehot) / n
        ga = (gz @ W2) * (1 - a * a)
        grads = [ga.T @ X, ga.sum(0), gz.T @ a, gz.sum(0)]
        for prm, g, opt in zip(params, grads, opts):
            prm -= opt.direction(g)
    return Classifier(*params)


# ---------------------------------------------------------------- measurements


@dataclass
class Measurement:
    y: np.ndarray
    sigma: float
    op: ForwardOperator

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if not np.all(np.isfinite(self.y)):
            raise ValueError("measurement must be finite")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @property
    def is_classifier(self):
        return self.op.kind == "classifier"

    def with_sigma(self, sigma):
        return Measurement(self.y, sigma, self.op)


def generate_measurement(op, x_true, sigma, seed):
    """``y = A(x_true) + sigma * z``; for the classifier ``y`` is the one-hot of its argmax."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if op.kind == "classifier":
        return class_target(op, int(np.argmax(op.apply(x_true))))
    clean = op.apply(x_true)
    rng = np.random.default_rng(seed)
    return Measurement(clean + sigma * rng.standard_normal(clean.shape), sigma, op)


def class_target(clf, target):
    return Measurement(np.eye(clf.n_classes)[target], 0.0, clf)


def _require_sigma(meas):
    if not meas.is_classifier and meas.sigma == 0:
        raise DegenerateLikelihoodError("degenerate likelihood: sigma = 0")


def terminal_cost(meas, x0):
    _require_sigma(meas)
    if meas.is_classifier:
        return float(-meas.y @ meas.op.apply(x0))
    r = meas.op.apply(x0) - meas.y
    return float(r @ r / (2.0 * meas.sigma ** 2))


def terminal_cost_grad(meas, x0):
    _require_sigma(meas)
    if meas.is_classifier:
        return -meas.op.vjp(x0, meas.y)
    r = meas.op.apply(x0) - meas.y
    return meas.op.vjp(x0, r) / meas.sigma ** 2


def terminal_cost_hess_action(meas, x0, v):
    """Gauss-Newton Hessian action (positive semidefinite)."""
    _require_sigma(meas)
    op = meas.op
    if meas.is_classifier:
        x0 = op._check(x0)
        p = np.exp(_log_softmax(op.logits(x0)))
        dz = op.logits_jvp(x0, v)
        return op.logits_vjp(x0, p * dz - p * (p @ dz))
    return op.vjp(x0, op.jvp(x0, v)) / meas.sigma ** 2


def measurement_residual(meas, x):
    """``||A(x) - y||``; for the classifier, ``1 - p_target``."""
    if meas.is_classifier:
        return float(1.0 - meas.op.probs(x) @ meas.y)
    return float(np.linalg.norm(meas.op.apply(x) - meas.y))


def build_operator(spec, dim, image_shape=None, rng_seed=0):
    """Construct an operator from a config dict."""
    kind = spec["kind"]
    if kind not in KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    if kind == "identity":
        return Identity(dim)
    if kind == "mask":
        if "indices" in spec:
            return Mask(dim, spec["indices"])
        return random_mask(dim, spec.get("keep_fraction", 0.08), spec.get("seed", rng_seed))
    if kind == "classifier":
        raise ValueError("classifier operators are built by the harness (they need training data)")
    if image_shape is None:
        raise ValueError(f"{kind} needs problem.image_shape")
    if kind == "downsample":
        return Downsample(image_shape, spec.get("factor", 4))
    if kind == "gaussian-blur":
        return gaussian_blur(image_shape, spec.get("size", 5), spec.get("std", 1.0))
    return motion_blur(image_shape, spec.get("length", 5), spec.get("angle", 0.0))
