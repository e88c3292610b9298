"""Score models: analytic Gaussian-mixture scores and a small MLP score network.

Every model exposes ``evaluate(x, s) -> ScoreEval`` where ``s`` is continuous
time in [0, 1]. A ``ScoreEval`` carries the score value plus exact
Jacobian-vector and vector-Jacobian products at the same point.
"""
import json
import logging
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .adam import Adam
from .errors import InvalidStateError, ScheduleError

log = logging.getLogger(__name__)

TIME_EMBED_DIM = 16
HIDDEN = 128
_MAGIC = b"DOCW"
_VERSION = 1


class ScoreEval:
    """Score value at one (x, s) with its Jacobian actions."""

    __slots__ = ("value", "_jvp", "_vjp")

    def __init__(self, value, jvp, vjp=None):
        self.value = value
        self._jvp = jvp
        self._vjp = vjp if vjp is not None else jvp

    def jvp(self, v):
        return self._jvp(np.asarray(v, dtype=float))

    def vjp(self, w):
        return self._vjp(np.asarray(w, dtype=float))


def _check_state(x, dim):
    x = np.ascontiguousarray(x, dtype=float)
    if x.shape != (dim,):
        raise InvalidStateError(f"invalid state: expected shape ({dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidStateError("invalid state: non-finite entries")
    return x


# ---------------------------------------------------------------- mixtures


@dataclass(frozen=True)
class GaussianMixturePrior:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        var = np.atleast_2d(np.asarray(self.variances, dtype=float))
        if var.shape != mu.shape or w.shape != (mu.shape[0],):
            raise ValueError("weights (M,), means (M, d) and variances (M, d) must agree")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if not np.all(var > 0):
            raise ValueError("mixture variances must be strictly positive")
        if not np.all(np.isfinite(mu)):
            raise ValueError("mixture means must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", np.ascontiguousarray(mu))
        object.__setattr__(self, "variances", np.ascontiguousarray(var))

    @property
    def dim(self):
        return self.means.shape[1]

    @classmethod
    def standard_normal(cls, d):
        return cls(np.ones(1), np.zeros((1, d)), np.ones((1, d)))

    def sample(self, n, rng):
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.sqrt(self.variances[comp]) * z

    def log_density(self, x, alpha_bar=1.0):
        """Log-density of the VP-noised mixture, summed directly (no kernels)."""
        x = np.atleast_2d(x)
        mu = np.sqrt(alpha_bar) * self.means
        var = alpha_bar * self.variances + (1.0 - alpha_bar)
        out = []
        for xi in x:
            terms = [
                np.log(w) - 0.5 * np.sum((xi - m) ** 2 / v + np.log(2 * np.pi * v))
                for w, m, v in zip(self.weights, mu, var)
            ]
            out.append(np.logaddexp.reduce(terms))
        return np.array(out)

    def to_dict(self):
        return {
            "kind": "gmm",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["weights"], data["means"], data["variances"])


def save_gmm(prior, path):
    with open(path, "w") as fh:
        json.dump(prior.to_dict(), fh, indent=2, sort_keys=True)


def load_gmm(path):
    with open(path) as fh:
        return GaussianMixturePrior.from_dict(json.load(fh))


class GmmScore:
    """Exact score of a mixture pushed through the VP perturbation kernel."""

    def __init__(self, prior, schedule):
        self.prior = prior
        self.schedule = schedule
        self._log_w = np.log(np.maximum(prior.weights, 1e-300))

    @property
    def dim(self):
        return self.prior.dim

    def noised(self, s):
        ab = float(self.schedule.alpha_bar(s))
        means = np.ascontiguousarray(np.sqrt(ab) * self.prior.means)
        variances = np.ascontiguousarray(ab * self.prior.variances + (1.0 - ab))
        return means, variances

    def evaluate(self, x, s):
        if not 0.0 <= s <= 1.0 + 1e-12:
            raise ScheduleError(f"time out of schedule: s={s}")
        x = _check_state(x, self.dim)
        means, variances = self.noised(s)
        score, resp, comp = kernels.gmm_score_diag(x, means, variances, self._log_w)

        def jvp(v):
            return kernels.gmm_score_jvp(np.ascontiguousarray(v), resp, comp, variances)

        return ScoreEval(np.asarray(score), jvp)

    def __call__(self, x, s):
        return self.evaluate(x, s).value


def gmm_score(prior, schedule, x, t):
    """Score of the noised mixture at integer step ``t`` of ``schedule``."""
    return GmmScore(prior, schedule).evaluate(x, schedule.time(t))


# ---------------------------------------------------------------- network


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def time_embedding(s, dim=TIME_EMBED_DIM):
    s = np.asarray(s, dtype=float)
    freqs = np.exp(np.linspace(0.0, np.log(1000.0), dim // 2))
    arg = s[..., None] * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


class MlpScoreNet:
    """(x, emb(s)) -> 128 -> 128 -> d with softplus activations.

    Parameters live in ``params`` as W1, b1, W2, b2, W3, b3. The network is
    treated as immutable once built; training returns a new instance.
    """

    names = ("W1", "b1", "W2", "b2", "W3", "b3")

    def __init__(self, params, emb_dim=TIME_EMBED_DIM):
        self.params = {k: np.ascontiguousarray(params[k], dtype=float) for k in self.names}
        self.emb_dim = emb_dim
        W1, W3 = self.params["W1"], self.params["W3"]
        if W1.shape[1] != W3.shape[0] + emb_dim:
            raise ValueError("input width must equal output dim + time embedding dim")
        if not all(np.all(np.isfinite(p)) for p in self.params.values()):
            raise ValueError("network parameters must be finite")

    @property
    def dim(self):
        return self.params["W3"].shape[0]

    @property
    def layer_dims(self):
        W1, W2, W3 = self.params["W1"], self.params["W2"], self.params["W3"]
        return (W1.shape[1], W1.shape[0], W2.shape[0], W3.shape[0])

    def copy(self):
        return MlpScoreNet({k: v.copy() for k, v in self.params.items()}, self.emb_dim)

    def _forward(self, X, s):
        p = self.params
        inp = np.concatenate([X, time_embedding(s, self.emb_dim)], axis=-1)
        z1 = inp @ p["W1"].T + p["b1"]
        a1 = _softplus(z1)
        z2 = a1 @ p["W2"].T + p["b2"]
        a2 = _softplus(z2)
        out = a2 @ p["W3"].T + p["b3"]
        return out, (inp, z1, a1, z2, a2)

    def evaluate(self, x, s):
        x = _check_state(x, self.dim)
        out, (_, z1, _, z2, _) = self._forward(x, np.float64(s))
        p = self.params
        W1x = p["W1"][:, : self.dim]
        d1, d2 = _sigmoid(z1), _sigmoid(z2)

        def jvp(v):
            return p["W3"] @ (d2 * (p["W2"] @ (d1 * (W1x @ v))))

        def vjp(w):
            return W1x.T @ (d1 * (p["W2"].T @ (d2 * (p["W3"].T @ w))))

        return ScoreEval(out, jvp, vjp)

    def __call__(self, x, s):
        return self.evaluate(x, s).value

    def batch(self, X, s):
        return self._forward(np.asarray(X, dtype=float), np.asarray(s, dtype=float))[0]

    def loss_and_grads(self, X, s, target_scale, noise):
        """Weighted DSM loss mean ||sigma * net(X, s) + eps||^2 and parameter gradients."""
        p = self.params
        out, (inp, z1, a1, z2, a2) = self._forward(X, s)
        resid = target_scale[:, None] * out + noise
        n = X.shape[0]
        loss = float(np.sum(resid * resid) / n)
        g_out = 2.0 * target_scale[:, None] * resid / n
        grads = {"W3": g_out.T @ a2, "b3": g_out.sum(0)}
        g_z2 = (g_out @ p["W3"]) * _sigmoid(z2)
        grads["W2"] = g_z2.T @ a1
        grads["b2"] = g_z2.sum(0)
        g_z1 = (g_z2 @ p["W2"]) * _sigmoid(z1)
        grads["W1"] = g_z1.T @ inp
        grads["b1"] = g_z1.sum(0)
        return loss, grads

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            dims = self.layer_dims
            fh.write(struct.pack("<II", _VERSION, len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
            fh.write(struct.pack("<I", self.emb_dim))
            for name in self.names:
                fh.write(self.params[name].astype("<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != _MAGIC:
            raise ValueError(f"{path}: not a DOCW parameter file")
        version, ndims = struct.unpack_from("<II", blob, 4)
        if version != _VERSION or ndims != 4:
            raise ValueError(f"{path}: unsupported DOCW version {version}")
        d_in, h1, h2, d_out = struct.unpack_from("<4I", blob, 12)
        (emb_dim,) = struct.unpack_from("<I", blob, 28)
        shapes = {"W1": (h1, d_in), "b1": (h1,), "W2": (h2, h1), "b2": (h2,), "W3": (d_out, h2), "b3": (d_out,)}
        offset, params = 32, {}
        for name in cls.names:
            n = int(np.prod(shapes[name]))
            params[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shapes[name]).copy()
            offset += 8 * n
        if offset != len(blob):
            raise ValueError(f"{path}: trailing bytes in DOCW file")
        return cls(params, emb_dim)


def mlp_score(net, x, t_cont):
    return net.evaluate(x, t_cont)


def random_init_score(d, seed, hidden=HIDDEN, emb_dim=TIME_EMBED_DIM):
    """Untrained network: weights ~ N(0, 1/fan_in), zero biases."""
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    d_in = d + emb_dim

    def w(rows, cols):
        return rng.standard_normal((rows, cols)) / np.sqrt(cols)

    params = {
        "W1": w(hidden, d_in), "b1": np.zeros(hidden),
        "W2": w(hidden, hidden), "b2": np.zeros(hidden),
        "W3": w(d, hidden), "b3": np.zeros(d),
    }
    return MlpScoreNet(params, emb_dim)


def train_dsm(net, samples, schedule, epochs, lr, seed, batch_size=128, t_min=1e-3):
    """Denoising score matching under VP noising.

    Minimizes E||s(x_t, t) + eps / sigma_t||^2 in its sigma_t^2-weighted form,
    which has the same minimizer and bounded targets. Deterministic under
    ``seed``.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValueError("train_dsm needs at least 2 samples")
    if lr <= 0:
        raise ValueError("lr must be positive")
    net = net.copy()
    if epochs == 0:
        return net
    rng = np.random.default_rng(seed)
    opt = {k: Adam(lr=lr) for k in net.names}
    n = samples.shape[0]
    bs = min(batch_size, n)
    loss = float("nan")
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n - bs + 1, bs):
            x0 = samples[order[start:start + bs]]
            s = rng.uniform(t_min, 1.0, size=bs)
            ab = schedule.alpha_bar(s)
            sig = np.sqrt(1.0 - ab)
            eps = rng.standard_normal(x0.shape)
            xt = np.sqrt(ab)[:, None] * x0 + sig[:, None] * eps
            loss, grads = net.loss_and_grads(xt, s, sig, eps)
            for k in net.names:
                net.params[k] -= opt[k].direction(grads[k])
    log.info("train_dsm: final epoch %d loss %.6f", epochs, loss)
    return MlpScoreNet(net.params, net.emb_dim)


# ---------------------------------------------------------------- accounting


class CountingScore:
    """Wraps a score model and counts evaluations (forward, vjp and jvp each count one)."""

    def __init__(self, model):
        self.model = model
        self.nfe = 0

    @property
    def dim(self):
        return self.model.dim

    def evaluate(self, x, s):
        ev = self.model.evaluate(x, s)
        self.nfe += 1

        def jvp(v):
            self.nfe += 1
            return ev.jvp(v)

        def vjp(w):
            self.nfe += 1
            return ev.vjp(w)

        return ScoreEval(ev.value, jvp, vjp)

    def __call__(self, x, s):
        return self.evaluate(x, s).value
