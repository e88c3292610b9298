"""Pure-numpy reference kernels.

Same signatures as the compiled ``_ckernels`` module. Used when the extension
is not built or when ``DOC_PURE_PYTHON=1``.
"""
import numpy as np

_LOG_2PI = np.log(2.0 * np.pi)


def gmm_score_diag(x, means, variances, log_weights):
    """Score of a diagonal Gaussian mixture at ``x``.

    ``means`` and ``variances`` are (M, d) and already carry any noising.
    Returns ``(score, resp, comp_scores)`` where ``resp`` are the posterior
    component weights and ``comp_scores[m] = -(x - mean_m) / var_m``.
    """
    diff = x[None, :] - means
    comp_scores = -diff / variances
    logp = log_weights - 0.5 * np.sum(diff * diff / variances + np.log(variances) + _LOG_2PI, axis=1)
    logp = logp - logp.max()
    resp = np.exp(logp)
    resp /= resp.sum()
    return resp @ comp_scores, resp, comp_scores


def gmm_score_jvp(v, resp, comp_scores, variances):
    """Jacobian of the mixture score applied to ``v`` (the Jacobian is symmetric)."""
    mean_score = resp @ comp_scores
    proj = (comp_scores - mean_score) @ v
    return -(resp @ (1.0 / variances)) * v + (resp * proj) @ comp_scores


def _reflect_index(n, pad):
    idx = np.arange(-pad, n + pad)
    idx = np.where(idx < 0, -idx, idx)
    return np.where(idx >= n, 2 * (n - 1) - idx, idx)


def conv2d_reflect(img, kernel):
    """Correlate ``img`` with an odd-sized ``kernel`` under reflect padding; same-size output."""
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    h, w = img.shape
    padded = img[np.ix_(_reflect_index(h, ph), _reflect_index(w, pw))]
    out = np.zeros((h, w))
    for a in range(kh):
        for b in range(kw):
            out += kernel[a, b] * padded[a:a + h, b:b + w]
    return out


def conv2d_reflect_adjoint(out, kernel):
    """Exact adjoint of :func:`conv2d_reflect`."""
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    h, w = out.shape
    padded = np.zeros((h + 2 * ph, w + 2 * pw))
    for a in range(kh):
        for b in range(kw):
            padded[a:a + h, b:b + w] += kernel[a, b] * out
    rows = _reflect_index(h, ph)
    cols = _reflect_index(w, pw)
    img = np.zeros((h, w))
    np.add.at(img, (rows[:, None], cols[None, :]), padded)
    return img
