"""Randomized range finding and matrix-free (Q, B) projected-matrix algebra."""
from dataclasses import dataclass

import numpy as np

from .errors import IllConditionedError

COND_LIMIT = 1e12


class LinOp:
    """An m x n matrix known only through its forward and adjoint actions.

    ``calls`` counts actions so callers can check they never materialize it.
    """

    def __init__(self, shape, matvec, rmatvec=None):
        self.shape = tuple(shape)
        self._matvec = matvec
        self._rmatvec = rmatvec if rmatvec is not None else matvec
        self.calls = {"matvec": 0, "rmatvec": 0}

    def matvec(self, v):
        self.calls["matvec"] += 1
        return np.asarray(self._matvec(v), dtype=float)

    def rmatvec(self, w):
        self.calls["rmatvec"] += 1
        return np.asarray(self._rmatvec(w), dtype=float)

    @classmethod
    def from_dense(cls, A):
        A = np.asarray(A, dtype=float)
        return cls(A.shape, lambda v: A @ v, lambda w: A.T @ w)


@dataclass
class ProjectedMatrix:
    """``Q @ B`` with Q (m x k) column-orthonormal and B (k x n)."""

    Q: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        if self.Q.shape[1] != self.B.shape[0]:
            raise ValueError("Q and B inner dimensions differ")

    @property
    def rank(self):
        return self.Q.shape[1]

    @property
    def shape(self):
        return (self.Q.shape[0], self.B.shape[1])

    @property
    def core(self):
        """k x k matrix ``B Q`` (square matrices only)."""
        return self.B @ self.Q

    def dense(self):
        return self.Q @ self.B

    def matvec(self, v):
        return self.Q @ (self.B @ v)

    def rmatvec(self, w):
        return self.B.T @ (self.Q.T @ w)

    def symmetrized(self):
        """Replace by ``Q sym(core) Q^T`` so the reconstruction is exactly symmetric."""
        core = self.core
        core = 0.5 * (core + core.T)
        return ProjectedMatrix(self.Q, core @ self.Q.T)

    @classmethod
    def from_core(cls, Q, core):
        core = 0.5 * (core + core.T)
        return cls(Q, core @ Q.T)


def randomized_range(linop, k, seed):
    """Orthonormal Q (m x k) spanning ``A @ Omega`` for Gaussian Omega (no power iterations)."""
    m, n = linop.shape
    if not 1 <= k <= min(m, n):
        raise ValueError(f"rank k={k} outside 1..{min(m, n)}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    omega = rng.standard_normal((n, k))
    Y = np.column_stack([linop.matvec(omega[:, j]) for j in range(k)])
    Q, _ = np.linalg.qr(Y)
    return Q


def project(linop, Q):
    """``B = Q^T A`` from k adjoint actions; A itself is never formed."""
    if Q.shape[0] != linop.shape[0]:
        raise ValueError("frame rows must match operator rows")
    B = np.vstack([linop.rmatvec(Q[:, j]) for j in range(Q.shape[1])])
    return ProjectedMatrix(Q, B.reshape(Q.shape[1], linop.shape[1]))


def proj_multiply(Pi, Pj):
    """Product of two projected matrices keeping the leading frame: ``(Q_i, B_i Q_j B_j)``."""
    if Pi.B.shape[1] != Pj.Q.shape[0]:
        raise ValueError("inner dimensions differ")
    return ProjectedMatrix(Pi.Q, (Pi.B @ Pj.Q) @ Pj.B)


def woodbury_inverse_action(diag, C, V):
    """Apply ``(D + Q C_core Q^T)^{-1}`` to a vector or to the columns of a matrix.

    ``C`` is a symmetric PSD ProjectedMatrix (or None for zero). Uses
    ``D^-1 - D^-1 Q C (I + Q^T D^-1 Q C)^-1 Q^T D^-1``, which stays valid for
    singular cores. Cost O(k^3 + k d) per vector.
    """
    diag = np.asarray(diag, dtype=float)
    V = np.asarray(V, dtype=float)
    if not np.all(diag > 0) or not np.all(np.isfinite(diag)):
        raise IllConditionedError("ill-conditioned Q_uu: regularized diagonal is not positive")
    dinv = 1.0 / diag
    scale = dinv if V.ndim == 1 else dinv[:, None]
    base = scale * V
    if C is None or C.rank == 0:
        return base
    Q = C.Q
    core = C.core
    core = 0.5 * (core + core.T)
    k = core.shape[0]
    inner = np.eye(k) + (Q.T * dinv) @ Q @ core
    if not np.all(np.isfinite(inner)) or np.linalg.cond(inner) > COND_LIMIT:
        raise IllConditionedError("ill-conditioned Q_uu: Woodbury core is singular")
    corr = Q @ (core @ np.linalg.solve(inner, Q.T @ base))
    return base - scale * corr
