"""Hot-kernel dispatch: compiled extension when available, numpy otherwise.

Set ``DOC_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("DOC_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

gmm_score_diag = _impl.gmm_score_diag
gmm_score_jvp = _impl.gmm_score_jvp
conv2d_reflect = _impl.conv2d_reflect
conv2d_reflect_adjoint = _impl.conv2d_reflect_adjoint

__all__ = [
    "BACKEND",
    "gmm_score_diag",
    "gmm_score_jvp",
    "conv2d_reflect",
    "conv2d_reflect_adjoint",
]
