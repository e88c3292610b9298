import numpy as np
import pytest

from docontrol import _kernels_py, kernels

KERNEL_NAMES = ("gmm_score_diag", "gmm_score_jvp", "conv2d_reflect", "conv2d_reflect_adjoint")


@pytest.fixture(params=["cython", "python"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    if request.param == "cython":
        if kernels.BACKEND != "cython":
            pytest.skip("compiled kernels not built")
    else:
        for name in KERNEL_NAMES:
            monkeypatch.setattr(kernels, name, getattr(_kernels_py, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jacobian(f, x, h=1e-5):
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.column_stack(cols)


# acceptance criteria report: test_acceptance records one line per criterion
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
