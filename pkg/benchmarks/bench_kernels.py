"""Compiled vs numpy kernels: per-call timings and one end-to-end solve per backend.

    python benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""
import argparse
import json
import sys
import timeit
from contextlib import contextmanager

import numpy as np

from docontrol import _kernels_py, kernels
from docontrol.harness.experiments import build_instance, inpainting_config
from docontrol.ilqr import solve

try:
    from docontrol import _ckernels
except ImportError:
    _ckernels = None

NAMES = ("gmm_score_diag", "gmm_score_jvp", "conv2d_reflect", "conv2d_reflect_adjoint")


def cases(rng):
    out = []
    for d, M in ((64, 4), (784, 10)):
        x = rng.standard_normal(d)
        means, variances = rng.standard_normal((M, d)), rng.uniform(0.1, 1.0, (M, d))
        logw = np.log(np.full(M, 1.0 / M))
        _, resp, comp = _kernels_py.gmm_score_diag(x, means, variances, logw)
        out.append((f"gmm_score_diag d={d} M={M}", "gmm_score_diag", (x, means, variances, logw)))
        out.append((f"gmm_score_jvp d={d} M={M}", "gmm_score_jvp", (rng.standard_normal(d), resp, comp, variances)))
    for side, ks in ((8, 5), (28, 9)):
        img, ker = rng.standard_normal((side, side)), rng.uniform(size=(ks, ks))
        out.append((f"conv2d_reflect {side}x{side} k={ks}", "conv2d_reflect", (img, ker)))
        out.append((f"conv2d_reflect_adjoint {side}x{side} k={ks}", "conv2d_reflect_adjoint", (img, ker)))
    return out


def per_call(fn, args, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-7)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


@contextmanager
def backend(module):
    saved = {n: getattr(kernels, n) for n in NAMES}
    for n in NAMES:
        setattr(kernels, n, getattr(module, n))
    try:
        yield
    finally:
        for n, f in saved.items():
            setattr(kernels, n, f)


def end_to_end(module):
    cfg = inpainting_config(seed=0, T=20, num_iters=10)
    with backend(module):
        inst = build_instance(cfg)
        start = timeit.default_timer()
        sol = solve(inst.problem(), cfg.solver)
        return timeit.default_timer() - start, sol.terminal_cost


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="write results to this file")
    args = parser.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation` first", file=sys.stderr)
        return 1
    results = []
    print(f"{'kernel':40s} {'cython (us)':>12s} {'numpy (us)':>12s} {'speedup':>8s}")
    for label, name, fargs in cases(np.random.default_rng(0)):
        tc = per_call(getattr(_ckernels, name), fargs, args.repeat)
        tp = per_call(getattr(_kernels_py, name), fargs, args.repeat)
        results.append({"case": label, "cython_s": tc, "python_s": tp, "speedup": tp / tc})
        print(f"{label:40s} {1e6 * tc:12.2f} {1e6 * tp:12.2f} {tp / tc:8.2f}")
    (tc, cc), (tp, cp) = end_to_end(_ckernels), end_to_end(_kernels_py)
    results.append({"case": "solve d=64 inpainting T=20 10 iters", "cython_s": tc, "python_s": tp,
                    "speedup": tp / tc, "same_cost": bool(np.isclose(cc, cp, rtol=1e-9))})
    print(f"{'solve d=64 inpainting, T=20, 10 iters':40s} {1e3 * tc:10.1f}ms {1e3 * tp:10.1f}ms {tp / tc:8.2f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
