"""Instance construction and the solve / ablate / compare runners behind the CLI."""
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import baselines
from ..errors import DocError
from ..ilqr import ControlProblem, solve
from ..operators import (
    Measurement, build_operator, class_target, generate_measurement, make_classifier,
    train_classifier,
)
from ..schedule import VpSchedule
from ..scores import GaussianMixturePrior, GmmScore, MlpScoreNet, load_gmm, random_init_score
from . import io
from .config import ABLATE_DIMS, RunConfig
from .metrics import compute_metrics

log = logging.getLogger(__name__)

IMAGE_RANGE = (-1.0, 1.0)


# ---------------------------------------------------------------- priors


def mixture_2d():
    """Three-component planar mixture used by the analytic checks."""
    return GaussianMixturePrior(
        [0.3, 0.3, 0.4],
        [[-2.0, 0.0], [2.0, 0.0], [0.0, 2.0]],
        [[0.3, 0.3], [0.3, 0.3], [0.2, 0.5]],
    )


def image_gmm(side=8, variance=0.05):
    """Mixture over ``side x side`` images in [-1, 1]: four smooth templates (ramps and a wave)."""
    yy, xx = np.mgrid[0:side, 0:side] / max(side - 1, 1)
    templates = [
        np.tanh(3 * (xx - 0.5)),
        np.tanh(3 * (yy - 0.5)),
        0.8 * np.cos(2 * np.pi * xx),
        -np.tanh(3 * (xx + yy - 1)),
    ]
    means = np.array([p.ravel() for p in templates])
    return GaussianMixturePrior(np.full(4, 0.25), means, np.full(means.shape, variance))


PRESETS = {"mixture-2d": mixture_2d, "image-8x8": image_gmm}


def build_prior(spec):
    kind = spec["kind"]
    if kind == "gmm":
        return GaussianMixturePrior(spec["weights"], spec["means"], spec["variances"])
    if kind == "file":
        return load_gmm(spec["path"])
    if kind == "standard-normal":
        return GaussianMixturePrior.standard_normal(int(spec.get("dim", 1)))
    if kind == "image-gmm":
        return image_gmm(int(spec.get("side", 8)), float(spec.get("variance", 0.05)))
    return PRESETS[spec.get("preset", "mixture-2d")]()


def build_score(spec, prior, sched):
    kind = spec.get("kind", "exact")
    if kind == "exact":
        return GmmScore(prior, sched)
    if kind == "mlp":
        net = MlpScoreNet.load(spec["path"])
        if net.dim != prior.dim:
            raise DocError(f"score network has dim {net.dim}, prior has dim {prior.dim}")
        return net
    return random_init_score(prior.dim, int(spec.get("seed", 0)))


# ---------------------------------------------------------------- instances


@dataclass
class Instance:
    prior: GaussianMixturePrior
    sched: VpSchedule
    score: object
    meas: Measurement
    x_true: np.ndarray | None
    image_shape: tuple | None
    x_T: np.ndarray | None = None

    def problem(self, score=None, sched=None):
        return ControlProblem(self.meas, score or self.score, sched or self.sched, self.x_T)

    @property
    def image_range(self):
        return IMAGE_RANGE if self.image_shape is not None else None


def _image_shape(problem, prior):
    if "image_shape" in problem:
        return tuple(int(v) for v in problem["image_shape"])
    if problem["prior"]["kind"] == "image-gmm" or problem["prior"].get("preset") == "image-8x8":
        side = int(problem["prior"].get("side", 8))
        return (side, side)
    return None


def _classifier(spec, prior, seed):
    """Train a small classifier to recognize the mixture component of prior samples."""
    M = len(prior.weights)
    if M < 2:
        raise DocError("classifier operator needs a prior with at least two components")
    rng = np.random.default_rng(int(spec.get("seed", seed)))
    n = int(spec.get("train_samples", 600))
    labels = rng.choice(M, size=n, p=prior.weights)
    X = prior.means[labels] + np.sqrt(prior.variances[labels]) * rng.standard_normal((n, prior.dim))
    clf = make_classifier(prior.dim, M, int(spec.get("hidden", 32)), int(spec.get("seed", seed)))
    return train_classifier(clf, X, labels, int(spec.get("train_steps", 300)), seed=int(spec.get("seed", seed)))


def _x_true(data, prior, seed, image_shape):
    source = data.get("source", "prior-sample")
    if source == "prior-sample":
        return prior.sample(1, np.random.default_rng(int(data.get("seed", seed))))[0]
    if source == "inline":
        return np.asarray(data["x"], dtype=float)
    if source == "csv":
        return np.ravel(io.load_array_csv(data["path"]))
    img = io.read_pgm(data["path"], *IMAGE_RANGE)
    if image_shape is not None and img.shape != tuple(image_shape):
        raise DocError(f"PGM has shape {img.shape}, expected {image_shape}")
    return img.ravel()


def build_instance(cfg: RunConfig, T=None):
    p = cfg.problem
    prior = build_prior(p["prior"])
    sch = p.get("schedule", {})
    sched = VpSchedule(T or cfg.solver.T, sch.get("beta_min", 0.1), sch.get("beta_max", 20.0))
    score = build_score(p.get("score", {}), prior, sched)
    shape = _image_shape(p, prior)
    data = p.get("data", {})
    x_true = None
    if "y" not in p or data.get("source") not in (None, "prior-sample") or "x" in data:
        x_true = _x_true(data, prior, cfg.seed, shape)
        if x_true.shape != (prior.dim,):
            raise DocError(f"ground truth has {x_true.size} entries, prior has dim {prior.dim}")
    op_spec = p["operator"]
    if op_spec["kind"] == "classifier":
        op = _classifier(op_spec, prior, cfg.seed)
        if "target" in op_spec:
            meas = class_target(op, int(op_spec["target"]))
        else:
            meas = generate_measurement(op, x_true, 0.0, 0)
    else:
        op = build_operator(op_spec, prior.dim, shape, rng_seed=cfg.seed)
        if "y" in p:
            meas = Measurement(np.atleast_1d(np.asarray(p["y"], dtype=float)), float(p["sigma"]), op)
        else:
            noise_seed = int(data.get("noise_seed", cfg.seed + 1))
            meas = generate_measurement(op, x_true, float(p["sigma"]), noise_seed)
        if "likelihood_sigma" in p:
            meas = meas.with_sigma(float(p["likelihood_sigma"]))
    x_T = np.asarray(p["x_T"], dtype=float) if "x_T" in p else None
    return Instance(prior, sched, score, meas, x_true, shape, x_T)


# ---------------------------------------------------------------- runners


def _write_signal(out_dir, name, x, shape, save_pgm):
    io.save_array_csv(os.path.join(out_dir, f"{name}.csv"), x)
    if shape is not None and save_pgm:
        io.write_pgm(os.path.join(out_dir, f"{name}.pgm"), np.reshape(x, shape), *IMAGE_RANGE)


def run_solve(cfg: RunConfig, out_dir):
    """Solve one instance and write its artifacts; returns the metrics record."""
    io.ensure_dir(out_dir)
    inst = build_instance(cfg)
    sol = solve(inst.problem(), cfg.solver)
    rec = compute_metrics(sol.x0, inst.x_true, inst.meas, sol.nfe, sol.wall_seconds, inst.image_range)
    io.write_metrics_csv(os.path.join(out_dir, "metrics.csv"), [(("solve",), rec, "ok")])
    save_pgm = cfg.output.get("save_pgm", True)
    _write_signal(out_dir, "x0", sol.x0, inst.image_shape, save_pgm)
    if inst.x_true is not None:
        _write_signal(out_dir, "x_true", inst.x_true, inst.image_shape, save_pgm)
    io.save_array_csv(os.path.join(out_dir, "y.csv"), inst.meas.y)
    if cfg.output.get("save_trajectory", True):
        sol.trajectory.to_csv(os.path.join(out_dir, "trajectory.csv"))
        io.save_array_csv(os.path.join(out_dir, "controls.csv"), sol.controls)
    manifest = {
        "command": "solve",
        "config": cfg.echo(),
        "seed": cfg.seed,
        "cost_history": sol.cost_history,
        "accepted": sol.accepted,
        "lam_history": sol.lam_history,
        "nfe": sol.nfe,
        "metrics": {k: v for k, v in rec.to_dict().items() if k != "wall_seconds"},
        "nfe_accounting": "every score forward, vjp and jvp counts as one evaluation",
        "timing_file": "timing.json",
    }
    io.write_json(os.path.join(out_dir, "manifest.json"), manifest)
    io.write_json(os.path.join(out_dir, "timing.json"), {"wall_seconds": sol.wall_seconds})
    return rec


def _ablation_point(args):
    cfg, field, value, out_dir = args
    try:
        point = cfg.with_solver(**{field: value})
        return value, run_solve(point, out_dir), "ok"
    except (DocError, ValueError, ArithmeticError) as exc:
        log.warning("ablation point %s=%s failed: %s", field, value, exc)
        return value, None, f"error: {exc}".replace("\n", " ")


def run_ablation(cfg: RunConfig, dimension, grid, out_dir, jobs=1):
    """One solve per grid value, each in its own subdirectory; failures are recorded, not raised."""
    if not grid:
        raise DocError("ablation grid is empty")
    if dimension not in ABLATE_DIMS:
        raise DocError(f"unknown ablation dimension {dimension!r}")
    field = ABLATE_DIMS[dimension]
    cast = int if field in ("rank_k", "T") else float
    tasks = [(cfg, field, cast(v), os.path.join(out_dir, f"{dimension}={v}")) for v in grid]
    io.ensure_dir(out_dir)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_ablation_point, tasks))
    else:
        results = [_ablation_point(t) for t in tasks]
    rows = [((dimension, value), rec, status) for value, rec, status in results]
    io.write_metrics_csv(os.path.join(out_dir, "ablation.csv"), rows, key_fields=("dimension", "value"))
    io.write_json(os.path.join(out_dir, "manifest.json"), {
        "command": "ablate", "dimension": dimension, "grid": list(grid),
        "config": cfg.echo(), "seed": cfg.seed,
    })
    return rows


def _baseline_rows(inst, cfg, guidance_scale, T):
    """Uncontrolled, DPS and optimal-control metrics on one instance at one T."""
    rows = []
    x_T = inst.x_T if inst.x_T is not None else np.random.default_rng(cfg.seed).standard_normal(inst.prior.dim)
    unc = baselines.uncontrolled_sample(x_T, inst.score, inst.sched)
    rows.append((("uncontrolled", T), compute_metrics(unc.x0, inst.x_true, inst.meas, unc.nfe, 0.0, inst.image_range), "ok"))
    start = time.perf_counter()
    try:
        dps = baselines.dps_sample(x_T, inst.meas, inst.score, inst.sched, guidance_scale)
        rows.append((("dps", T), compute_metrics(dps.x0, inst.x_true, inst.meas, dps.nfe,
                                                 time.perf_counter() - start, inst.image_range), "ok"))
    except DocError as exc:
        rows.append((("dps", T), None, f"error: {exc}"))
    solver = cfg.with_solver(T=T).solver
    try:
        sol = solve(ControlProblem(inst.meas, inst.score, inst.sched, x_T), solver)
        rows.append((("control", T), compute_metrics(sol.x0, inst.x_true, inst.meas, sol.nfe,
                                                     sol.wall_seconds, inst.image_range), "ok"))
    except DocError as exc:
        rows.append((("control", T), None, f"error: {exc}"))
    return rows


def residual_reduction(before, after):
    """Fraction of the uncontrolled residual removed; a failed run counts as no reduction."""
    if after is None or not np.isfinite(after) or before <= 0:
        return float("-inf")
    return 1.0 - after / before


def run_compare(cfg: RunConfig, out_dir):
    io.ensure_dir(out_dir)
    gamma = float(cfg.compare.get("guidance_scale", 1.0))
    T_grid = [int(T) for T in cfg.compare.get("T_grid", [cfg.solver.T])]
    rows = []
    for T in T_grid:
        rows.extend(_baseline_rows(build_instance(cfg, T), cfg, gamma, T))
    io.write_metrics_csv(os.path.join(out_dir, "compare.csv"), rows, key_fields=("method", "T"))
    summary = {}
    for T in T_grid:
        by = {k[0]: rec for k, rec, _ in rows if k[1] == T}
        base = by["uncontrolled"].measurement_residual
        summary[str(T)] = {
            m: residual_reduction(base, by[m].measurement_residual if by[m] is not None else None)
            for m in ("dps", "control")
        }
    io.write_json(os.path.join(out_dir, "manifest.json"), {
        "command": "compare", "config": cfg.echo(), "seed": cfg.seed,
        "guidance_scale": gamma, "T_grid": T_grid, "residual_reduction": summary,
    })
    return rows, summary


# ---------------------------------------------------------------- desk instances


def inpainting_config(seed=0, T=20, rank_k=1, num_iters=50, lr=0.005, mode="output", score=None):
    """Fixed-seed d=64 random-inpainting instance: 92% of pixels dropped, sigma = 0.05."""
    from .config import parse_config

    return parse_config({
        "seed": seed,
        "problem": {
            "prior": {"kind": "image-gmm", "side": 8, "variance": 0.05},
            "score": score or {"kind": "exact"},
            "operator": {"kind": "mask", "keep_fraction": 0.08, "seed": seed},
            "sigma": 0.05,
            "data": {"source": "prior-sample", "seed": seed, "noise_seed": seed + 100},
        },
        "solver": {"T": T, "num_iters": num_iters, "rank_k": rank_k, "mode": mode,
                   "adam": {"lr": lr}},
        "output": {},
    })
