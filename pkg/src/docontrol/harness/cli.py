"""Command line: ``docontrol {solve,ablate,compare,train-score,verify-theorems}``.

Exit codes: 0 success, 1 solver or model error, 2 configuration error.
The log level comes from ``DOC_LOG_LEVEL`` (error, info or debug).
"""
import argparse
import logging
import os
import sys

import numpy as np

from .. import baselines
from ..errors import ConfigError, DocError
from ..ilqr import ControlProblem
from ..operators import Identity, Measurement
from ..schedule import VpSchedule
from ..scores import GmmScore, random_init_score, train_dsm
from . import io
from .config import TRAINING_REQUIRED, load_config
from .experiments import build_instance, build_prior, mixture_2d, run_ablation, run_compare, run_solve

log = logging.getLogger("docontrol")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    name = os.environ.get("DOC_LOG_LEVEL", "error").lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"DOC_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s")


def _load(args, required=None):
    cfg = load_config(args.config) if required is None else load_config(args.config, required)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = args.out or cfg.out_dir
    return cfg, out


def cmd_solve(args):
    cfg, out = _load(args)
    rec = run_solve(cfg, out)
    print(f"solve: terminal_cost={rec.terminal_cost:.6g} residual={rec.measurement_residual:.6g} "
          f"psnr={rec.psnr:.4g} nfe={rec.nfe} -> {out}")
    return 0


def _parse_grid(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def cmd_ablate(args):
    cfg, out = _load(args)
    dimension = args.dimension or cfg.ablate.get("dimension")
    grid = _parse_grid(args.grid) if args.grid else cfg.ablate.get("grid", [])
    if dimension is None:
        raise ConfigError("missing required key 'ablate.dimension' (or pass --dimension)")
    if not grid:
        raise ConfigError("missing required key 'ablate.grid' (or pass --grid)")
    try:
        cast = float if dimension == "alpha" else int
        grid = [cast(v) for v in grid]
    except ValueError as exc:
        raise ConfigError(f"invalid grid value: {exc}") from exc
    rows = run_ablation(cfg, dimension, grid, out, jobs=args.jobs)
    for (_, value), rec, status in rows:
        cost = f"{rec.terminal_cost:.6g}" if rec is not None else "-"
        print(f"{dimension}={value}: terminal_cost={cost} {status}")
    return 0


def cmd_compare(args):
    cfg, out = _load(args)
    rows, summary = run_compare(cfg, out)
    for (method, T), rec, status in rows:
        res = f"{rec.measurement_residual:.6g}" if rec is not None else "-"
        print(f"{method:12s} T={T}: residual={res} {status}")
    for T, red in summary.items():
        print(f"T={T}: residual reduction dps={red['dps']:.3f} control={red['control']:.3f}")
    return 0


def cmd_train_score(args):
    cfg, out = _load(args, TRAINING_REQUIRED)
    tr = cfg.training
    prior = build_prior(cfg.problem["prior"])
    seed = int(tr.get("seed", cfg.seed))
    samples = prior.sample(int(tr.get("n_samples", 2000)), np.random.default_rng(seed))
    net = random_init_score(prior.dim, seed)
    sch = cfg.problem.get("schedule", {})
    sched = VpSchedule(1, sch.get("beta_min", 0.1), sch.get("beta_max", 20.0))
    net = train_dsm(net, samples, sched, int(tr.get("epochs", 100)), float(tr.get("lr", 1e-3)),
                    seed, batch_size=int(tr.get("batch_size", 128)))
    io.ensure_dir(out)
    path = os.path.join(out, "score.docw")
    net.save(path)
    io.write_json(os.path.join(out, "manifest.json"), {"command": "train-score", "config": cfg.echo(),
                                                       "seed": seed, "weights": "score.docw"})
    print(f"train-score: wrote {path}")
    return 0


def _equivalence_problem(args):
    """Problem for the equivalence checks: the config's instance, or a d=2 mixture with identity measurement."""
    T = 20
    if args.config:
        cfg, _ = _load(args)
        inst = build_instance(cfg)
        return inst.problem(), inst.sched, inst.prior
    sched = VpSchedule(T)
    prior = mixture_2d()
    meas = Measurement(np.array([0.8, 0.3]), 0.1, Identity(2))
    return ControlProblem(meas, GmmScore(prior, sched), sched), sched, prior


def cmd_verify(args):
    problem, sched, prior = _equivalence_problem(args)
    seed = args.seed or 0
    const = VpSchedule(sched.T, 5.0, 5.0)
    const_score = GmmScore(prior, const) if isinstance(problem.score, GmmScore) else problem.score
    const_problem = ControlProblem(problem.meas, const_score, const, problem.x_T)
    reports = {
        "output_mode_equivalence": baselines.verify_output_mode_equivalence(problem, sched, seed=seed),
        "dps_recovery": baselines.verify_output_mode_equivalence(const_problem, const, alpha_rule="inverse-g2dt", seed=seed),
        "predictor_corrector": baselines.verify_input_mode_predictor_corrector(problem, sched, seed=seed),
    }
    checks = {
        "output_mode_equivalence": reports["output_mode_equivalence"]["min_cosine"] >= 1 - 1e-9
        and reports["output_mode_equivalence"]["ratio_vs_one_over_alpha_max_rel_err"] <= 1e-8,
        "dps_recovery": reports["dps_recovery"]["min_cosine"] >= 1 - 1e-9
        and np.ptp(reports["dps_recovery"]["ratio_over_g2_dt"]) <= 1e-6 * np.mean(reports["dps_recovery"]["ratio_over_g2_dt"]),
        "predictor_corrector": reports["predictor_corrector"]["max_residual"] <= 1e-8,
    }
    if args.out:
        io.ensure_dir(args.out)
        for name, rep in reports.items():
            io.write_json(os.path.join(args.out, f"{name}.json"), rep)
    for name, ok in checks.items():
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
    print(f"dps_recovery: realized constant = {np.mean(reports['dps_recovery']['ratio_over_g2_dt']):.12g} x g^2 dt")
    return 0 if all(checks.values()) else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="docontrol", description="Diffusion sampling as optimal control.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    common(sub.add_parser("solve", help="run the iLQR solver on one instance"))
    p = sub.add_parser("ablate", help="sweep rank, alpha or T")
    common(p)
    p.add_argument("--dimension", choices=["rank", "alpha", "T"])
    p.add_argument("--grid", help="comma-separated values")
    common(sub.add_parser("compare", help="uncontrolled vs DPS vs optimal control"))
    common(sub.add_parser("train-score", help="train the MLP score by denoising score matching"))
    common(sub.add_parser("verify-theorems", help="run the equivalence checks"), config_required=False)
    return parser


COMMANDS = {
    "solve": cmd_solve, "ablate": cmd_ablate, "compare": cmd_compare,
    "train-score": cmd_train_score, "verify-theorems": cmd_verify,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DocError, ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
