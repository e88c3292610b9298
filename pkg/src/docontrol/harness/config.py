"""Run configuration: one JSON document with ``problem``, ``solver`` and ``output`` sections.

Unknown keys are rejected and every referenced file must exist when the
configuration is loaded. Relative paths resolve against the config file's
directory.
"""
import copy
import json
import os
from dataclasses import dataclass, field, fields

from ..errors import ConfigError
from ..ilqr import AdamConfig, SolverConfig

TOP_KEYS = {"problem", "solver", "output", "seed", "training", "ablate", "compare"}
REQUIRED = (("problem",), ("solver",), ("output",), ("problem", "prior"), ("problem", "operator"),
            ("problem", "sigma"), ("solver", "T"))
TRAINING_REQUIRED = (("problem",), ("problem", "prior"), ("output",), ("training",))

PROBLEM_KEYS = {"prior", "score", "operator", "sigma", "likelihood_sigma", "data", "y",
                "image_shape", "x_T", "schedule"}
PRIOR_KEYS = {"kind", "path", "dim", "weights", "means", "variances", "side", "variance", "preset"}
PRIOR_KINDS = {"gmm", "file", "standard-normal", "image-gmm", "preset"}
SCORE_KEYS = {"kind", "path", "seed"}
SCORE_KINDS = {"exact", "mlp", "random-init"}
OPERATOR_KEYS = {"kind", "indices", "keep_fraction", "seed", "factor", "size", "std", "length",
                 "angle", "target", "train_steps", "hidden", "train_samples"}
DATA_KEYS = {"source", "seed", "path", "x", "noise_seed"}
DATA_SOURCES = {"prior-sample", "csv", "pgm", "inline"}
SCHEDULE_KEYS = {"beta_min", "beta_max"}
SOLVER_KEYS = {f.name for f in fields(SolverConfig)}
ADAM_KEYS = {f.name for f in fields(AdamConfig)}
OUTPUT_KEYS = {"dir", "save_trajectory", "save_pgm"}
TRAINING_KEYS = {"epochs", "lr", "n_samples", "seed", "batch_size"}
ABLATE_KEYS = {"dimension", "grid"}
ABLATE_DIMS = {"rank": "rank_k", "alpha": "alpha", "T": "T"}
COMPARE_KEYS = {"guidance_scale", "T_grid"}


def _reject_unknown(section, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(f"'{section}' must be an object")
    extra = sorted(set(data) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(extra)}")


def _need(data, path):
    node = data
    for i, key in enumerate(path):
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(f"missing required key '{'.'.join(path[:i + 1])}'")
        node = node[key]


def _resolve(base, path):
    path = os.path.expanduser(path)
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base, path))


@dataclass
class RunConfig:
    problem: dict
    solver: SolverConfig
    output: dict
    seed: int = 0
    training: dict = field(default_factory=dict)
    ablate: dict = field(default_factory=dict)
    compare: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def out_dir(self):
        return self.output.get("dir", "runs/default")

    def with_solver(self, **changes):
        """Copy with solver fields replaced (used by the ablation runner)."""
        new = copy.deepcopy(self)
        for key, value in changes.items():
            setattr(new.solver, key, value)
            new.raw.setdefault("solver", {})[key] = value
        new.solver.__post_init__()
        return new

    def with_seed(self, seed):
        new = copy.deepcopy(self)
        new.seed = int(seed)
        new.solver.seed = int(seed)
        new.raw["seed"] = int(seed)
        return new

    def echo(self):
        """Configuration as run, without the output location (keeps artifacts location-independent)."""
        data = copy.deepcopy(self.raw)
        data.get("output", {}).pop("dir", None)
        data["seed"] = self.seed
        data["solver"] = self.solver.to_dict()
        return data


def parse_config(data, base_dir=".", required=REQUIRED):
    """Validate a config mapping and build a :class:`RunConfig`."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown("<top>", data, TOP_KEYS)
    for path in required:
        _need(data, path)
    data = copy.deepcopy(data)
    data.setdefault("solver", {"T": 1})
    data["problem"].setdefault("operator", {"kind": "identity"})
    data["problem"].setdefault("sigma", 1.0)
    problem = data["problem"]
    _reject_unknown("problem", problem, PROBLEM_KEYS)
    _check_problem(problem, base_dir)

    solver = dict(data["solver"])
    _reject_unknown("solver", solver, SOLVER_KEYS)
    if "adam" in solver:
        _reject_unknown("solver.adam", solver["adam"], ADAM_KEYS)
        solver["adam"] = AdamConfig(**solver["adam"])
    seed = int(data.get("seed", solver.get("seed", 0)))
    solver["seed"] = seed
    try:
        solver_cfg = SolverConfig(**solver)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid solver section: {exc}") from exc

    output = data["output"]
    _reject_unknown("output", output, OUTPUT_KEYS)
    if "dir" in output:
        output["dir"] = _resolve(base_dir, output["dir"])

    training = data.get("training", {})
    _reject_unknown("training", training, TRAINING_KEYS)
    ablate = data.get("ablate", {})
    _reject_unknown("ablate", ablate, ABLATE_KEYS)
    if ablate and ablate.get("dimension") not in (None, *ABLATE_DIMS):
        raise ConfigError(f"ablate.dimension must be one of {sorted(ABLATE_DIMS)}")
    compare = data.get("compare", {})
    _reject_unknown("compare", compare, COMPARE_KEYS)
    return RunConfig(problem, solver_cfg, output, seed, training, ablate, compare, raw=data)


def _check_problem(problem, base_dir):
    prior = problem["prior"]
    _reject_unknown("problem.prior", prior, PRIOR_KEYS)
    if prior.get("kind") not in PRIOR_KINDS:
        raise ConfigError(f"problem.prior.kind must be one of {sorted(PRIOR_KINDS)}")
    if prior["kind"] == "file":
        _need(problem, ("prior", "path"))
    score = problem.setdefault("score", {"kind": "exact"})
    _reject_unknown("problem.score", score, SCORE_KEYS)
    if score.get("kind", "exact") not in SCORE_KINDS:
        raise ConfigError(f"problem.score.kind must be one of {sorted(SCORE_KINDS)}")
    if score.get("kind") == "mlp":
        _need(problem, ("score", "path"))
    _reject_unknown("problem.operator", problem["operator"], OPERATOR_KEYS)
    _need(problem, ("operator", "kind"))
    data = problem.setdefault("data", {"source": "prior-sample"})
    _reject_unknown("problem.data", data, DATA_KEYS)
    if data.get("source", "prior-sample") not in DATA_SOURCES:
        raise ConfigError(f"problem.data.source must be one of {sorted(DATA_SOURCES)}")
    if data.get("source") in ("csv", "pgm"):
        _need(problem, ("data", "path"))
    if "schedule" in problem:
        _reject_unknown("problem.schedule", problem["schedule"], SCHEDULE_KEYS)
    sigma = problem["sigma"]
    if not isinstance(sigma, (int, float)) or sigma < 0:
        raise ConfigError("problem.sigma must be a number >= 0")
    for section in (prior, score, data):
        if "path" in section:
            section["path"] = _resolve(base_dir, section["path"])
            if not os.path.exists(section["path"]):
                raise ConfigError(f"referenced file does not exist: {section['path']}")


def load_config(path, required=REQUIRED):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(data, os.path.dirname(os.path.abspath(path)), required)
