"""Inverse problems solved by optimal control of the diffusion probability-flow sampler."""
from .adam import Adam
from .baselines import (
    BaselineResult, dps_sample, tweedie_x0, uncontrolled_sample,
    verify_input_mode_predictor_corrector, verify_output_mode_equivalence,
)
from .dynamics import INPUT, OUTPUT, Trajectory, controlled_step, euler_pf_step, rollout
from .errors import (
    ConfigError, DegenerateLikelihoodError, DivergenceError, DocError, IllConditionedError,
    InvalidStateError, ScheduleError,
)
from .ilqr import (
    AdamConfig, ControlProblem, GainSchedule, Solution, SolverConfig, ValueExpansion,
    backward_pass, forward_pass, init_value_expansion, solve,
)
from .lowrank import LinOp, ProjectedMatrix, proj_multiply, project, randomized_range, woodbury_inverse_action
from .operators import (
    Classifier, Downsample, ForwardOperator, Identity, Mask, Measurement, gaussian_blur,
    generate_measurement, motion_blur, random_mask, terminal_cost, terminal_cost_grad,
    terminal_cost_hess_action,
)
from .schedule import VpSchedule
from .scores import (
    GaussianMixturePrior, GmmScore, MlpScoreNet, gmm_score, mlp_score, random_init_score, train_dsm,
)

__version__ = "0.1.0"
