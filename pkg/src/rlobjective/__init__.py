"""Objective transforms induced by advantage weightings in binary-reward policy gradients."""
from .errors import (
    BudgetExceededError,
    ConfigurationError,
    DegenerateScheduleError,
    DivergenceError,
    DomainError,
    ObjectiveUndefinedError,
)
from .estimator import (
    GradientEstimate,
    GroupSample,
    Skip,
    algorithm1_estimate,
    conditional_expectation_oracle,
    exact_expectation_oracle,
    rejection_to_B_estimate,
    sample_group,
    tuple_enumeration_oracle,
)
from .policy import (
    Corpus,
    PromptTask,
    TabularPolicy,
    exact_grad_objective,
    exact_objective,
    finite_diff_check,
    grad_log_prob,
    grad_p_correct,
    load_corpus,
    p_correct,
    probs,
)
from .schedule import (
    AdvantageSchedule,
    advantage,
    bernstein_fit,
    bernstein_poly,
    grpo,
    grpo_variance,
    mean_of_correct,
    parse_schedule_spec,
    vanilla,
)
from .specfun import RefTransform, binom_pmf, harmonic, log_binom, reg_inc_beta_int
from .trainer import Trajectory, TrainerConfig, expected_update_check, train
from .transform import (
    InducedTransform,
    eval_h,
    eval_kappa,
    induced,
    normalized_h,
    rejection_closed_form,
    sweep,
)

__version__ = "0.1.0"
