"""Discrete directed belief networks trained with adaptive importance
refinement of the recognition network's approximate posterior, plus
exact enumeration oracles that make every stochastic estimator
verifiable at desk scale."""

from .config import ExperimentConfig, load_config, load_preset
from .inference import (
    ImportanceSet,
    RefinementTrace,
    air_step,
    bihm_log_weights,
    effective_sample_size,
    estimate_LK,
    importance_set,
    lowerbound_L1,
    refine,
)
from .model import (
    AutoregressivePrior,
    FactorizedPrior,
    GenerativeParams,
    LayerParams,
    ancestral_sample,
    init_generative,
    joint_logp,
    layer_mean,
    prior_logp,
)
from .numerics import (
    RandomStream,
    bernoulli_logpmf,
    bernoulli_sample,
    logsumexp,
    normalize_log_weights,
)
from .oracle import ExactSummary, exact_kl, exact_L1, exact_logp, exact_posterior
from .recognition import (
    RecognitionParams,
    VariationalState,
    center,
    init_recognition,
    initial_means,
    q_logpmf,
    q_sample,
)
from .training import (
    GradientBundle,
    OptimizerState,
    air_train_step,
    early_stopping,
    finetune_schedule,
    grad_phi_exclusive,
    grad_phi_inclusive,
    grad_theta_reweighted,
    grad_theta_uniform,
    rmsprop_update,
    rws_train_step,
)

__version__ = "0.1.0"
