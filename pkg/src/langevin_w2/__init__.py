"""Discrete Langevin chains with general noise and their 2-Wasserstein convergence."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    FiniteSumNoise,
    FiniteSumSpec,
    LogCoshPotential,
    ModelError,
    NoiseModel,
    Potential,
    QuadraticPotential,
    RademacherNoise,
    SphereNoise,
    make_logcosh_potential,
    make_quadratic_potential,
    make_sgd_noise,
    noise_covariance,
    random_quadratic_components,
)
from .chain import (  # noqa: E402
    ChainDivergence,
    EnsembleSnapshot,
    StepSchedule,
    coupled_step,
    run_clt_sequence,
    run_ensemble,
    run_partial_sums,
    step_transition,
)
from .sde import (  # noqa: E402
    ExactGaussian,
    FineEuler,
    SdeSystem,
    euler_maruyama_step,
    fokker_planck_residual,
    sample_invariant,
    stationary_covariance,
)
from .wasserstein import (  # noqa: E402
    EmpiricalMeasure,
    W2Estimate,
    w2,
    w2_exact_1d,
    w2_exact_assignment,
    w2_gaussian_closed_form,
    w2_sliced,
)
from .analysis import LemmaCheckReport, RateFit, check_contraction, fit_rate_slope  # noqa: E402
from .experiments import (  # noqa: E402
    ConfigError,
    ExperimentConfig,
    ExperimentReport,
    load_config,
    run_clt,
    run_homog_rate,
    run_inhomog_rate,
    run_lemma_suite,
)
