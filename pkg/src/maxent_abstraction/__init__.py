"""Maximum-entropy abstractions of probabilistic systems.

An abstraction is a vector of feature-expectation targets; its meaning is the
maximum-entropy distribution it induces.  The package solves for those
distributions, scores how well an abstraction answers queries about the
system, learns abstractions and abstract dynamics, and measures how
compressible a density is as a Gaussian mixture.
"""

__version__ = "0.1.0"

from .abstractability import (
    AbstractabilityReport,
    MinEntropyMixture,
    MixtureModel,
    TargetDensity,
    abstractability_score,
    fit_min_entropy_mixture,
)
from .bridge import (
    Dataset,
    JointDistribution,
    PriorSpec,
    VIProblem,
    hardest_query_check,
    info_decomposition_check,
    infomax_bruteforce_check,
    mle_map_reduction_check,
    vi_maxent_check,
)
from .dynamics import (
    AbstractDynamics,
    AbstractDynamicsLearner,
    MarkovSystem,
    PathConstraintSet,
    StateEncoder,
    Trajectory,
    dynamical_loss,
    learn_abstract_dynamics,
    rollout_ensemble,
    solve_maxcal,
)
from .evaluation import (
    AbstractionModel,
    LossReport,
    abstraction_loss,
    perfect_abstraction_check,
    queryset_loss,
)
from .exceptions import *  # noqa: F401,F403
from .information import conditional_mutual_information, mutual_information
from .learning import (
    AbstractionLearner,
    LearningConfig,
    learn_composite_query,
    learn_encoder,
    learn_targets,
    select_dimension,
)
from .maxent import (
    ConstraintSet,
    DiscreteDistribution,
    FeatureFunction,
    MaxEntModel,
    MaxEntSolution,
    SolverOptions,
    StateSpace,
    analytic_boltzmann,
    analytic_gaussian,
    solve_maxent,
)
from .queries import DivergenceSpec, Query, QuerySet, apply_query, divergence, kl_divergence
