"""Scenario-based optimal control with particle Gibbs posterior samples and certificates."""

from .errors import (
    DegenerateWeightsError,
    DivergenceError,
    NumericalError,
    ParameterError,
    SolverError,
    StageError,
)
from .features import KnownBasisV5, LinearBasis, ReducedRankGPConfig, known_basis_v5, reduced_rank_gp
from .guarantees import (
    Certificate,
    CertificationRequest,
    Refusal,
    certify_cost_bound,
    certify_ocp,
    certify_policy_constraints,
    epsilon_of_s,
    greedy_support,
    theorem1_level,
)
from .model import (
    BasisStateSpaceModel,
    Dataset,
    InitialStatePrior,
    LinearObservation,
    MNIWPrior,
    Scenario,
    StateTrajectory,
    make_rng,
    sample_inverse_wishart,
    sample_matrix_normal,
)
from .ocp import InputBounds, OutputConstraint, ScenarioOCP, Solution, SolverConfig, solve
from .pgas import PGConfig, PosteriorSamples, run_pg, sample_parameters
from .scenario import QuadraticCost, draw_scenarios, rollout_inputs, rollout_policy

__version__ = "0.1.0"
