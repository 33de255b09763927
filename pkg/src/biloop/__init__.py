"""Bilevel optimization with configurable inner (N) and linear-system (Q) loops."""

from .aid import CostCounters, LoopConfig, RunTrace, aid_hypergradient, inner_gd, linear_system_gd, run_aid
from .analysis import (
    RateConstants,
    SchemeId,
    cq_constant,
    default_hyperparams,
    exact_hypergradient,
    finite_difference_hypergradient,
    itd_floor,
    smoothness_constant,
)
from .config import ExperimentConfig, load_config, parse_config
from .estimators import AIDBiO, ITDBiO
from .exceptions import (
    BiloopError,
    ConfigError,
    ContractError,
    ConvergenceError,
    DivergenceError,
    ParameterError,
    SingularMatrixError,
)
from .itd import ItdConfig, Trajectory, inner_gd_with_trajectory, itd_hypergradient, run_itd
from .problems import (
    BilevelOracle,
    OracleConstants,
    make_hyper_cleaning,
    make_hyper_representation,
    make_lower_bound_instance,
    make_quadratic,
    make_random_quadratic,
)
from .runner import SummaryRow, run_experiment, summarize, sweep

__version__ = "0.1.0"
