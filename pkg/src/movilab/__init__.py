"""Tabular approximate dynamic programming with momentum (MoVI) and its comparators."""

__version__ = "0.1.0"

from .garnet import GarnetSpec, generate
from .mdp import (
    ContractError,
    FiniteMdp,
    NumericalError,
    apply_policy_kernel,
    bellman_eval,
    bellman_opt,
    exact_q_of_policy,
    greedy,
    occupancy,
    optimal_q,
    sup_norm,
    weighted_lp_norm,
)
from .schemes import (
    SCHEME_IDS,
    BetaSchedule,
    ExactModel,
    GenerativeModel,
    InjectedNoiseModel,
    SchemeState,
    run_scheme,
)
