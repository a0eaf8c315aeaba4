"""Corruption-robust pessimistic value iteration desk testbed."""

from __future__ import annotations

from .adversary import AttackSpec, CorruptionReport, account_corruption, corrupt
from .const import VERSION
from .dataset import OfflineDataset, TruthSidecar, collect, load_dataset, serialize_dataset
from .envs import (
    LinearMDP,
    Policy,
    TabularMDP,
    build_linear_mdp,
    build_lower_bound_pair,
    build_tabular_mdp,
    evaluate_policy,
    solve_optimal,
)
from .errors import CrPeviError
from .evaluation import CoverageReport, bellman_residual, coverage_coefficient, suboptimality
from .harness import emit_plots, run_sweep
from .solver import SolveReport, SolverConfig, cords_pevi, cr_pevi, pevi
from .weights import FiniteBackend, LinearBackend, WeightVector, iterate_weights, iterate_weights_shifted, uncertainty

__version__ = VERSION

__all__ = [
    "AttackSpec",
    "CorruptionReport",
    "CoverageReport",
    "CrPeviError",
    "FiniteBackend",
    "LinearBackend",
    "LinearMDP",
    "OfflineDataset",
    "Policy",
    "SolveReport",
    "SolverConfig",
    "TabularMDP",
    "TruthSidecar",
    "WeightVector",
    "account_corruption",
    "bellman_residual",
    "build_linear_mdp",
    "build_lower_bound_pair",
    "build_tabular_mdp",
    "collect",
    "cords_pevi",
    "corrupt",
    "coverage_coefficient",
    "cr_pevi",
    "emit_plots",
    "evaluate_policy",
    "iterate_weights",
    "iterate_weights_shifted",
    "load_dataset",
    "pevi",
    "run_sweep",
    "serialize_dataset",
    "solve_optimal",
    "suboptimality",
    "uncertainty",
]
