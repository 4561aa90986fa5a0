"""Generalized total variation minimization over empirical graphs."""

from .graph import (EmpiricalGraph, GraphError, apply_incidence,
                    apply_incidence_transpose, build_graph, load_graph,
                    weighted_boundary)
from .losses import LocalDataset, LocalLoss, SumLoss, UnsupportedOperation
from .penalties import GtvPenalty, clip, parse_penalty
from .solver import (SolverConfig, SolveResult, SolverState, gtv_eval,
                     init_state, kkt_residuals, pd_gap, run_iteration, solve)

__version__ = "0.1.0"
