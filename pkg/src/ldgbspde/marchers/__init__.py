"""Backward solvers for the coefficient-space BSDE."""
from .dbdp import DbdpConfig, evaluate_initial, solve_dbdp
from .lsmc import LsmcConfig, solve_lsmc
from .paths import BrownianBatch, TimeGrid, sample_brownian, uniform_grid
from .result import SolveResult, eval_u0

__all__ = [
    "BrownianBatch", "DbdpConfig", "LsmcConfig", "SolveResult", "TimeGrid",
    "eval_u0", "evaluate_initial", "sample_brownian", "solve_dbdp", "solve_lsmc", "uniform_grid",
]
