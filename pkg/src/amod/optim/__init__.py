from .flows import (
    RebalanceInfeasible,
    dispatch,
    dispatch_problem,
    forecast_demand,
    mpc_plan,
    mpc_problem,
    rebalance,
    rebalance_problem,
)
from .lp import EQ, GE, LE, LpProblem, LpSolution, dump_lps, solve_lp, write_lp_file

__all__ = [
    "EQ", "GE", "LE", "LpProblem", "dump_lps", "LpSolution", "RebalanceInfeasible", "dispatch", "dispatch_problem",
    "forecast_demand", "mpc_plan", "mpc_problem", "rebalance", "rebalance_problem", "solve_lp", "write_lp_file",
]
