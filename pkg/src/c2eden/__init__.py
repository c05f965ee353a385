"""Distributed cubic-regularized Newton laboratory.

A small research codebase for studying communication-efficient
second-order optimization: a server reconstructs the Hessian one column
per round from client reports while taking cubic-regularized Newton
steps, alongside first-order and Newton-type baselines, an exact cubic
subproblem solver, and client/server transports with exact
communication accounting.
"""

from .algorithms import (
    METHODS,
    DescentRecord,
    DescentReport,
    IterationTrace,
    RunConfig,
    StationarityReport,
    TraceRow,
    check_descent_inequality,
    gamma,
    gamma_value,
    h_exponent,
    run,
    run_agd,
    run_c2eden,
    run_gd,
    run_giant,
    run_lcrn,
    stationarity_report,
    tau,
)
from .cubic_solver import (
    CubicModel,
    CubicSolution,
    EpochCache,
    model_value,
    solve_cubic,
    solve_newton,
)
from .data_io import (
    Dataset,
    PartitionPlan,
    format_libsvm,
    load_toy,
    make_synthetic,
    parse_libsvm,
    partition,
    plan_partition,
)
from .numkit import (
    EigenDecomp,
    NotPositiveDefinite,
    mean_in_order,
    min_eigenvalue,
    solve_spd,
    sym_eig,
    symmetrize,
)
from .objective import ClientShard, GlobalObjective, Regularizer
from .protocol import (
    ClientSession,
    CommLedger,
    CoordinatorResult,
    EpochSnapshot,
    LocalOracle,
    ProtocolError,
    RoundTraffic,
    ServerConfig,
    run_coordinator,
    run_inprocess,
    run_tcp,
)
from .selfcheck import CheckResult, run_all_checks

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "CheckResult",
    "ClientSession",
    "ClientShard",
    "CommLedger",
    "CubicModel",
    "CubicSolution",
    "Dataset",
    "DescentRecord",
    "DescentReport",
    "EigenDecomp",
    "EpochCache",
    "EpochSnapshot",
    "GlobalObjective",
    "IterationTrace",
    "LocalOracle",
    "NotPositiveDefinite",
    "PartitionPlan",
    "ProtocolError",
    "Regularizer",
    "CoordinatorResult",
    "RoundTraffic",
    "RunConfig",
    "ServerConfig",
    "StationarityReport",
    "TraceRow",
    "check_descent_inequality",
    "format_libsvm",
    "gamma",
    "gamma_value",
    "h_exponent",
    "load_toy",
    "make_synthetic",
    "mean_in_order",
    "min_eigenvalue",
    "model_value",
    "parse_libsvm",
    "partition",
    "plan_partition",
    "run",
    "run_agd",
    "run_all_checks",
    "run_c2eden",
    "run_coordinator",
    "run_gd",
    "run_giant",
    "run_inprocess",
    "run_lcrn",
    "run_tcp",
    "solve_cubic",
    "solve_newton",
    "solve_spd",
    "stationarity_report",
    "sym_eig",
    "symmetrize",
    "tau",
]
