"""Optimization drivers, their traces, and theory-facing diagnostics.

Five methods run against the same shard interface and produce the same
trace shape:

- c2eden: the distributed lazy-Hessian cubic Newton method (the point of
  this package), driven through the client/server protocol on either
  transport.
- gd / agd: distributed (accelerated) gradient descent, clients upload
  gradients each round.
- giant: Newton-type method using two communication sub-rounds per
  iteration; each client solves against its own local Hessian.
- lcrn: each client takes a local cubic-regularized Newton step and the
  server averages the resulting points.

Traces carry one row per communication round plus a row for the starting
point: row k describes iterate x_k and the cumulative communication of
rounds before k, so the last row's counters are the whole run's traffic.
Objective values, gradient norms, and optional curvature columns in the
rows are instrumentation computed out of band; they are never charged to
the ledger.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numkit
from .cubic_solver import CubicModel, solve_cubic
from .objective import GlobalObjective
from .protocol import (
    CommLedger,
    EpochSnapshot,
    LocalOracle,
    RoundTraffic,
    ServerConfig,
    run_inprocess,
    run_tcp,
)

__all__ = [
    "METHODS",
    "tau",
    "gamma_value",
    "gamma",
    "h_exponent",
    "RunConfig",
    "TraceRow",
    "IterationTrace",
    "run",
    "run_c2eden",
    "run_gd",
    "run_agd",
    "run_giant",
    "run_lcrn",
    "DescentRecord",
    "DescentReport",
    "check_descent_inequality",
    "StationarityReport",
    "stationarity_report",
]

METHODS = ("c2eden", "gd", "agd", "giant", "lcrn")

# a run is flagged as diverged when the objective exceeds its starting
# value by this margin (or stops being finite)
DIVERGENCE_MARGIN = 1e12


def tau(k: int, d: int) -> int:
    """Round whose iterate the active Hessian was evaluated at.

    During main round k (k >= d) the server steps against the Hessian
    assembled one epoch earlier, i.e. at round d * (floor(k/d) - 1).
    """
    if d < 1:
        raise ValueError("dimension must be positive")
    if k < d:
        raise ValueError(f"round {k} is a warm-up round; staleness starts at round {d}")
    return d * (k // d - 1)


def gamma_value(grad_norm: float, lambda_min: float, m_weight: float) -> float:
    """Stationarity gap: max of the curvature and gradient terms.

    Zero exactly when the gradient vanishes and the Hessian is positive
    semidefinite; positive otherwise, so driving it to zero certifies an
    approximate second-order stationary point.
    """
    if m_weight <= 0.0:
        raise ValueError("gamma requires a positive cubic weight")
    curvature = -(lambda_min**3) / (648.0 * m_weight * m_weight)
    gradient = grad_norm**1.5 / (72.0 * math.sqrt(2.0) * m_weight)
    return max(curvature, gradient)


def gamma(x, m_weight: float, shards: Sequence) -> float:
    """gamma evaluated from scratch at a point."""
    glob = GlobalObjective(shards)
    grad_norm = float(np.linalg.norm(glob.gradient(x)))
    lam_min = numkit.min_eigenvalue(glob.hessian(x))
    return gamma_value(grad_norm, lam_min, m_weight)


def h_exponent(k: int, d: int) -> float:
    """Exponent of 1/2 in the local-convergence bound at round k.

    h(d) = h(2d) = 1, then the bound compounds: within an epoch the
    exponent grows by the epoch-anchor exponent per round, and it
    multiplies by (1 + d) every two epochs.  Not monotone in k (the
    bound is loose at the end of odd epochs; see the tests), but the
    epoch-boundary subsequence h(t*d) is nondecreasing.
    """
    if k < d:
        raise ValueError(f"local bound starts at round {d}, got {k}")
    t, p = divmod(k, d)
    return float(((1 + d) ** (t % 2) + p) * float(1 + d) ** (t // 2 - 1))


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one optimization run."""

    method: str
    rounds: int
    M: float = 0.0  # cubic weight (c2eden, lcrn); 0 selects Newton steps in c2eden
    eta: float = 0.1  # step size (gd, agd; giant warm-up)
    beta: float = 0.0  # momentum (agd)
    grad_tol: float = 1e-12
    transport: str = "inproc"  # c2eden only: 'inproc' or 'tcp'
    giant_warmup_rounds: int = 20  # plain GD rounds before giant iterations
    x0: tuple[float, ...] | None = None
    record_gamma: bool = False
    record_lambda_min: bool = False
    record_snapshots: bool = False
    timeout: float = 30.0
    label: str = ""  # free-form tag carried into trace files

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.rounds < 1:
            raise ValueError("need at least one round")
        if self.method in ("gd", "agd") and not self.eta > 0.0:
            raise ValueError("gradient methods need a positive step size")
        if self.method == "agd" and not 0.0 <= self.beta < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.method == "lcrn" and not self.M > 0.0:
            raise ValueError("local cubic steps need a positive cubic weight")
        if self.method == "c2eden" and self.M < 0.0:
            raise ValueError("cubic weight must be nonnegative")
        if self.transport not in ("inproc", "tcp"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.record_gamma and self.method in ("c2eden", "lcrn") and self.M <= 0.0:
            raise ValueError("gamma is undefined without a positive cubic weight")


@dataclass(frozen=True)
class TraceRow:
    """State after k communication rounds (iterate x_k)."""

    k: int
    f: float
    grad_norm: float
    gamma: float | None
    lambda_min: float | None
    up_scalars: int
    down_scalars: int
    wall_ms: float


@dataclass
class IterationTrace:
    method: str
    config: RunConfig
    rows: list[TraceRow] = field(default_factory=list)
    iterates: list[np.ndarray] = field(default_factory=list)
    ledger: CommLedger = field(default_factory=CommLedger)
    snapshots: list[EpochSnapshot] = field(default_factory=list)
    diverged: bool = False
    stopped_early: bool = False
    stop_round: int | None = None

    def ks(self) -> np.ndarray:
        return np.array([row.k for row in self.rows], dtype=int)

    def f_values(self) -> np.ndarray:
        return np.array([row.f for row in self.rows])

    def grad_norms(self) -> np.ndarray:
        return np.array([row.grad_norm for row in self.rows])

    @property
    def final_x(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def final_f(self) -> float:
        return self.rows[-1].f

    def rounds_to_grad(self, threshold: float) -> int | None:
        """First round index whose gradient norm is at or below threshold."""
        for row in self.rows:
            if row.grad_norm <= threshold:
                return row.k
        return None

    def scalars_to_grad(self, threshold: float) -> int | None:
        """Total scalars communicated when the threshold was first met."""
        for row in self.rows:
            if row.grad_norm <= threshold:
                return row.up_scalars + row.down_scalars
        return None


class _Recorder:
    """Builds trace rows; all instrumentation lives here, out of band."""

    def __init__(self, shards, cfg: RunConfig, trace: IterationTrace):
        self.glob = GlobalObjective(shards)
        self.cfg = cfg
        self.trace = trace
        self.t0 = time.perf_counter()

    def snap(self, k: int, x: np.ndarray, up: int, down: int) -> TraceRow:
        g = self.glob.gradient(x)
        lam_min = None
        gam = None
        if self.cfg.record_lambda_min or self.cfg.record_gamma:
            lam_min = numkit.min_eigenvalue(self.glob.hessian(x))
            if self.cfg.record_gamma:
                gam = gamma_value(float(np.linalg.norm(g)), lam_min, self.cfg.M)
            if not self.cfg.record_lambda_min:
                lam_min = None
        row = TraceRow(
            k=k,
            f=self.glob.value(x),
            grad_norm=float(np.linalg.norm(g)),
            gamma=gam,
            lambda_min=lam_min,
            up_scalars=up,
            down_scalars=down,
            wall_ms=(time.perf_counter() - self.t0) * 1000.0,
        )
        self.trace.rows.append(row)
        self.trace.iterates.append(x.copy())
        return row

    def check_divergence(self, row: TraceRow) -> bool:
        f0 = self.trace.rows[0].f
        bad = not (math.isfinite(row.f) and math.isfinite(row.grad_norm))
        if not bad:
            bad = row.f > f0 + DIVERGENCE_MARGIN * (1.0 + abs(f0))
        if bad:
            self.trace.diverged = True
        return bad


def _starting_point(cfg: RunConfig, dim: int) -> np.ndarray:
    if cfg.x0 is None:
        return np.zeros(dim)
    return numkit.as_vector(np.asarray(cfg.x0, dtype=np.float64), dim).copy()


def run(cfg: RunConfig, shards: Sequence) -> IterationTrace:
    """Run the configured method on the given shards."""
    driver = {
        "c2eden": run_c2eden,
        "gd": run_gd,
        "agd": run_agd,
        "giant": run_giant,
        "lcrn": run_lcrn,
    }[cfg.method]
    return driver(cfg, shards)


def run_c2eden(cfg: RunConfig, shards: Sequence) -> IterationTrace:
    """Distributed lazy-Hessian cubic Newton via the round protocol.

    cfg.rounds counts every communication round including the dim
    warm-up rounds, so it must exceed the problem dimension.
    """
    if cfg.method != "c2eden":
        raise ValueError(f"config is for {cfg.method!r}")
    dims = {s.dim for s in shards}
    if len(dims) != 1:
        raise ValueError("shards disagree on dimension")
    d = dims.pop()
    trace = IterationTrace(method="c2eden", config=cfg)
    recorder = _Recorder(shards, cfg, trace)
    n = len(shards)
    server_cfg = ServerConfig(
        dim=d,
        num_clients=n,
        total_rounds=cfg.rounds,
        M=cfg.M,
        x0=_starting_point(cfg, d),
        grad_tol=cfg.grad_tol,
    )
    oracle_views = [LocalOracle(s) for s in shards]

    def hook(j: int, x: np.ndarray) -> None:
        # cumulative traffic of rounds before j: warm-up rounds move n*d
        # scalars up each, main rounds 2*n*d up and d down
        if j <= d:
            up, down = j * n * d, 0
        else:
            up, down = n * d * d + 2 * n * d * (j - d), d * (j - d)
        recorder.snap(j, x, up, down)

    if cfg.transport == "tcp":
        result = run_tcp(
            oracle_views,
            server_cfg,
            timeout=cfg.timeout,
            on_iterate=hook,
            record_snapshots=cfg.record_snapshots,
        )
    else:
        result = run_inprocess(
            oracle_views,
            server_cfg,
            on_iterate=hook,
            record_snapshots=cfg.record_snapshots,
        )
    trace.ledger = result.ledger
    trace.snapshots = result.snapshots
    trace.stopped_early = result.stopped_early
    trace.stop_round = result.stop_round
    return trace


def _baseline_round_traffic(ledger, k, up, down, n):
    ledger.record(
        RoundTraffic(
            round=k,
            up_scalars=up,
            down_scalars=down,
            up_messages=n if up else 0,
            down_messages=n if down else 0,
        )
    )


def run_gd(cfg: RunConfig, shards: Sequence) -> IterationTrace:
    """Distributed gradient descent: clients upload gradients, the server
    averages, steps, and broadcasts; n*d up + d down per round."""
    if cfg.method != "gd":
        raise ValueError(f"config is for {cfg.method!r}")
    glob = GlobalObjective(shards)
    d, n = glob.dim, len(shards)
    trace = IterationTrace(method="gd", config=cfg)
    recorder = _Recorder(shards, cfg, trace)
    x = _starting_point(cfg, d)
    up = down = 0
    recorder.snap(0, x, up, down)
    for k in range(cfg.rounds):
        g = numkit.mean_in_order([s.gradient(x) for s in shards])
        up += n * d
        if float(np.linalg.norm(g)) <= cfg.grad_tol:
            _baseline_round_traffic(trace.ledger, k, n * d, 0, n)
            trace.stopped_early = True
            trace.stop_round = k
            break
        x = x - cfg.eta * g
        down += d
        _baseline_round_traffic(trace.ledger, k, n * d, d, n)
        row = recorder.snap(k + 1, x, up, down)
        if recorder.check_divergence(row):
            break
    return trace


def run_agd(cfg: RunConfig, shards: Sequence) -> IterationTrace:
    """Distributed heavy-momentum accelerated gradient descent.

    The server broadcasts the extrapolated point y_k = x_k + beta
    (x_k - x_{k-1}), clients report gradients at y_k, and the server
    steps; d down + n*d up per round.
    """
    if cfg.method != "agd":
        raise ValueError(f"config is for {cfg.method!r}")
    glob = GlobalObjective(shards)
    d, n = glob.dim, len(shards)
    trace = IterationTrace(method="agd", config=cfg)
    recorder = _Recorder(shards, cfg, trace)
    x = _starting_point(cfg, d)
    x_prev = x.copy()
    up = down = 0
    recorder.snap(0, x, up, down)
    for k in range(cfg.rounds):
        y = x + cfg.beta * (x - x_prev)
        down += d
        g = numkit.mean_in_order([s.gradient(y) for s in shards])
        up += n * d
        if float(np.linalg.norm(g)) <= cfg.grad_tol:
            _baseline_round_traffic(trace.ledger, k, n * d, d, n)
            trace.stopped_early = True
            trace.stop_round = k
            break
        x_prev = x
        x = y - cfg.eta * g
        _baseline_round_traffic(trace.ledger, k, n * d, d, n)
        row = recorder.snap(k + 1, x, up, down)
        if recorder.check_divergence(row):
            break
    return trace


def run_giant(cfg: RunConfig, shards: Sequence) -> IterationTrace:
    """Globally improved approximate Newton: per iteration, one sub-round
    aggregates gradients and broadcasts the mean, a second sub-round
    aggregates the clients' local-Hessian solves and broadcasts the new
    iterate.  Both sub-rounds count as communication rounds (2*n*d up +
    2*d down per full iteration); an optional plain-GD warm-up precedes
    the Newton-type phase.
    """
    if cfg.method != "giant":
        raise ValueError(f"config is for {cfg.method!r}")
    glob = GlobalObjective(shards)
    d, n = glob.dim, len(shards)
    trace = IterationTrace(method="giant", config=cfg)
    recorder = _Recorder(shards, cfg, trace)
    x = _starting_point(cfg, d)
    up = down = 0
    recorder.snap(0, x, up, down)
    k = 0
    warmup_left = max(0, cfg.giant_warmup_rounds)
    while k < cfg.rounds:
        g = numkit.mean_in_order([s.gradient(x) for s in shards])
        up += n * d
        if float(np.linalg.norm(g)) <= cfg.grad_tol:
            _baseline_round_traffic(trace.ledger, k, n * d, 0, n)
            trace.stopped_early = True
            trace.stop_round = k
            break
        if warmup_left > 0:
            warmup_left -= 1
            x = x - cfg.eta * g
            down += d
            _baseline_round_traffic(trace.ledger, k, n * d, d, n)
            k += 1
            row = recorder.snap(k, x, up, down)
            if recorder.check_divergence(row):
                break
            continue
        # sub-round a ends: mean gradient goes back down to the clients
        down += d
        _baseline_round_traffic(trace.ledger, k, n * d, d, n)
        k += 1
        row = recorder.snap(k, x, up, down)  # iterate unchanged mid-iteration
        if k >= cfg.rounds:
            break
        # sub-round b: clients solve locally against their own Hessians
        directions = [numkit.solve_spd(s.full_hessian(x), g) for s in shards]
        p = numkit.mean_in_order(directions)
        up += n * d
        x = x - p
        down += d
        _baseline_round_traffic(trace.ledger, k, n * d, d, n)
        k += 1
        row = recorder.snap(k, x, up, down)
        if recorder.check_divergence(row):
            break
    return trace


def run_lcrn(cfg: RunConfig, shards: Sequence) -> IterationTrace:
    """Local cubic-regularized Newton: every client solves its own cubic
    subproblem with its full local Hessian and uploads the resulting
    point; the server averages and broadcasts (n*d up + d down).

    Stopping uses the driver's out-of-band gradient check; the protocol
    itself never carries gradients.
    """
    if cfg.method != "lcrn":
        raise ValueError(f"config is for {cfg.method!r}")
    glob = GlobalObjective(shards)
    d, n = glob.dim, len(shards)
    trace = IterationTrace(method="lcrn", config=cfg)
    recorder = _Recorder(shards, cfg, trace)
    x = _starting_point(cfg, d)
    up = down = 0
    row = recorder.snap(0, x, up, down)
    for k in range(cfg.rounds):
        if row.grad_norm <= cfg.grad_tol:
            trace.stopped_early = True
            trace.stop_round = k
            break
        points = []
        for s in shards:
            model = CubicModel(g=s.gradient(x), H=s.full_hessian(x), M=cfg.M, anchor=x)
            points.append(solve_cubic(model).point)
        x = numkit.mean_in_order(points)
        up += n * d
        down += d
        _baseline_round_traffic(trace.ledger, k, n * d, d, n)
        row = recorder.snap(k + 1, x, up, down)
        if recorder.check_divergence(row):
            break
    return trace


# ---------------------------------------------------------------------------
# diagnostics

@dataclass(frozen=True)
class DescentRecord:
    k: int
    decrease: float  # f(x_k) - f(x_{k+1})
    required: float  # gamma(x_{k+1}) + (M/48)||step||^3 - (11 L^3/M^2)||staleness||^3
    holds: bool


@dataclass(frozen=True)
class DescentReport:
    records: tuple[DescentRecord, ...]
    m_weight: float
    lipschitz: float

    @property
    def all_hold(self) -> bool:
        return all(r.holds for r in self.records)


def check_descent_inequality(
    trace: IterationTrace,
    shards: Sequence,
    lipschitz: float | None = None,
    slack: float = 1e-9,
) -> DescentReport:
    """Check the per-round descent guarantee of the lazy cubic method.

    For every main round k the objective must fall by at least the
    stationarity gap at the new point plus a cubic step bonus, minus a
    staleness penalty: f(x_k) - f(x_{k+1}) >= gamma(x_{k+1})
    + (M/48)||x_{k+1} - x_k||^3 - (11 L^3 / M^2)||x_k - x_tau||^3.
    Requires a c2eden trace recorded with gamma instrumentation or at
    least full iterates; gamma is recomputed here regardless.
    """
    if trace.method != "c2eden":
        raise ValueError("the descent inequality applies to c2eden traces")
    m_weight = trace.config.M
    if m_weight <= 0.0:
        raise ValueError("descent check needs a positive cubic weight")
    glob = GlobalObjective(shards)
    d = glob.dim
    lip = glob.hessian_lipschitz_bound() if lipschitz is None else float(lipschitz)
    xs = trace.iterates
    fs = [row.f for row in trace.rows]
    records = []
    for k in range(d, len(xs) - 1):
        x_next = xs[k + 1]
        g_norm = float(np.linalg.norm(glob.gradient(x_next)))
        lam_min = numkit.min_eigenvalue(glob.hessian(x_next))
        gam = gamma_value(g_norm, lam_min, m_weight)
        step = float(np.linalg.norm(x_next - xs[k]))
        stale = float(np.linalg.norm(xs[k] - xs[tau(k, d)]))
        decrease = fs[k] - fs[k + 1]
        required = (
            gam
            + m_weight / 48.0 * step**3
            - 11.0 * lip**3 / (m_weight * m_weight) * stale**3
        )
        tol = slack * (1.0 + abs(decrease) + abs(required))
        records.append(
            DescentRecord(k=k, decrease=decrease, required=required, holds=decrease >= required - tol)
        )
    return DescentReport(records=tuple(records), m_weight=m_weight, lipschitz=lip)


@dataclass(frozen=True)
class StationarityReport:
    """First rounds at which approximate first/second-order stationarity held.

    sosp_round is only meaningful when a curvature threshold delta was
    requested; it is None otherwise.
    """

    eps: float
    delta: float | None
    fosp_round: int | None
    sosp_round: int | None

    @property
    def is_fosp(self) -> bool:
        return self.fosp_round is not None

    @property
    def is_sosp(self) -> bool:
        return self.sosp_round is not None


def stationarity_report(
    trace: IterationTrace, eps: float, delta: float | None = None
) -> StationarityReport:
    """Scan a trace for eps-gradient points and, when delta is given,
    (eps, delta)-second-order points.

    Second-order verdicts need rows recorded with lambda_min; asking for
    them otherwise raises.
    """
    fosp = None
    sosp = None
    if delta is not None and not any(row.lambda_min is not None for row in trace.rows):
        raise ValueError("second-order check needs rows recorded with lambda_min")
    for row in trace.rows:
        if fosp is None and row.grad_norm <= eps:
            fosp = row.k
        if (
            sosp is None
            and delta is not None
            and row.grad_norm <= eps
            and row.lambda_min is not None
            and row.lambda_min >= -delta
        ):
            sosp = row.k
        if fosp is not None and (delta is None or sosp is not None):
            break
    return StationarityReport(eps=eps, delta=delta, fosp_round=fosp, sosp_round=sosp)
