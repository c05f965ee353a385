"""Built-in consistency battery behind the command line's check verb.

Each check is independent, takes well under a minute, and validates one
load-bearing guarantee of the package against an oracle computed from
scratch: finite differences for derivatives, a dense grid for the cubic
subproblem, closed-form counting for the ledger, a second transport for
determinism, and a per-round descent inequality for the optimizer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import algorithms, numkit
from .cubic_solver import CubicModel, model_value, solve_cubic
from .data_io import make_synthetic, partition
from .objective import GlobalObjective, Regularizer

__all__ = ["CheckResult", "run_all_checks", "CHECKS"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _fd_gradient(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def _check_gradient_oracle() -> tuple[bool, str]:
    worst = 0.0
    for reg in (Regularizer.L2, Regularizer.SMOOTH_NONCONVEX):
        ds = make_synthetic(80, 5, seed=11, density=0.9)
        shards = partition(ds, 2, seed=3, lam=0.01, regularizer=reg)
        glob = GlobalObjective(shards)
        rng = np.random.default_rng(0)
        for _ in range(3):
            x = rng.standard_normal(5)
            exact = glob.gradient(x)
            approx = _fd_gradient(glob.value, x)
            err = np.linalg.norm(approx - exact) / (1.0 + np.linalg.norm(exact))
            worst = max(worst, err)
    return worst < 1e-6, f"worst relative gradient error {worst:.2e}"


def _check_hessian_oracle() -> tuple[bool, str]:
    worst = 0.0
    for reg in (Regularizer.L2, Regularizer.SMOOTH_NONCONVEX):
        ds = make_synthetic(80, 5, seed=12, density=0.9)
        shards = partition(ds, 2, seed=3, lam=0.01, regularizer=reg)
        glob = GlobalObjective(shards)
        rng = np.random.default_rng(1)
        for _ in range(2):
            x = rng.standard_normal(5)
            exact = glob.hessian(x)
            approx = np.column_stack(
                [_fd_gradient(lambda y, j=j: glob.gradient(y)[j], x) for j in range(5)]
            )
            err = np.linalg.norm(approx - exact) / (1.0 + np.linalg.norm(exact))
            worst = max(worst, err)
    return worst < 1e-5, f"worst relative Hessian error {worst:.2e}"


def _check_cubic_certificates() -> tuple[bool, str]:
    rng = np.random.default_rng(42)
    worst_res, worst_dual = 0.0, 0.0
    for _ in range(200):
        d = int(rng.integers(1, 9))
        a = rng.standard_normal((d, d))
        h = numkit.symmetrize(a + a.T)
        g = rng.standard_normal(d) * 10.0 ** rng.integers(-3, 3)
        m_weight = 10.0 ** rng.uniform(-2, 2)
        sol = solve_cubic(CubicModel(g=g, H=h, M=m_weight, anchor=np.zeros(d)))
        scale_g = 1.0 + float(np.linalg.norm(g))
        scale_h = 1.0 + float(np.max(np.abs(h)))
        worst_res = max(worst_res, sol.residual / scale_g)
        worst_dual = max(worst_dual, -sol.dual_slack / scale_h)
    ok = worst_res <= 1e-8 and worst_dual <= 1e-10
    return ok, f"worst residual {worst_res:.2e}, worst dual violation {worst_dual:.2e}"


def _check_cubic_grid() -> tuple[bool, str]:
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(5):
        a = rng.standard_normal((2, 2))
        h = numkit.symmetrize(a + a.T)
        g = rng.standard_normal(2)
        model = CubicModel(g=g, H=h, M=1.5, anchor=np.zeros(2))
        sol = solve_cubic(model)
        span = np.arange(-4.0, 4.0, 2e-3)
        xs, ys = np.meshgrid(span, span, indexing="ij")
        pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
        lin = pts @ g
        quad = 0.5 * np.einsum("ij,jk,ik->i", pts, h, pts)
        cub = (1.5 / 6.0) * np.linalg.norm(pts, axis=1) ** 3
        grid_best = float(np.min(lin + quad + cub))
        worst = max(worst, sol.value - grid_best)
    return worst <= 1e-9, f"solver minus grid minimum at worst {worst:.2e}"


def _check_ledger_law() -> tuple[bool, str]:
    ds = make_synthetic(60, 4, seed=4)
    shards = partition(ds, 3, seed=0)
    n, d, rounds = 3, 4, 11
    tr = algorithms.run(
        algorithms.RunConfig(method="c2eden", rounds=rounds, M=20.0, grad_tol=0.0), shards
    )
    up_want = n * d * d + 2 * n * d * (rounds - d)
    down_want = d * (rounds - d)
    ok = tr.ledger.up_scalars == up_want and tr.ledger.down_scalars == down_want
    return ok, (
        f"up {tr.ledger.up_scalars} (want {up_want}), "
        f"down {tr.ledger.down_scalars} (want {down_want})"
    )


def _check_transport_equality() -> tuple[bool, str]:
    ds = make_synthetic(60, 4, seed=9)
    shards = partition(ds, 2, seed=1)
    base = dict(method="c2eden", rounds=10, M=30.0)
    tr_a = algorithms.run(algorithms.RunConfig(transport="inproc", **base), shards)
    tr_b = algorithms.run(algorithms.RunConfig(transport="tcp", **base), shards)
    same = all(np.array_equal(a, b) for a, b in zip(tr_a.iterates, tr_b.iterates))
    same = same and len(tr_a.iterates) == len(tr_b.iterates)
    gap = max(
        (float(np.max(np.abs(a - b))) for a, b in zip(tr_a.iterates, tr_b.iterates)),
        default=0.0,
    )
    return same, f"max |inproc - tcp| over iterates {gap:.1e}"


def _check_descent_lemma() -> tuple[bool, str]:
    ds = make_synthetic(100, 5, seed=5, density=0.9, flip_fraction=0.15)
    shards = partition(ds, 3, seed=1, lam=0.05, regularizer=Regularizer.SMOOTH_NONCONVEX)
    glob = GlobalObjective(shards)
    d = glob.dim
    m_weight = 12.0 * d * glob.hessian_lipschitz_bound()
    tr = algorithms.run(
        algorithms.RunConfig(method="c2eden", rounds=3 * d, M=m_weight), shards
    )
    rep = algorithms.check_descent_inequality(tr, shards)
    bad = [r.k for r in rep.records if not r.holds]
    return rep.all_hold, (
        f"{len(rep.records)} main rounds checked"
        + ("" if rep.all_hold else f", violated at {bad}")
    )


CHECKS = (
    ("gradient_oracle", _check_gradient_oracle),
    ("hessian_oracle", _check_hessian_oracle),
    ("cubic_certificates", _check_cubic_certificates),
    ("cubic_grid", _check_cubic_grid),
    ("ledger_law", _check_ledger_law),
    ("transport_equality", _check_transport_equality),
    ("descent_lemma", _check_descent_lemma),
)


def run_all_checks() -> list[CheckResult]:
    results = []
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crash is a failed check, not a crash of the battery
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(passed), detail, time.perf_counter() - t0))
    return results
