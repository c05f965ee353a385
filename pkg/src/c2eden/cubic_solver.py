"""Exact solver for the cubic-regularized Newton subproblem.

Given a gradient g, a symmetric curvature matrix H (not necessarily
positive definite), and a weight M > 0, the step minimizes

    m(s) = <g, s> + 0.5 <H s, s> + (M/6) ||s||^3

globally.  In the eigenbasis of H the minimizer satisfies the secular
equation: with r = ||s|| and lam_i the ascending eigenvalues,

    phi(r) = || (Lam + (M r / 2) I)^{-1} g_hat || - r = 0

on r >= r_lo = max(0, -2 lam_1 / M), where phi is strictly decreasing.
The root can sit arbitrarily close to the pole at r_lo, where phi is so
steep that no representable r meets an absolute tolerance; the solve
therefore runs in the pole offset t = r - r_lo, in which the rotated
denominators become (lam_i - min(lam_1, 0)) + (M/2) t with no
cancellation and the root is always resolvable.  A safeguarded Newton
iteration with a proven bracket finds it; the hard case (g_hat
orthogonal to the minimal eigenspace with no interior root) is resolved
by adding a minimal-eigenvector component of exactly the norm that
lands the step on the boundary radius.

The returned solution carries its own optimality certificate: the
stationarity residual ||g + H s + (M/2)||s|| s|| and the dual slack
lam_1 + (M/2)||s||, which global optimality requires to be nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit
from .numkit import EigenDecomp, NotPositiveDefinite

__all__ = [
    "CubicModel",
    "CubicSolution",
    "EpochCache",
    "solve_cubic",
    "solve_newton",
    "model_value",
]

# components of the rotated gradient in the minimal eigenspace below this
# relative size are treated as exact zeros when classifying the hard case
HARD_CASE_GRAD_TOL = 1e-13

# eigenvalues within this relative distance of lam_1 count as the minimal
# eigenspace
EIG_TIE_TOL = 1e-10

SECULAR_TOL = 1e-12
MAX_SECULAR_ITERS = 200

# the stationarity residual of the returned step is (M/2)|psi - r| psi, so
# the secular tolerance also targets this certificate scale
RESIDUAL_TARGET = 1e-8


@dataclass(frozen=True)
class CubicModel:
    """Local model min_s <g,s> + 0.5 <Hs,s> + (M/6)||s||^3 anchored at a point."""

    g: np.ndarray
    H: np.ndarray
    M: float
    anchor: np.ndarray

    def __post_init__(self):
        g = numkit.as_vector(self.g)
        h = numkit.as_square_matrix(self.H, g.shape[0])
        anchor = numkit.as_vector(self.anchor, g.shape[0])
        if not (self.M > 0.0 and np.isfinite(self.M)):
            raise ValueError(f"cubic weight must be positive, got {self.M}")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "H", h)
        object.__setattr__(self, "anchor", anchor)

    @property
    def dim(self) -> int:
        return self.g.shape[0]


@dataclass(frozen=True)
class CubicSolution:
    """Global minimizer of a cubic model plus its optimality certificate."""

    step: np.ndarray
    point: np.ndarray
    radius: float
    multiplier: float  # (M/2) * radius; the implicit trust-region multiplier
    value: float  # m(step), always <= 0
    residual: float  # ||g + H step + multiplier * step||
    dual_slack: float  # lam_min(H) + multiplier, >= 0 up to rounding
    hard_case: bool
    iterations: int


def model_value(model: CubicModel, s) -> float:
    """Evaluate m(s) directly from the definition."""
    s = numkit.as_vector(s, model.dim)
    return float(
        model.g @ s
        + 0.5 * s @ (model.H @ s)
        + model.M / 6.0 * float(np.linalg.norm(s)) ** 3
    )


class EpochCache:
    """One eigendecomposition per epoch, reused for every round inside it.

    The lazy-Hessian schedule changes the curvature matrix only at epoch
    boundaries; caching the O(d^3) factorization there makes each inner
    round O(d^2).
    """

    def __init__(self):
        self.epoch: int | None = None
        self.decomp: EigenDecomp | None = None
        self.factorizations = 0

    def for_epoch(self, epoch: int, h: np.ndarray) -> EigenDecomp:
        if self.epoch != epoch or self.decomp is None:
            self.decomp = numkit.sym_eig(h)
            self.epoch = epoch
            self.factorizations += 1
        return self.decomp


def _certificate(model: CubicModel, s: np.ndarray, lam1: float, iters: int, hard: bool) -> CubicSolution:
    r = float(np.linalg.norm(s))
    mult = 0.5 * model.M * r
    resid = float(np.linalg.norm(model.g + model.H @ s + mult * s))
    return CubicSolution(
        step=s,
        point=model.anchor + s,
        radius=r,
        multiplier=mult,
        value=model_value(model, s),
        residual=resid,
        dual_slack=lam1 + mult,
        hard_case=hard,
        iterations=iters,
    )


def solve_cubic(model: CubicModel, decomp: EigenDecomp | None = None) -> CubicSolution:
    """Globally minimize the cubic model.

    decomp, when given, must be the eigendecomposition of model.H; passing
    it skips the O(d^3) factorization (see EpochCache).
    """
    if decomp is None:
        decomp = numkit.sym_eig(model.H)
    elif decomp.dim != model.dim:
        raise ValueError("decomposition dimension does not match the model")
    lam = decomp.eigenvalues
    q = decomp.eigenvectors
    lam1 = float(lam[0])
    m_weight = model.M

    g_hat = q.T @ model.g
    g_norm = float(np.linalg.norm(model.g))

    # treat rotated-gradient components in the minimal eigenspace that are
    # tiny relative to ||g|| as exact zeros; without this the secular
    # equation has a spurious root exponentially close to the pole
    min_space = lam - lam1 <= EIG_TIE_TOL * (1.0 + abs(lam1))
    g_eff = g_hat.copy()
    drop = min_space & (np.abs(g_hat) <= HARD_CASE_GRAD_TOL * g_norm)
    g_eff[drop] = 0.0

    r_lo = max(0.0, -2.0 * lam1 / m_weight)
    # rotated denominators in pole-offset coordinates: at t = r - r_lo the
    # i-th denominator is shift[i] + (M/2) t, exactly zero at the minimal
    # eigenvalue when lam1 <= 0 instead of cancelling catastrophically
    shift = lam - min(lam1, 0.0)

    if not np.any(g_eff != 0.0):
        if lam1 >= 0.0:
            s = np.zeros(model.dim)
            return _certificate(model, s, lam1, 0, False)
        # pure eigenstep: descend along the minimal eigenvector to radius r_lo
        s = r_lo * q[:, 0]
        return _certificate(model, s, lam1, 0, True)

    def secular(t: float) -> tuple[float, float]:
        denom = shift + 0.5 * m_weight * t
        scaled = g_eff / denom
        psi = float(np.linalg.norm(scaled))
        dpsi = -(0.5 * m_weight / psi) * float(np.sum(g_eff**2 / denom**3))
        return psi - (r_lo + t), dpsi - 1.0

    hard = False
    if np.any(min_space & (g_eff != 0.0)):
        interior = True  # psi blows up at the pole, so a root exists
    else:
        # g_eff vanishes on the minimal eigenspace, so psi is finite at the
        # boundary radius: an interior root exists iff phi(0) > 0
        safe = np.where(g_eff != 0.0, shift, 1.0)
        phi_lo = float(np.linalg.norm(g_eff / safe)) - r_lo
        interior = phi_lo > 0.0
        hard = not interior

    if hard:
        # boundary solution: solve outside the minimal eigenspace, then pad
        # with a minimal-eigenvector component to reach radius r_lo exactly
        coef = np.where(min_space, 0.0, -g_eff / np.where(min_space, 1.0, shift))
        s_perp_sq = float(np.sum(coef**2))
        alpha = float(np.sqrt(max(r_lo * r_lo - s_perp_sq, 0.0)))
        coef[0] += alpha  # along the first (sign-fixed) minimal eigenvector
        s = q @ coef
        return _certificate(model, s, lam1, 0, True)

    # proven bracket: phi(t_hi) <= 0 because (M/2) t_hi (r_lo + t_hi) equals
    # ||g_eff|| exactly; written to avoid cancellation for small gradients
    g_eff_norm = float(np.linalg.norm(g_eff))
    t_hi = 2.0 * g_eff_norm / (
        np.sqrt(lam1 * lam1 + 2.0 * m_weight * g_eff_norm) + abs(lam1)
    )
    for _ in range(64):  # rounding guard; never expands in exact arithmetic
        if secular(t_hi)[0] <= 0.0:
            break
        t_hi *= 2.0
    else:
        raise ArithmeticError("secular bracket expansion failed")

    lo, hi = 0.0, float(t_hi)
    t = hi
    iters = 0
    best_t, best_abs = t, np.inf
    eps = float(np.finfo(np.float64).eps)
    for iters in range(1, MAX_SECULAR_ITERS + 1):
        phi, dphi = secular(t)
        if abs(phi) < best_abs:
            best_t, best_abs = t, abs(phi)
        r = r_lo + t
        # converge when both the root itself and the residual it implies
        # are tight; when the root hugs the pole so closely that rounding
        # granularity beats these targets, the bracket collapses and the
        # best point seen wins
        tol = min(
            SECULAR_TOL * (1.0 + r),
            0.25 * RESIDUAL_TARGET * (1.0 + g_norm) / max(1.0, 0.5 * m_weight * r),
        )
        if abs(phi) <= tol:
            break
        if phi > 0.0:
            lo = t
        else:
            hi = t
        if hi - lo <= eps * hi:
            t = best_t
            break
        t_newton = t - phi / dphi
        if lo < t_newton < hi:
            t = t_newton
        else:
            t = 0.5 * (lo + hi)
    else:
        t = best_t  # bisection has exhausted float resolution by now

    denom = shift + 0.5 * m_weight * t
    s = q @ (-g_eff / denom)
    sol = _certificate(model, s, lam1, iters, False)
    if lam1 < 0.0 and sol.residual > RESIDUAL_TARGET * (1.0 + g_norm):
        # the root hugs the pole more closely than floats can resolve;
        # zeroing the minimal-eigenspace gradient and padding with an
        # explicit eigenvector solves a nearby problem exactly and
        # certifies better whenever the secular residual hit that floor
        r_hat = r_lo + t
        coef = np.where(min_space, 0.0, -g_eff / np.where(min_space, 1.0, denom))
        alpha = float(np.sqrt(max(r_hat * r_hat - float(np.sum(coef**2)), 0.0)))
        coef[0] += alpha
        alt = _certificate(model, q @ coef, lam1, iters, True)
        if alt.residual < sol.residual:
            sol = alt
    return sol


def solve_newton(
    g, h, anchor, decomp: EigenDecomp | None = None
) -> CubicSolution:
    """Plain Newton step s = -H^{-1} g for positive definite H.

    Used by the M = 0 variant of the lazy-Hessian method; returns the same
    certificate shape as solve_cubic with zero multiplier.
    """
    g = numkit.as_vector(g)
    h = numkit.as_square_matrix(h, g.shape[0])
    anchor = numkit.as_vector(anchor, g.shape[0])
    if decomp is None:
        decomp = numkit.sym_eig(h)
    lam = decomp.eigenvalues
    lam1 = float(lam[0])
    scale = float(np.max(np.abs(lam))) if lam.size else 0.0
    if lam1 <= numkit.SPD_EIG_FLOOR * scale or lam1 <= 0.0:
        raise NotPositiveDefinite(
            f"Newton step requires positive definite curvature; min eigenvalue {lam1:.3e}"
        )
    g_hat = decomp.eigenvectors.T @ g
    s = decomp.eigenvectors @ (-g_hat / lam)
    resid = float(np.linalg.norm(g + h @ s))
    return CubicSolution(
        step=s,
        point=anchor + s,
        radius=float(np.linalg.norm(s)),
        multiplier=0.0,
        value=float(g @ s + 0.5 * s @ (h @ s)),
        residual=resid,
        dual_slack=lam1,
        hard_case=False,
        iterations=0,
    )
