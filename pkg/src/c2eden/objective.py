"""Regularized logistic regression oracles, per client shard and global.

Each client holds a shard of (feature row, +/-1 label) pairs and exposes
value / gradient / Hessian-column / Hessian-vector oracles for

    f_i(x) = (1/m_i) * sum_j softplus(-b_ij <x, a_ij>) + lam * R(x)

with R either the strongly convex l2 penalty 0.5 ||x||^2 or the smooth
bounded nonconvex penalty sum_p x_p^2 / (1 + x_p^2).  All formulas are
written in their numerically stable forms (softplus and sigmoid never
overflow) and every reduction over samples or shards uses a fixed
summation order so repeated runs produce bit-identical numbers.
"""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np

from . import numkit

__all__ = [
    "Regularizer",
    "ClientShard",
    "GlobalObjective",
    "softplus",
    "sigmoid",
]

# max |sigma''| over the reals; sharp constant in the logistic Hessian
# Lipschitz bound.
SIGMOID_THIRD_BOUND = 1.0 / (6.0 * np.sqrt(3.0))

# max |d^3/dx^3 [x^2/(1+x^2)]|, attained at x^2 = 1 - sqrt(4/5).
_X3 = np.sqrt(1.0 - np.sqrt(0.8))
NONCONVEX_THIRD_BOUND = float(abs(24.0 * _X3 * (_X3**2 - 1.0) / (1.0 + _X3**2) ** 4))


class Regularizer(str, enum.Enum):
    """Penalty added to the data term, scaled by lam."""

    L2 = "l2"
    SMOOTH_NONCONVEX = "smooth_nonconvex"


def softplus(t: np.ndarray) -> np.ndarray:
    """log(1 + exp(t)) computed without overflow for any t."""
    t = np.asarray(t, dtype=np.float64)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def sigmoid(t: np.ndarray) -> np.ndarray:
    """1 / (1 + exp(-t)) computed without overflow for any t."""
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _reg_value(x: np.ndarray, kind: Regularizer) -> float:
    if kind is Regularizer.L2:
        return 0.5 * float(x @ x)
    sq = x * x
    return float(np.sum(sq / (1.0 + sq)))


def _reg_grad(x: np.ndarray, kind: Regularizer) -> np.ndarray:
    if kind is Regularizer.L2:
        return x.copy()
    return 2.0 * x / (1.0 + x * x) ** 2


def _reg_hess_diag(x: np.ndarray, kind: Regularizer) -> np.ndarray:
    if kind is Regularizer.L2:
        return np.ones_like(x)
    sq = x * x
    return (2.0 - 6.0 * sq) / (1.0 + sq) ** 3


class ClientShard:
    """One client's slice of the dataset plus its local oracles.

    features: (m, d) dense row matrix, one sample per row.
    labels:   (m,) array of +1.0 / -1.0.
    lam:      regularization weight.
    regularizer: penalty kind; L2 by default.
    """

    def __init__(
        self,
        features,
        labels,
        lam: float = 1e-6,
        regularizer: Regularizer = Regularizer.L2,
    ):
        feats = np.ascontiguousarray(features, dtype=np.float64)
        labs = np.ascontiguousarray(labels, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {feats.shape}")
        if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
            raise ValueError("labels must be 1-d with one entry per feature row")
        if feats.shape[0] == 0:
            raise ValueError("shard must contain at least one sample")
        if not np.all(np.isin(labs, (-1.0, 1.0))):
            raise ValueError("labels must be +1 or -1")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite entries")
        if not (lam >= 0.0 and np.isfinite(lam)):
            raise ValueError("lam must be finite and nonnegative")
        self.features = feats
        self.labels = labs
        self.lam = float(lam)
        self.regularizer = Regularizer(regularizer)

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def _margins(self, x: np.ndarray) -> np.ndarray:
        return self.labels * (self.features @ x)

    def _hessian_weights(self, x: np.ndarray) -> np.ndarray:
        # sigma'(z) = sigma(z) sigma(-z); symmetric in the sign of z, so the
        # label factor (b^2 = 1) drops out.
        z = self.features @ x
        return sigmoid(z) * sigmoid(-z)

    def value(self, x) -> float:
        x = numkit.as_vector(x, self.dim)
        data = float(np.mean(softplus(-self._margins(x))))
        return data + self.lam * _reg_value(x, self.regularizer)

    def gradient(self, x) -> np.ndarray:
        x = numkit.as_vector(x, self.dim)
        coef = -sigmoid(-self._margins(x)) * self.labels / self.num_samples
        return self.features.T @ coef + self.lam * _reg_grad(x, self.regularizer)

    def hessian_column(self, x, j: int) -> np.ndarray:
        x = numkit.as_vector(x, self.dim)
        if not 0 <= j < self.dim:
            raise IndexError(f"column index {j} out of range for dimension {self.dim}")
        w = self._hessian_weights(x)
        col = self.features.T @ (w * self.features[:, j]) / self.num_samples
        col[j] += self.lam * float(_reg_hess_diag(x[j : j + 1], self.regularizer)[0])
        return col

    def hvp(self, x, v) -> np.ndarray:
        x = numkit.as_vector(x, self.dim)
        v = numkit.as_vector(v, self.dim)
        w = self._hessian_weights(x)
        out = self.features.T @ (w * (self.features @ v)) / self.num_samples
        return out + self.lam * _reg_hess_diag(x, self.regularizer) * v

    def full_hessian(self, x) -> np.ndarray:
        x = numkit.as_vector(x, self.dim)
        w = self._hessian_weights(x)
        data = self.features.T @ (w[:, None] * self.features) / self.num_samples
        h = numkit.symmetrize(data)
        diag = self.lam * _reg_hess_diag(x, self.regularizer)
        h[np.diag_indices_from(h)] += diag
        return h

    def hessian_lipschitz_bound(self) -> float:
        """Upper bound on the Lipschitz constant of the Hessian.

        Data term: each sample contributes sigma''-curvature along its own
        row, so max_j ||a_j||^3 * max|sigma''| bounds the third derivative
        tensor norm.  The nonconvex penalty adds its own per-coordinate
        third-derivative bound; the l2 penalty adds nothing.
        """
        row_norms = np.linalg.norm(self.features, axis=1)
        bound = float(np.max(row_norms) ** 3) * SIGMOID_THIRD_BOUND
        if self.regularizer is Regularizer.SMOOTH_NONCONVEX:
            bound += self.lam * NONCONVEX_THIRD_BOUND
        return bound


class GlobalObjective:
    """Mean of the shard objectives, evaluated shard-by-shard in id order.

    This is the quantity every method in the package minimizes:
    f(x) = (1/n) sum_i f_i(x).  Aggregation uses the same fixed-order
    mean as the server does, so values computed here match what a
    protocol run would aggregate, bit for bit.
    """

    def __init__(self, shards: Sequence[ClientShard]):
        if len(shards) == 0:
            raise ValueError("need at least one shard")
        dims = {s.dim for s in shards}
        if len(dims) != 1:
            raise ValueError(f"shards disagree on dimension: {sorted(dims)}")
        self.shards = list(shards)
        self.dim = dims.pop()

    @property
    def num_clients(self) -> int:
        return len(self.shards)

    def value(self, x) -> float:
        return numkit.mean_in_order([s.value(x) for s in self.shards])

    def gradient(self, x) -> np.ndarray:
        return numkit.mean_in_order([s.gradient(x) for s in self.shards])

    def hessian(self, x) -> np.ndarray:
        return numkit.mean_in_order([s.full_hessian(x) for s in self.shards])

    def hessian_column(self, x, j: int) -> np.ndarray:
        return numkit.mean_in_order([s.hessian_column(x, j) for s in self.shards])

    def hessian_lipschitz_bound(self) -> float:
        return max(s.hessian_lipschitz_bound() for s in self.shards)
