"""Tests for the logistic regression oracles.

Analytic formulas are checked against central finite differences of the
level below (gradient vs value, Hessian column vs gradient), plus frozen
values derived by hand at x = 0 where the sigmoid is exactly 1/2.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from c2eden import numkit
from c2eden.objective import (
    ClientShard,
    GlobalObjective,
    Regularizer,
    sigmoid,
    softplus,
)


def make_shard(seed=0, m=12, d=5, lam=1e-3, reg=Regularizer.L2, scale=1.0):
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((m, d)) * scale
    labels = rng.choice([-1.0, 1.0], size=m)
    return ClientShard(feats, labels, lam=lam, regularizer=reg)


class TestStableScalarFunctions:
    def test_softplus_at_zero(self):
        assert softplus(np.array(0.0)) == pytest.approx(np.log(2.0), abs=1e-15)

    def test_softplus_huge_arguments(self):
        assert softplus(np.array(800.0)) == pytest.approx(800.0)
        assert softplus(np.array(-800.0)) == 0.0

    def test_sigmoid_huge_arguments(self):
        assert sigmoid(np.array(800.0)) == 1.0
        assert sigmoid(np.array(-800.0)) == pytest.approx(0.0, abs=1e-300)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-700, 700))
    def test_sigmoid_complement(self, t):
        a = float(sigmoid(np.array(t)))
        b = float(sigmoid(np.array(-t)))
        assert a + b == pytest.approx(1.0, abs=1e-12)
        assert 0.0 <= a <= 1.0


class TestShardValidation:
    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError):
            ClientShard(np.ones((2, 2)), np.array([1.0, 2.0]))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ClientShard(np.ones((0, 2)), np.array([]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            ClientShard(np.ones((3, 2)), np.array([1.0, -1.0]))

    def test_rejects_negative_lam(self):
        with pytest.raises(ValueError):
            ClientShard(np.ones((1, 2)), np.array([1.0]), lam=-1.0)


class TestFrozenValues:
    def test_value_at_origin_is_log_two(self):
        # softplus(0) = log 2 for every sample; both penalties vanish at 0.
        for reg in Regularizer:
            shard = make_shard(seed=1, reg=reg, lam=0.7)
            assert shard.value(np.zeros(shard.dim)) == pytest.approx(
                np.log(2.0), abs=1e-14
            )

    def test_gradient_at_origin(self):
        # sigma(0) = 1/2, so grad = -(1/(2m)) sum_j b_j a_j exactly.
        shard = make_shard(seed=2, lam=0.3)
        x0 = np.zeros(shard.dim)
        expected = -(shard.labels @ shard.features) / (2.0 * shard.num_samples)
        assert np.allclose(shard.gradient(x0), expected, atol=1e-15)

    def test_hessian_at_origin_l2(self):
        # weights are exactly 1/4 at x = 0; lam = 1 adds the identity.
        shard = make_shard(seed=3, lam=1.0)
        x0 = np.zeros(shard.dim)
        expected = (
            shard.features.T @ shard.features / (4.0 * shard.num_samples)
            + np.eye(shard.dim)
        )
        assert np.allclose(shard.full_hessian(x0), expected, atol=1e-14)

    def test_single_sample_hessian_column(self):
        # one sample a = e_1, b = +1, x = 0, lam = 0: column 0 is (1/4) e_1.
        shard = ClientShard(np.array([[1.0, 0.0]]), np.array([1.0]), lam=0.0)
        col = shard.hessian_column(np.zeros(2), 0)
        assert np.array_equal(col, np.array([0.25, 0.0]))

    def test_nonconvex_partial_half(self):
        # zero feature row contributes constant log 2; the gradient at
        # x_p = 1 is lam * 2x/(1+x^2)^2 = 0.5 for lam = 1.
        shard = ClientShard(
            np.zeros((1, 3)),
            np.array([1.0]),
            lam=1.0,
            regularizer=Regularizer.SMOOTH_NONCONVEX,
        )
        g = shard.gradient(np.array([0.0, 1.0, 0.0]))
        assert g[1] == pytest.approx(0.5, abs=1e-15)
        assert g[0] == 0.0 and g[2] == 0.0

    def test_nonconvex_value(self):
        # R(1) = 1/2 on top of the log 2 data constant.
        shard = ClientShard(
            np.zeros((1, 2)),
            np.array([1.0]),
            lam=2.0,
            regularizer=Regularizer.SMOOTH_NONCONVEX,
        )
        v = shard.value(np.array([1.0, 0.0]))
        assert v == pytest.approx(np.log(2.0) + 2.0 * 0.5, abs=1e-14)


class TestFiniteDifferenceAgreement:
    @pytest.mark.parametrize("reg", list(Regularizer))
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradient_matches_fd(self, reg, seed):
        shard = make_shard(seed=seed, reg=reg, lam=0.05)
        rng = np.random.default_rng(seed + 100)
        x = rng.standard_normal(shard.dim)
        fd = oracles.fd_gradient(shard.value, x, h=1e-6)
        assert oracles.rel_err(fd, shard.gradient(x)) <= 1e-6

    @pytest.mark.parametrize("reg", list(Regularizer))
    def test_hessian_columns_match_fd(self, reg):
        shard = make_shard(seed=7, reg=reg, lam=0.05)
        rng = np.random.default_rng(8)
        x = rng.standard_normal(shard.dim) * 0.5
        fd_h = oracles.fd_jacobian(shard.gradient, x, h=1e-6)
        for j in range(shard.dim):
            assert oracles.rel_err(fd_h[:, j], shard.hessian_column(x, j)) <= 1e-6


class TestOracleConsistency:
    @pytest.mark.parametrize("reg", list(Regularizer))
    def test_columns_assemble_full_hessian(self, reg):
        shard = make_shard(seed=11, reg=reg, m=30, d=7)
        rng = np.random.default_rng(12)
        x = rng.standard_normal(7)
        h = shard.full_hessian(x)
        scale = 1.0 + np.max(np.abs(h))
        for j in range(7):
            err = np.max(np.abs(shard.hessian_column(x, j) - h[:, j]))
            assert err <= 1e-12 * scale

    def test_hvp_matches_full_hessian(self):
        shard = make_shard(seed=13, m=20, d=6, reg=Regularizer.SMOOTH_NONCONVEX)
        rng = np.random.default_rng(14)
        x = rng.standard_normal(6)
        v = rng.standard_normal(6)
        hv = shard.full_hessian(x) @ v
        assert np.allclose(shard.hvp(x, v), hv, atol=1e-12 * (1 + np.max(np.abs(hv))))

    def test_full_hessian_exactly_symmetric(self):
        shard = make_shard(seed=15, m=25, d=8)
        x = np.random.default_rng(16).standard_normal(8)
        h = shard.full_hessian(x)
        assert np.array_equal(h, h.T)

    def test_hessian_weights_bounded(self):
        shard = make_shard(seed=17, m=40, d=4, scale=3.0)
        rng = np.random.default_rng(18)
        for _ in range(5):
            w = shard._hessian_weights(rng.standard_normal(4) * 10)
            assert np.all(w > 0.0) and np.all(w <= 0.25)

    def test_hessian_column_index_range(self):
        shard = make_shard()
        with pytest.raises(IndexError):
            shard.hessian_column(np.zeros(shard.dim), shard.dim)


class TestRegularizerCurvature:
    @settings(max_examples=80, deadline=None)
    @given(st.floats(-1e6, 1e6, allow_nan=False))
    def test_nonconvex_second_derivative_range(self, t):
        from c2eden.objective import _reg_hess_diag

        r2 = float(_reg_hess_diag(np.array([t]), Regularizer.SMOOTH_NONCONVEX)[0])
        assert -0.5 - 1e-12 <= r2 <= 2.0 + 1e-12

    def test_nonconvex_second_derivative_extremes(self):
        from c2eden.objective import _reg_hess_diag

        vals = _reg_hess_diag(np.array([0.0, 1.0, -1.0]), Regularizer.SMOOTH_NONCONVEX)
        assert vals[0] == 2.0
        assert vals[1] == -0.5 and vals[2] == -0.5


class TestLipschitzBound:
    def test_frozen_single_row(self):
        # one row of norm 5: bound = 125 / (6 sqrt(3)).
        shard = ClientShard(np.array([[3.0, 4.0]]), np.array([1.0]), lam=0.0)
        assert shard.hessian_lipschitz_bound() == pytest.approx(
            125.0 / (6.0 * np.sqrt(3.0)), rel=1e-12
        )

    def test_nonconvex_adds_third_derivative_term(self):
        flat = ClientShard(np.array([[3.0, 4.0]]), np.array([1.0]), lam=0.5)
        bumpy = ClientShard(
            np.array([[3.0, 4.0]]),
            np.array([1.0]),
            lam=0.5,
            regularizer=Regularizer.SMOOTH_NONCONVEX,
        )
        gap = bumpy.hessian_lipschitz_bound() - flat.hessian_lipschitz_bound()
        # max |R'''| = 4.6685..., numerically maximized over a fine grid below
        ts = np.linspace(-3, 3, 2_000_001)
        third = 24.0 * ts * (ts * ts - 1.0) / (1.0 + ts * ts) ** 4
        assert gap == pytest.approx(0.5 * np.max(np.abs(third)), rel=1e-9)

    def test_bound_dominates_observed_curvature_change(self):
        # ||H(x) - H(y)|| <= L ||x - y|| sampled at random pairs
        shard = make_shard(seed=19, m=15, d=4, reg=Regularizer.SMOOTH_NONCONVEX, lam=0.2)
        bound = shard.hessian_lipschitz_bound()
        rng = np.random.default_rng(20)
        for _ in range(10):
            x, y = rng.standard_normal(4), rng.standard_normal(4)
            dh = np.linalg.norm(shard.full_hessian(x) - shard.full_hessian(y), 2)
            assert dh <= bound * np.linalg.norm(x - y) + 1e-12


class TestGlobalObjective:
    def test_matches_fixed_order_mean(self):
        shards = [make_shard(seed=s, m=6 + s, d=5) for s in range(4)]
        glob = GlobalObjective(shards)
        rng = np.random.default_rng(21)
        x = rng.standard_normal(5)
        assert glob.value(x) == numkit.mean_in_order([s.value(x) for s in shards])
        assert np.array_equal(
            glob.gradient(x), numkit.mean_in_order([s.gradient(x) for s in shards])
        )

    def test_hessian_column_matches_hessian(self):
        shards = [make_shard(seed=s, m=9, d=4) for s in range(3)]
        glob = GlobalObjective(shards)
        x = np.random.default_rng(22).standard_normal(4)
        h = glob.hessian(x)
        for j in range(4):
            assert np.allclose(glob.hessian_column(x, j), h[:, j], atol=1e-13)

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(ValueError):
            GlobalObjective([make_shard(d=3), make_shard(d=4)])

    def test_gradient_matches_fd(self):
        shards = [make_shard(seed=s, m=8, d=4, reg=Regularizer.SMOOTH_NONCONVEX) for s in range(3)]
        glob = GlobalObjective(shards)
        x = np.random.default_rng(23).standard_normal(4)
        fd = oracles.fd_gradient(glob.value, x, h=1e-6)
        assert oracles.rel_err(fd, glob.gradient(x)) <= 1e-6
