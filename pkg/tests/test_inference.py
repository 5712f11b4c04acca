import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from carinf.core import AllocationSpec, TrialDataset
from carinf.errors import ConfigError, EmptyCell, InsufficientCell
from carinf.estimators import Contrast, beta_hats, theta_hat, theta_hat_A
from carinf.inference import (
    Z_975,
    VarianceComponents,
    infer,
    make_report,
    theorem2_gaps,
    var_hat_A,
    var_hat_B,
    var_hat_U,
    var_hat_V,
)

from conftest import random_dataset

A2 = AllocationSpec.equal(2)


def ds(z, arm, y, x=None, alloc=A2):
    n = len(y)
    x = np.zeros((n, 0)) if x is None else np.asarray(x, dtype=float)
    return TrialDataset(z=[(v,) for v in z], x=x, arm=arm, y=y, alloc=alloc)


class TestVarU:
    def test_constant_cells(self):
        d = ds([0, 0, 0, 0, 1, 1, 1, 1], [1, 1, 2, 2] * 2, [1.0, 1.0, 2.0, 2.0, 5.0, 5.0, 0.0, 0.0])
        assert var_hat_U(d) == 0.0

    def test_direct_formula(self):
        # S1^2 = 1 and S2^2 = 4 in one stratum, pi = 1/2 each
        d = ds([0] * 6, [1, 1, 1, 2, 2, 2], [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0])
        assert var_hat_U(d) == pytest.approx(10.0, rel=1e-14)

    def test_needs_two(self):
        d = ds([0, 0, 0], [1, 2, 2], [1.0, 2.0, 3.0])
        with pytest.raises(InsufficientCell):
            var_hat_U(d)


class TestVarV:
    def test_single_stratum_zero(self, rng):
        d = random_dataset(rng, nstrata=1, p=0, floor=3)
        assert var_hat_V(d, clamp=False) == pytest.approx(0.0, abs=1e-14)

    def test_opposite_effects(self):
        d = ds([0, 0, 1, 1], [1, 2, 1, 2], [0.0, 1.0, 1.0, 0.0])
        assert theta_hat(d) == 0.0
        assert var_hat_V(d) == pytest.approx(1.0)

    def test_clamp(self):
        # raw value can be slightly negative by rounding; force it via a wrong theta
        d = ds([0, 0], [1, 2], [0.0, 1.0])
        assert var_hat_V(d, theta_hat_value=2.0, clamp=False) == pytest.approx(-3.0)
        assert var_hat_V(d, theta_hat_value=2.0) == 0.0

    def test_empty_cell(self):
        with pytest.raises(EmptyCell):
            var_hat_V(ds([0, 1], [1, 2], [0.0, 1.0]))


class TestVarAB:
    def test_zero_slopes_collapse(self):
        x = np.array([-1.0, 1.0, -2.0, 2.0, -1.0, 1.0, -3.0, 3.0])
        arm = [1, 1, 1, 1, 2, 2, 2, 2]
        y = np.array([1.0, 1.0, 3.0, 3.0, 0.0, 0.0, 2.0, 2.0])
        d = ds([0] * 8, arm, y, x=x[:, None])
        np.testing.assert_allclose(beta_hats(d).beta_t_z, 0.0, atol=1e-14)
        assert var_hat_A(d) == pytest.approx(var_hat_U(d), rel=1e-12)
        assert var_hat_B(d) == pytest.approx(var_hat_U(d), rel=1e-12)

    def test_p0(self, rng):
        d = random_dataset(rng, p=0, floor=3)
        assert var_hat_A(d) == var_hat_U(d) == var_hat_B(d)


class TestReport:
    def test_symmetric_null(self):
        r = make_report(0.0, VarianceComponents(1.0, 0.0, 1))
        assert r.p_value == 1.0
        assert (r.ci_low, r.ci_high) == (-Z_975, Z_975)
        assert round(Z_975, 6) == 1.959964

    def test_quantile_identity(self):
        r = make_report(1.96, VarianceComponents(1.0, 0.0, 1))
        assert r.p_value == pytest.approx(0.05, abs=1e-4)

    def test_reference_analysis_shape(self):
        se = 0.207
        r = make_report(0.409, VarianceComponents(se**2 * 100, 0.0, 100))
        assert r.se == pytest.approx(se)
        assert round(r.p_value, 3) == 0.048

    def test_alpha(self):
        r = make_report(1.0, VarianceComponents(1.0, 0.0, 1), alpha=0.1)
        assert r.ci_high - 1.0 == pytest.approx(stats.norm.ppf(0.95))
        with pytest.raises(ConfigError):
            make_report(1.0, VarianceComponents(1.0, 0.0, 1), alpha=1.0)

    def test_zero_se(self):
        assert make_report(0.0, VarianceComponents(0.0, 0.0, 5)).p_value == 1.0
        assert make_report(1.0, VarianceComponents(0.0, 0.0, 5)).p_value == 0.0

    def test_infer_components(self, rng):
        d = random_dataset(rng, k=3, p=2, nstrata=2, floor=6)
        c = Contrast(3, 2)
        out = infer(d, c)
        assert set(out) == {"U", "B", "A"}
        rep = out["A"]
        assert rep.estimate == pytest.approx(theta_hat_A(d, c))
        v = var_hat_V(d, c)
        assert rep.se == pytest.approx(math.sqrt((var_hat_A(d, c) + v) / d.n))
        assert rep.ci_low <= rep.estimate <= rep.ci_high
        assert rep.components.clamped == (var_hat_V(d, c, clamp=False) < 0)
        with pytest.raises(ConfigError):
            infer(d, c, estimators=("Q",))

    def test_scale_equivariance(self, rng):
        d = random_dataset(rng, k=2, p=1, floor=5)
        base, big = infer(d), infer(d.scaled(10.0, -4.0))
        for tag in base:
            assert big[tag].estimate == pytest.approx(10 * base[tag].estimate, rel=1e-10)
            assert big[tag].se == pytest.approx(10 * base[tag].se, rel=1e-10)
            assert big[tag].p_value == pytest.approx(base[tag].p_value, rel=1e-8)
        for f in (var_hat_U, var_hat_A, var_hat_B, var_hat_V):
            assert f(d.scaled(3.0)) == pytest.approx(9 * f(d), rel=1e-10)


class TestTheorem2:
    def test_zero_slopes(self):
        gu, gb = theorem2_gaps([[0.0]], [[0.0]], [[0.0]], [[[1.0]]], [1.0], (0.5, 0.5))
        assert gu == 0.0 and gb == 0.0

    def test_equality_case_two_arms(self):
        b = np.array([[1.3], [-0.4]])
        sig = np.array([[[2.0]], [[0.5]]])
        w = np.array([0.3, 0.7])
        gu, gb = theorem2_gaps(b, -b, 0.5 * b + 0.5 * (-b), sig, w, (0.5, 0.5))
        assert gu == pytest.approx(0.0, abs=1e-12)
        assert gb == pytest.approx(0.0, abs=1e-12)

    def test_two_arm_equal_allocation_B_equals_A(self):
        rng = np.random.default_rng(1)
        bt, bs = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        m = rng.normal(size=(3, 2, 2))
        sig = np.einsum("zij,zkj->zik", m, m) + np.eye(2)
        _, gb = theorem2_gaps(bt, bs, 0.5 * (bt + bs), sig, [0.2, 0.3, 0.5], (0.5, 0.5))
        assert gb == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.integers(1, 3))
def test_gaps_nonnegative(seed, p):
    rng = np.random.default_rng(seed)
    nz = int(rng.integers(1, 5))
    k = 3
    pi = np.array([0.2, 0.4, 0.4]) if seed % 2 else rng.dirichlet(np.ones(k))
    betas = rng.normal(size=(k, nz, p)) * 3
    m = rng.normal(size=(nz, p, p))
    sig = np.einsum("zij,zkj->zik", m, m) + 0.05 * np.eye(p)
    w = rng.dirichlet(np.ones(nz))
    pooled = np.einsum("t,tzp->zp", pi, betas)
    for t, s in ((0, 1), (1, 2), (2, 0)):
        gu, gb = theorem2_gaps(betas[t], betas[s], pooled, sig, w, (pi[t], pi[s]))
        assert gu >= -1e-12 and gb >= -1e-12
