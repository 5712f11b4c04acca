import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carinf.core import AllocationSpec, TrialDataset
from carinf.errors import ConfigError, EmptyCell, InsufficientCell, SingularGram
from carinf.estimators import (
    Contrast,
    DroppedStrataWarning,
    SmallCellWarning,
    beta_hats,
    ols_slope,
    theta_hat,
    theta_hat_A,
    theta_hat_B,
)

import naive
from conftest import random_dataset

A2 = AllocationSpec.equal(2)


def ds(z, arm, y, x=None, alloc=A2):
    n = len(y)
    x = np.zeros((n, 0)) if x is None else np.asarray(x, dtype=float)
    return TrialDataset(z=[(v,) for v in z], x=x, arm=arm, y=y, alloc=alloc)


class TestContrast:
    def test_parse(self):
        assert Contrast.parse("3-1") == Contrast(3, 1)
        assert str(Contrast(2, 1)) == "2-1"
        assert Contrast(2, 1).reversed() == Contrast(1, 2)

    def test_invalid(self):
        with pytest.raises(ConfigError):
            Contrast(1, 1)
        with pytest.raises(ConfigError):
            Contrast.parse("a-b")
        with pytest.raises(ConfigError):
            Contrast(3, 1).check(2)


class TestOls:
    def test_scalar(self):
        assert ols_slope([[2.0]], [4.0]).tolist() == [2.0]

    def test_two_by_two_cramer(self, rng):
        for _ in range(20):
            m = rng.normal(size=(2, 2))
            g = m @ m.T + 0.1 * np.eye(2)
            h = rng.normal(size=2)
            det = g[0, 0] * g[1, 1] - g[0, 1] ** 2
            want = [(h[0] * g[1, 1] - g[0, 1] * h[1]) / det, (g[0, 0] * h[1] - g[1, 0] * h[0]) / det]
            np.testing.assert_allclose(ols_slope(g, h), want, rtol=1e-10)

    def test_singular(self):
        with pytest.raises(SingularGram):
            ols_slope([[0.0]], [0.0])
        with pytest.raises(SingularGram):
            ols_slope([[1.0, 1.0], [1.0, 1.0]], [1.0, 1.0])

    def test_identical_x_in_cell(self):
        d = ds([0] * 8, [1, 2] * 4, np.arange(8.0), x=[[1.0], [0.0], [1.0], [1.0], [1.0], [2.0], [1.0], [3.0]])
        with pytest.raises(SingularGram):
            theta_hat_A(d)


class TestThetaHat:
    def test_hand_two_strata(self):
        # z=a: arm1 {1,3}, arm2 {2}; z=b: arm1 {0}, arm2 {4,4}
        d = ds([0, 0, 0, 1, 1, 1], [1, 1, 2, 1, 2, 2], [1.0, 3.0, 2.0, 0.0, 4.0, 4.0])
        assert theta_hat(d) == pytest.approx(2.0, abs=1e-15)

    def test_single_stratum(self, rng):
        y = rng.normal(size=10)
        arm = np.array([1, 2] * 5)
        d = ds([0] * 10, arm, y)
        assert theta_hat(d) == pytest.approx(y[arm == 2].mean() - y[arm == 1].mean(), rel=1e-14)

    def test_constant(self):
        d = ds([0, 0, 1, 1], [1, 2, 1, 2], [5.0] * 4)
        assert theta_hat(d) == 0.0

    def test_empty_cell(self):
        d = ds([0, 0, 1], [1, 2, 1], [1.0, 2.0, 3.0])
        with pytest.raises(EmptyCell) as exc:
            theta_hat(d)
        assert exc.value.cells == [(2, (1,))]
        assert "stratum (1,)" in str(exc.value)

    def test_drop_incomplete(self):
        d = ds([0, 0, 1], [1, 2, 1], [1.0, 2.0, 3.0])
        with pytest.warns(DroppedStrataWarning):
            assert theta_hat(d, drop_incomplete_strata=True) == 1.0

    def test_reweighting_by_null_stratum(self):
        base = ds([0, 0, 0, 0], [1, 1, 2, 2], [0.0, 1.0, 3.0, 4.0])
        grown = ds([0, 0, 0, 0, 1, 1], [1, 1, 2, 2, 1, 2], [0.0, 1.0, 3.0, 4.0, 7.0, 7.0])
        assert theta_hat(grown) == pytest.approx(theta_hat(base) * 4 / 6, rel=1e-14)


class TestBetas:
    def test_exact_line(self):
        x = np.arange(8.0)
        d = ds([0] * 8, [1, 2] * 4, 2 * x, x=x[:, None])
        assert beta_hats(d).beta_t_z[0, 0, 0] == pytest.approx(2.0, rel=1e-12)

    def test_pooled_hand_dataset(self):
        # two arms with slopes 2 and 4, same X spread, 4 subjects each
        x = np.array([0.0, 1.0, 2.0, 3.0] * 2)
        arm = np.array([1] * 4 + [2] * 4)
        y = np.where(arm == 1, 2 * x, 4 * x + 1)
        d = ds([0] * 8, arm, y, x=x[:, None])
        c = beta_hats(d)
        assert c.beta_z[0, 0] == pytest.approx(3.0, rel=1e-12)
        np.testing.assert_allclose(c.beta_t_z[0, :, 0], [2.0, 4.0], rtol=1e-12)

    def test_independent_x(self):
        gen = np.random.default_rng(3)
        n = 40_000
        d = ds([0] * n, gen.integers(1, 3, n), gen.normal(size=n), x=gen.normal(size=(n, 1)))
        assert np.abs(beta_hats(d).beta_t_z).max() < 0.03

    def test_floor(self):
        d = ds([0] * 6, [1, 1, 2, 2, 2, 2], np.arange(6.0), x=np.arange(6.0)[:, None])
        with pytest.raises(InsufficientCell) as exc:
            theta_hat_A(d)
        assert exc.value.arm == 1 and exc.value.needed == 3

    def test_small_cell_warns(self, rng):
        d = random_dataset(rng, p=1, floor=4, extra=0)
        with pytest.warns(SmallCellWarning):
            theta_hat_A(d)


class TestAdjusted:
    def test_balanced_x_gives_theta_hat(self):
        x = np.array([-1.0, 1.0, 0.0, -1.0, 1.0, 0.0])
        arm = [1, 1, 1, 2, 2, 2]
        y = np.array([0.3, 2.0, 1.0, 4.0, 1.0, 2.0])
        d = ds([0] * 6, arm, y, x=x[:, None])
        assert theta_hat_A(d) == pytest.approx(theta_hat(d), abs=1e-14)
        assert theta_hat_B(d) == pytest.approx(theta_hat(d), abs=1e-14)

    def test_zero_slopes_give_theta_hat(self):
        # y symmetric in x within each cell so both slopes vanish
        x = np.array([-1.0, 1.0, -2.0, 2.0, 0.5, 1.5, 2.5, 3.5])
        arm = [1, 1, 1, 1, 2, 2, 2, 2]
        y = np.array([1.0, 1.0, 3.0, 3.0, 0.0, 2.0, 2.0, 0.0])
        d = ds([0] * 8, arm, y, x=x[:, None])
        np.testing.assert_allclose(beta_hats(d).beta_t_z[0, :, 0], 0.0, atol=1e-14)
        assert theta_hat_A(d) == pytest.approx(theta_hat(d), abs=1e-14)

    def test_equal_arm_slopes(self):
        x = np.array([0.0, 1.0, 2.0, 4.0, 0.5, 1.0, 3.0, 3.5])
        arm = np.array([1, 1, 1, 1, 2, 2, 2, 2])
        y = 1.5 * x + np.where(arm == 2, 1.0, 0.0) + np.array([0.1, -0.1, 0.2, -0.2] * 2)
        x2 = np.concatenate([x[:4], x[:4] + 0.7])
        y2 = np.concatenate([y[:4], y[:4] + 1.5 * 0.7 + 1.0])
        d = ds([0] * 8, arm, y2, x=x2[:, None])
        assert theta_hat_B(d) == pytest.approx(theta_hat_A(d), rel=1e-12)

    def test_twelve_subject_hand_dataset(self):
        z = [0] * 6 + [1] * 6
        arm = [1, 1, 1, 2, 2, 2] * 2
        x = np.array([0.0, 1.0, 2.0, 1.0, 2.0, 4.0, -1.0, 0.0, 2.0, 0.0, 1.0, 1.5])
        y = np.array([1.0, 2.5, 2.0, 3.0, 5.0, 6.5, 0.0, 1.0, 1.5, 2.0, 2.0, 4.0])
        d = ds(z, arm, y, x=x[:, None])
        recs = [((zi,), (xi,), ai, yi) for zi, xi, ai, yi in zip(z, x, arm, y)]
        assert theta_hat_A(d) == pytest.approx(naive.theta_A(recs, 2, 1, 1), rel=1e-12)
        assert theta_hat_B(d) == pytest.approx(naive.theta_B(recs, 2, 1, 1), rel=1e-12)
        # spreadsheet-style for stratum 0, arm 1: xbar=1, slope=0.5; arm 2: xbar=7/3
        xbar0 = x[:6].mean()
        a1 = y[:3].mean() - (1.0 - xbar0) * 0.5
        sx = x[3:6] - x[3:6].mean()
        b2 = (sx * (y[3:6] - y[3:6].mean())).sum() / (sx**2).sum()
        a2 = y[3:6].mean() - (x[3:6].mean() - xbar0) * b2
        xbar1 = x[6:].mean()
        sx = x[6:9] - x[6:9].mean()
        b1 = (sx * (y[6:9] - y[6:9].mean())).sum() / (sx**2).sum()
        c1 = y[6:9].mean() - (x[6:9].mean() - xbar1) * b1
        sx = x[9:] - x[9:].mean()
        b2b = (sx * (y[9:] - y[9:].mean())).sum() / (sx**2).sum()
        c2 = y[9:].mean() - (x[9:].mean() - xbar1) * b2b
        assert theta_hat_A(d) == pytest.approx(0.5 * (a2 - a1) + 0.5 * (c2 - c1), rel=1e-12)

    def test_p0_falls_back(self, rng):
        d = random_dataset(rng, p=0, floor=3)
        assert theta_hat_A(d) == theta_hat(d)
        assert theta_hat_B(d) == theta_hat(d)

    def test_exact_linear_recovers_theta(self):
        # Y^(t) = t + b_t x exactly, with per-cell determined fits
        gen = np.random.default_rng(8)
        z, arm, x = [], [], []
        for s in range(3):
            for t in (1, 2):
                for _ in range(5):
                    z.append(s)
                    arm.append(t)
                    x.append(gen.normal())
        x = np.array(x)
        arm = np.array(arm)
        slope = {1: 1.5, 2: -0.5}
        y = arm + np.array([slope[a] for a in arm]) * x
        d = ds(z, arm, y, x=x[:, None])
        # theta in the sample's own covariate distribution: 1 + (b2 - b1) * xbar(z) averaged
        xbar_z = np.array([x[np.array(z) == s].mean() for s in range(3)])
        target = np.mean(1.0 + (slope[2] - slope[1]) * xbar_z)
        assert theta_hat_A(d) == pytest.approx(target, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 3), p=st.integers(1, 2),
       a=st.floats(-5, 5).filter(lambda v: abs(v) > 0.1), b=st.floats(-5, 5))
def test_equivariance_and_antisymmetry(seed, k, p, a, b):
    rng = np.random.default_rng(seed)
    d = random_dataset(rng, k=k, p=p, nstrata=2, floor=p + 3)
    c = Contrast(k, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for f in (theta_hat, theta_hat_A, theta_hat_B):
            base = f(d, c)
            assert f(d.scaled(a, b), c) == pytest.approx(a * base, rel=1e-9, abs=1e-9)
            assert f(d, c.reversed()) == -base
        m = rng.normal(size=(p, p)) + 2 * np.eye(p)
        shift = rng.normal(size=p)
        dx = TrialDataset(d.z, d.x @ m.T + shift, d.arm, d.y, d.alloc)
        for f in (theta_hat_A, theta_hat_B):
            assert f(dx, c) == pytest.approx(f(d, c), rel=1e-9, abs=1e-9)
