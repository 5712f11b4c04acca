from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carinf.core import AllocationSpec, SubjectRecord, TrialDataset, stratum_keys, summarize
from carinf.errors import ConfigError, IncompleteRecord

from conftest import random_dataset


class TestAllocationSpec:
    def test_parse_ratio(self):
        a = AllocationSpec.parse("1:2:2")
        assert a.pi == (Fraction(1, 5), Fraction(2, 5), Fraction(2, 5))
        assert a.k == 3
        assert a.base_vector == (1, 2, 2)
        assert a.ratio == "1:2:2"

    def test_parse_proportions(self):
        a = AllocationSpec.parse("1/3, 2/3")
        assert a.pi == (Fraction(1, 3), Fraction(2, 3))
        assert AllocationSpec.parse("1:2") == a

    def test_decimal_sum_exact(self):
        a = AllocationSpec((0.2, 0.4, 0.4))
        assert sum(a.pi) == 1

    @pytest.mark.parametrize("pi", [(0.5, 0.6), (1.0,), (0.0, 1.0), (-0.5, 1.5), (0.3, 0.3, 0.3)])
    def test_invalid(self, pi):
        with pytest.raises(ConfigError):
            AllocationSpec(pi)

    def test_equal(self):
        assert AllocationSpec.equal(3).pi == (Fraction(1, 3),) * 3
        np.testing.assert_allclose(AllocationSpec.equal(4).pi_array, 0.25)


class TestSummarize:
    def test_two_subjects(self):
        d = TrialDataset(z=[(0,), (0,)], x=np.zeros((2, 0)), arm=[1, 2], y=[3.0, 5.0],
                         alloc=AllocationSpec.equal(2))
        s = d.summary
        assert s.n_z.tolist() == [2]
        assert s.ybar[0].tolist() == [3.0, 5.0]

    def test_constant_outcomes(self):
        n = 12
        d = TrialDataset(z=[(0,)] * n, x=np.arange(n, dtype=float), arm=[1, 2] * 6, y=[7.5] * n,
                         alloc=AllocationSpec.equal(2))
        s = d.summary
        assert np.all(s.s2 == 0)
        assert np.all(s.ybar == 7.5)
        assert np.all(s.xy == 0)

    def test_gram_matches_double_loop(self):
        x = np.array([0.5, -1.0, 2.0, 3.5, 1.0, -0.5])
        y = np.array([1.0, 2.0, -1.0, 0.0, 4.0, 2.5])
        d = TrialDataset(z=[(0,)] * 6, x=x, arm=[1, 1, 1, 2, 2, 2], y=y, alloc=AllocationSpec.equal(2))
        s = d.summary
        for t, idx in ((1, [0, 1, 2]), (2, [3, 4, 5])):
            xs, ys = x[idx], y[idx]
            # sum over pairs: sum_i (x_i - xbar)^2 = (1 / 2m) sum_i sum_j (x_i - x_j)^2
            m = len(idx)
            g = sum((a - b) ** 2 for a in xs for b in xs) / (2 * m)
            h = sum((xs[i] - xs[j]) * (ys[i] - ys[j]) for i in range(m) for j in range(m)) / (2 * m)
            assert s.gram[0, t - 1, 0, 0] == pytest.approx(g, rel=1e-12)
            assert s.xy[0, t - 1, 0] == pytest.approx(h, rel=1e-12)

    def test_incomplete(self):
        d = TrialDataset(z=[(0,), (0,)], x=np.zeros((2, 0)), arm=[1, 0], y=[1.0, 2.0],
                         alloc=AllocationSpec.equal(2))
        with pytest.raises(IncompleteRecord):
            summarize(d)
        d = TrialDataset(z=[(0,), (0,)], x=np.zeros((2, 0)), arm=[1, 2], y=[1.0, np.nan],
                         alloc=AllocationSpec.equal(2))
        with pytest.raises(IncompleteRecord):
            summarize(d)

    def test_arm_out_of_range(self):
        with pytest.raises(ConfigError):
            TrialDataset(z=[(0,)], x=np.zeros((1, 0)), arm=[3], y=[1.0], alloc=AllocationSpec.equal(2))

    def test_pooled_xbar(self, rng):
        d = random_dataset(rng, k=3, p=2, nstrata=3)
        s = d.summary
        for i, z in enumerate(s.strata):
            rows = [j for j in range(d.n) if d.z[j] == z]
            np.testing.assert_allclose(s.xbar_z[i], d.x[rows].mean(axis=0), rtol=1e-12)

    def test_cells_and_records_roundtrip(self, rng):
        d = random_dataset(rng, k=2, p=1, nstrata=2)
        back = TrialDataset.from_records(d.records(), d.alloc)
        np.testing.assert_array_equal(back.arm, d.arm)
        np.testing.assert_array_equal(back.y, d.y)
        cells = d.summary.cells
        assert sum(c.n_t_z for c in cells.values()) == d.n

    def test_records_input(self):
        recs = [SubjectRecord(i, (i % 2,), (float(i),), 1 + i % 2, float(i)) for i in range(8)]
        d = TrialDataset.from_records(recs, AllocationSpec.equal(2))
        assert d.p == 1
        assert d.summary.n_tz.tolist() == [[4, 0], [0, 4]]

    def test_scaled(self, rng):
        d = random_dataset(rng)
        np.testing.assert_allclose(d.scaled(10.0, 3.0).y, 10 * d.y + 3)

    def test_stratum_keys(self):
        assert stratum_keys([[0, 1], [2, 3]]) == ((0, 2), (1, 3))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 3), p=st.integers(0, 2), nstrata=st.integers(1, 4))
def test_count_identities_and_permutation_invariance(seed, k, p, nstrata):
    rng = np.random.default_rng(seed)
    d = random_dataset(rng, k=k, p=p, nstrata=nstrata, floor=1)
    s = d.summary
    assert s.n_z.sum() == d.n
    np.testing.assert_array_equal(s.n_tz.sum(axis=1), s.n_z)
    perm = rng.permutation(d.n)
    d2 = TrialDataset(tuple(d.z[i] for i in perm), d.x[perm], d.arm[perm], d.y[perm], d.alloc)
    s2 = d2.summary
    for name in ("n_tz", "ybar", "syy", "xbar", "gram", "xy", "xbar_z"):
        np.testing.assert_allclose(getattr(s2, name), getattr(s, name), rtol=1e-10, atol=1e-12)
    # gram is PSD
    if p:
        for g in s.gram.reshape(-1, p, p):
            assert np.linalg.eigvalsh(g).min() >= -1e-10
    assert np.all(s.syy >= 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_gram_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    d = random_dataset(rng, k=2, p=2, nstrata=2)
    s = d.summary
    for i, z in enumerate(s.strata):
        for t in (1, 2):
            rows = [j for j in range(d.n) if d.z[j] == z and d.arm[j] == t]
            xc = d.x[rows] - d.x[rows].mean(axis=0)
            brute = sum(np.outer(r, r) for r in xc)
            np.testing.assert_allclose(s.gram[i, t - 1], brute, rtol=1e-10, atol=1e-12)
