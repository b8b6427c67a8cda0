import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from riskmine.errors import ValidationError
from riskmine.stats import (REPORTED_POWER_N, PowerSpec, bh_adjust, mann_whitney, mann_whitney_from_u,
                            pearson_chi2, power_sample_size, power_sample_size_exact, scheirer_ray_hare, srh_h,
                            welch_t, welch_t_samples, wilcoxon_signed_rank)

p_vectors = st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=40)


class TestWelch:
    def test_depression_age_difference(self):
        r = welch_t(34.4, 10.5, 3071, 31.3, 8.7, 10000)
        assert r.statistic == pytest.approx(14.874, rel=0.01)
        assert r.df == pytest.approx(4431.893, rel=0.01)
        assert r.p_value < 0.001

    def test_diabetes_age_difference(self):
        r = welch_t(38.5, 11.8, 3936, 31.3, 8.7, 10000)
        assert r.statistic == pytest.approx(34.899, rel=0.01)
        assert r.df == pytest.approx(5687.344, rel=0.01)

    def test_identical_groups(self):
        assert welch_t(5.0, 2.0, 30, 5.0, 2.0, 40).statistic == 0.0

    def test_matches_scipy_on_samples(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(0, 1, 40), rng.normal(0.3, 2, 25)
        ours = welch_t_samples(x, y)
        ref = sps.ttest_ind(x, y, equal_var=False)
        np.testing.assert_allclose([ours.statistic, ours.p_value], [ref.statistic, ref.pvalue], rtol=1e-10)

    @given(st.floats(-50, 50), st.floats(0.1, 20), st.integers(2, 500),
           st.floats(-50, 50), st.floats(0.1, 20), st.integers(2, 500))
    def test_antisymmetric_under_swap(self, m1, s1, n1, m2, s2, n2):
        a, b = welch_t(m1, s1, n1, m2, s2, n2), welch_t(m2, s2, n2, m1, s1, n1)
        assert a.statistic == pytest.approx(-b.statistic, abs=1e-12)
        assert a.p_value == pytest.approx(b.p_value, abs=1e-12)

    def test_rejects_tiny_groups(self):
        with pytest.raises(ValidationError):
            welch_t(1, 1, 1, 2, 1, 10)


class TestPearsonChi2:
    def test_sex_proportions_depression(self):
        r = pearson_chi2([[1164, 1907], [5670, 4330]])
        assert r.statistic == pytest.approx(333.180, abs=2)
        assert r.df == 1

    def test_sex_proportions_diabetes(self):
        assert pearson_chi2([[1850, 2086], [5670, 4330]]).statistic == pytest.approx(107.035, abs=2)

    def test_independence_product_gives_zero(self):
        t = np.outer([10, 30], [2, 5, 3])
        assert pearson_chi2(t).statistic == pytest.approx(0.0, abs=1e-12)

    def test_brute_force_2x3(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            t = rng.integers(1, 50, size=(2, 3)).astype(float)
            chi2 = 0.0
            n = t.sum()
            for i in range(2):
                for j in range(3):
                    e = t[i].sum() * t[:, j].sum() / n
                    chi2 += (t[i, j] - e) ** 2 / e
            assert pearson_chi2(t).statistic == pytest.approx(chi2, rel=1e-12)
            assert pearson_chi2(t).df == 2

    @given(st.lists(st.lists(st.integers(1, 100), min_size=3, max_size=3), min_size=2, max_size=4),
           st.randoms())
    def test_permutation_invariant(self, rows, rnd):
        t = np.array(rows, float)
        r_perm = list(range(t.shape[0]))
        c_perm = list(range(t.shape[1]))
        rnd.shuffle(r_perm)
        rnd.shuffle(c_perm)
        assert pearson_chi2(t[r_perm][:, c_perm]).statistic == pytest.approx(pearson_chi2(t).statistic,
                                                                               rel=1e-10)

    def test_zero_marginal_rejected(self):
        with pytest.raises(ValidationError):
            pearson_chi2([[0, 0], [1, 2]])


class TestMannWhitney:
    @pytest.mark.parametrize("u,n1,n2,z", [(14661834, 3071, 10000, -3.790), (17241491, 3936, 10000, -11.406)])
    def test_z_from_u(self, u, n1, n2, z):
        assert mann_whitney_from_u(u, n1, n2).auxiliary["z"] == pytest.approx(z, abs=0.002)

    def test_complete_separation(self):
        r = mann_whitney([1, 2], [3, 4])
        assert r.auxiliary["U"] == 0
        assert r.auxiliary["U2"] == 4

    def test_matches_scipy_asymptotic(self):
        rng = np.random.default_rng(5)
        x, y = rng.integers(0, 10, 60), rng.integers(0, 12, 45)
        ours = mann_whitney(x, y, tie_correction=True)
        ref = sps.mannwhitneyu(x, y, use_continuity=False, method="asymptotic")
        assert ours.statistic == ref.statistic
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=30),
           st.lists(st.floats(-100, 100), min_size=1, max_size=30))
    def test_u_sum_and_swap(self, x, y):
        a, b = mann_whitney(x, y), mann_whitney(y, x)
        assert a.auxiliary["U"] + a.auxiliary["U2"] == pytest.approx(len(x) * len(y))
        assert a.auxiliary["z"] == pytest.approx(-b.auxiliary["z"], abs=1e-9)


def exact_signed_rank_p(d):
    """Two-sided exact p by enumerating every sign pattern of the absolute ranks."""
    ranks = sps.rankdata(np.abs(d))
    n = len(d)
    mean = n * (n + 1) / 4.0
    observed = abs(ranks[np.asarray(d) > 0].sum() - mean)
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = float(np.dot(signs, ranks))
        hits += abs(w - mean) >= observed - 1e-12
    return hits / 2 ** n


class TestWilcoxon:
    def test_eight_positive_differences(self):
        r = wilcoxon_signed_rank(np.linspace(0.01, 0.08, 8))
        assert r.statistic == 36
        assert r.auxiliary["z"] == pytest.approx(-2.521, abs=0.001)
        assert r.p_value == pytest.approx(0.012, abs=0.001)

    def test_antisymmetric_differences_center(self):
        r = wilcoxon_signed_rank([1, -1, 2, -2, 3, -3])
        assert r.auxiliary["z"] == pytest.approx(0.0)
        assert r.p_value == pytest.approx(1.0)

    def test_against_exhaustive_enumeration(self):
        # at n=10 the normal approximation is within a few hundredths of the exact tail
        rng = np.random.default_rng(11)
        errors = []
        for _ in range(10):
            d = rng.normal(0.3, 1, 10)
            errors.append(abs(wilcoxon_signed_rank(d).p_value - exact_signed_rank_p(d)))
        assert max(errors) < 0.06
        assert np.mean(errors) < 0.03

    def test_zeros_dropped_and_too_few(self):
        with pytest.raises(ValidationError):
            wilcoxon_signed_rank([0, 0, 1, 2, 3, 4])
        assert wilcoxon_signed_rank([0, 1, 2, 3, 4, 5]).auxiliary["n"] == 5


class TestScheirerRayHare:
    @pytest.mark.parametrize("ss,ms,df,h", [
        (45722727.10, 8170631.38, 1, 5.60), (1427434402.99, 8170631.38, 4, 174.70),
        (808029727.08, 8170631.38, 4, 98.89), (90699574.12, 7939730.94, 1, 11.42),
        (577055091.73, 7939730.94, 4, 72.68), (1038885216.97, 7939730.94, 4, 130.85)])
    def test_h_from_sums_of_squares(self, ss, ms, df, h):
        assert srh_h(ss, ms, df).statistic == pytest.approx(h, abs=0.01)

    def test_ms_total_from_published_totals(self):
        assert 81657290001.44 / 9994 == pytest.approx(8170631.38, abs=0.01)
        assert 79349671045.78 / 9994 == pytest.approx(7939730.94, abs=0.01)

    def test_balanced_no_effect(self):
        # values are their own ranks and every cell has mean 4.5
        a = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        b = np.array([0, 0, 1, 1, 0, 0, 1, 1])
        values = np.array([1, 8, 2, 7, 3, 6, 4, 5], float)
        res = scheirer_ray_hare(values, a, b)
        for r in res:
            assert r.statistic == pytest.approx(0.0, abs=1e-9)

    def test_sums_of_squares_partition_total(self):
        rng = np.random.default_rng(2)
        a = rng.integers(0, 2, 80)
        b = rng.integers(0, 3, 80)
        res = scheirer_ray_hare(rng.normal(size=80) + a, a, b)
        total = sum(r.auxiliary["SS"] for r in res) + res[0].auxiliary["SS_error"]
        assert total == pytest.approx(res[0].auxiliary["SS_total"], rel=1e-10)

    def test_empty_cell_rejected(self):
        with pytest.raises(ValidationError):
            scheirer_ray_hare([1, 2, 3], [0, 0, 1], [0, 1, 0])


def bh_rejections_bruteforce(p, alpha):
    m = len(p)
    order = np.sort(p)
    k = max([i for i in range(1, m + 1) if order[i - 1] <= i * alpha / m], default=0)
    return set(np.flatnonzero(p <= order[k - 1])) if k else set()


class TestBenjaminiHochberg:
    def test_step_up_example(self):
        np.testing.assert_allclose(bh_adjust([0.01, 0.02, 0.03, 0.04]), [0.04] * 4)

    def test_single_value_unchanged(self):
        np.testing.assert_allclose(bh_adjust([0.3]), [0.3])

    def test_matches_rejection_sets(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            p = rng.uniform(size=rng.integers(1, 30)) ** rng.uniform(0.5, 4)
            adj = bh_adjust(p)
            for alpha in (0.01, 0.05, 0.1, 0.2):
                assert set(np.flatnonzero(adj <= alpha)) == bh_rejections_bruteforce(p, alpha)

    @given(p_vectors)
    def test_bounded_and_order_preserving(self, p):
        p = np.asarray(p)
        adj = bh_adjust(p)
        assert (adj >= p - 1e-15).all() and (adj <= 1).all()
        order = np.argsort(p, kind="stable")
        assert (np.diff(adj[order]) >= -1e-15).all()

    def test_not_idempotent(self):
        # re-adjusting already adjusted values inflates them again
        np.testing.assert_allclose(bh_adjust([1.0, 0.25]), [1.0, 0.5])
        np.testing.assert_allclose(bh_adjust(bh_adjust([1.0, 0.25])), [1.0, 1.0])

    @given(p_vectors, st.lists(st.floats(0, 1), min_size=40, max_size=40))
    def test_monotone(self, p, bump):
        p = np.asarray(p)
        q = np.minimum(p + np.asarray(bump[: p.size]) * (1 - p), 1.0)
        assert (bh_adjust(q) >= bh_adjust(p) - 1e-15).all()

    def test_rejects_invalid(self):
        with pytest.raises(ValidationError):
            bh_adjust([0.5, 1.2])


class TestPower:
    def test_reported_parameters(self):
        n = power_sample_size(PowerSpec(1.49, 0.05, 0.8, 0.5, 0.8))
        assert n == 988
        assert abs(n - REPORTED_POWER_N) / REPORTED_POWER_N < 0.15

    def test_variance_inflation_linear(self):
        a = power_sample_size_exact(PowerSpec(r2_other=0.0))
        b = power_sample_size_exact(PowerSpec(r2_other=0.8))
        assert a == pytest.approx(b / 5, rel=1e-12)

    def test_inverse_square_in_log_odds(self):
        a = power_sample_size_exact(PowerSpec(odds_ratio=1.49))
        b = power_sample_size_exact(PowerSpec(odds_ratio=1.49 ** 2))
        assert b == pytest.approx(a / 4, rel=1e-12)

    @pytest.mark.parametrize("kw", [{"alpha": 0}, {"power": 1}, {"p0": 0}, {"r2_other": 1}, {"odds_ratio": -1}])
    def test_invalid_spec(self, kw):
        with pytest.raises(ValidationError):
            PowerSpec(**kw)


class TestNullUniformity:
    """Under simulated nulls the p-values are close to uniform (KS sanity check)."""

    def test_welch_mwu_chi2(self):
        rng = np.random.default_rng(42)
        pw, pm, pc = [], [], []
        for _ in range(400):
            x, y = rng.normal(size=40), rng.normal(size=55)
            pw.append(welch_t_samples(x, y).p_value)
            pm.append(mann_whitney(x, y).p_value)
            t = np.array([[rng.binomial(200, 0.3), 0], [rng.binomial(300, 0.3), 0]])
            t[:, 1] = [200 - t[0, 0], 300 - t[1, 0]]
            pc.append(pearson_chi2(t).p_value)
        for p in (pw, pm, pc):
            assert sps.kstest(p, "uniform").pvalue > 0.001

    def test_p_value_always_in_unit_interval(self):
        r = mann_whitney_from_u(0, 5000, 5000)
        assert 0 <= r.p_value <= 1
        assert math.isfinite(r.statistic)
