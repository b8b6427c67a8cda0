import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps
from scipy.special import expit

from riskmine.errors import CollinearityError, SeparationError, ValidationError
from riskmine.features import FeatureMatrix, FeatureSpec
from riskmine.regress import (Z975, discover_risk_factors, extreme_levels, figure_stars, fit_diagnostics,
                              fit_logistic, hosmer_lemeshow, log_likelihood, odds_ratio_ci, pseudo_r2, RiskFactor,
                              wald_risk_factors)


def grid_search_mle(X, y, levels=45, points=9):
    """Coarse-to-fine grid maximisation of the logistic log-likelihood (no derivatives)."""
    X1 = np.column_stack([np.ones(len(y)), X])
    d = X1.shape[1]
    center = np.zeros(d)
    half = 4.0
    best_ll = -np.inf
    for _ in range(levels):
        axes = [c + np.linspace(-half, half, points) for c in center]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        eta = X1 @ grid.T
        ll = (y[:, None] * eta - np.logaddexp(0, eta)).sum(axis=0)
        k = int(np.argmax(ll))
        center, best_ll = grid[k], float(ll[k])
        half = half / 2.0
    return center, best_ll


def random_instance(rng, n=200, m=3):
    X = rng.normal(size=(n, m))
    beta = rng.normal(0, 0.8, m + 1)
    y = (rng.random(n) < expit(beta[0] + X @ beta[1:])).astype(float)
    return X, y


class TestFitLogistic:
    def test_intercept_only_closed_form(self):
        y = np.r_[np.ones(30), np.zeros(70)]
        model = fit_logistic(np.zeros((100, 0)), y)
        assert model.intercept == pytest.approx(math.log(3 / 7), abs=1e-10)

    def test_two_by_two_closed_form(self):
        x = np.r_[np.ones(10), np.zeros(10)]
        y = np.r_[np.ones(8), np.zeros(2), np.ones(2), np.zeros(8)]
        model = fit_logistic(x, y)
        assert model.slopes[0] == pytest.approx(math.log(16), abs=1e-9)

    def test_matches_grid_search_oracle(self):
        rng = np.random.default_rng(2024)
        for i in range(50):
            X, y = random_instance(rng, m=1 + i % 3)
            model = fit_logistic(X, y)
            _, ll_grid = grid_search_mle(X, y)
            assert model.log_likelihood >= ll_grid - 1e-9
            assert model.log_likelihood - ll_grid < 1e-6

    def test_score_vanishes_and_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        X, y = random_instance(rng)
        model = fit_logistic(X, y)
        assert np.max(np.abs(model.score)) <= 1e-6
        X1 = np.column_stack([np.ones(len(y)), X])
        beta = model.coefficients + np.array([0.05, -0.03, 0.02, 0.04])
        analytic = X1.T @ (y - expit(X1 @ beta))
        h = 1e-5
        numeric = np.array([(log_likelihood(X1, y, beta + h * e) - log_likelihood(X1, y, beta - h * e)) / (2 * h)
                            for e in np.eye(4)])
        np.testing.assert_allclose(numeric, analytic, rtol=1e-3)

    def test_affine_rescaling_invariance(self):
        rng = np.random.default_rng(7)
        X, y = random_instance(rng)
        a = fit_logistic(X, y)
        Xs = X.copy()
        Xs[:, 1] = 3.5 * Xs[:, 1] + 2.0
        b = fit_logistic(Xs, y)
        assert b.slopes[1] == pytest.approx(a.slopes[1] / 3.5, rel=1e-8)
        assert b.log_likelihood == pytest.approx(a.log_likelihood, abs=1e-8)
        np.testing.assert_allclose(b.predict_proba(Xs), a.predict_proba(X), atol=1e-8)
        da, db = fit_diagnostics(a, X, y), fit_diagnostics(b, Xs, y)
        np.testing.assert_allclose([db.omnibus_chi2, db.r2_cox_snell, db.r2_nagelkerke],
                                   [da.omnibus_chi2, da.r2_cox_snell, da.r2_nagelkerke], atol=1e-8)

    def test_covariance_matches_inverse_information(self):
        rng = np.random.default_rng(9)
        X, y = random_instance(rng, n=500)
        model = fit_logistic(X, y)
        X1 = np.column_stack([np.ones(len(y)), X])
        p = expit(X1 @ model.coefficients)
        info = X1.T @ (X1 * (p * (1 - p))[:, None])
        np.testing.assert_allclose(model.covariance @ info, np.eye(4), atol=1e-8)

    def test_separation_detected(self):
        x = np.r_[np.arange(10.0), np.arange(10.0) + 20]
        y = np.r_[np.zeros(10), np.ones(10)]
        with pytest.raises(SeparationError):
            fit_logistic(x, y)

    def test_collinearity_names_column(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=50)
        y = (rng.random(50) < 0.4).astype(float)
        with pytest.raises(CollinearityError) as err:
            fit_logistic(np.column_stack([x, 2 * x]), y, columns=["a", "b"])
        assert "b" in str(err.value)

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            fit_logistic(np.zeros((5, 1)), np.zeros(5))


class TestOddsRatio:
    @pytest.mark.parametrize("B,SE,expected", [(2.153, 0.598, (8.612, 2.666, 27.818)),
                                               (0.451, 0.079, (1.570, 1.344, 1.834))])
    def test_published_transforms(self, B, SE, expected):
        # B and SE are themselves rounded to 3 decimals, so agreement is to about 0.1%
        np.testing.assert_allclose(odds_ratio_ci(B, SE), expected, rtol=1e-3)

    def test_zero_coefficient_symmetric(self):
        e, lo, hi = odds_ratio_ci(0.0, 0.3)
        assert e == 1.0
        assert math.log(lo) == pytest.approx(-math.log(hi))

    def test_published_rows_within_half_percent(self, risk_factor_rows):
        assert len(risk_factor_rows) >= 60
        for r in risk_factor_rows:
            got = np.array(odds_ratio_ci(float(r["B"]), float(r["SE"])))
            want = np.array([float(r["exp_B"]), float(r["ci_lower"]), float(r["ci_upper"])])
            np.testing.assert_allclose(got, want, rtol=0.005, err_msg=f"{r['feature']} {r['sex']} {r['age']}")

    @given(st.floats(-5, 5), st.floats(1e-3, 3))
    def test_interval_brackets_estimate(self, B, SE):
        e, lo, hi = odds_ratio_ci(B, SE)
        assert lo < e < hi
        assert math.log(hi) - math.log(lo) == pytest.approx(2 * Z975 * SE, rel=1e-9)


class TestDiagnostics:
    def test_published_pseudo_r2(self, diagnostics_rows):
        assert len(diagnostics_rows) == 18
        for r in diagnostics_rows:
            cs, nk = pseudo_r2(float(r["chi2"]), int(r["size"]), float(r["minus2ll"]))
            assert f"{cs:.3f}" == f"{float(r['cox_snell']):.3f}"
            assert f"{nk:.3f}" == f"{float(r['nagelkerke']):.3f}"

    def test_null_model(self):
        rng = np.random.default_rng(3)
        y = (rng.random(300) < 0.2).astype(float)
        model = fit_logistic(np.zeros((300, 0)), y)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            d = fit_diagnostics(model, np.zeros((300, 0)), y)
        assert d.omnibus_chi2 == pytest.approx(0.0, abs=1e-9)
        assert d.r2_cox_snell == pytest.approx(0.0, abs=1e-12)
        assert d.r2_nagelkerke == pytest.approx(0.0, abs=1e-12)

    @given(st.floats(0, 1000), st.integers(50, 20000), st.floats(1, 20000))
    def test_cox_snell_below_nagelkerke(self, chi2, n, m2ll):
        cs, nk = pseudo_r2(chi2, n, m2ll)
        assert 0 <= cs <= nk + 1e-15 <= 1 + 1e-12

    def test_hosmer_lemeshow_oracle(self):
        rng = np.random.default_rng(5)
        p = rng.uniform(0.01, 0.5, 1000)
        y = (rng.random(1000) < p).astype(float)
        chi2, df, pval, g = hosmer_lemeshow(y, p)
        order = np.argsort(p, kind="stable")
        expected = 0.0
        for idx in np.array_split(order, 10):
            o1, e1 = y[idx].sum(), p[idx].sum()
            expected += (o1 - e1) ** 2 / e1 + (o1 - e1) ** 2 / (idx.size - e1)
        assert chi2 == pytest.approx(expected, rel=1e-12)
        assert (df, g) == (8, 10)
        assert pval == pytest.approx(sps.chi2.sf(expected, 8))

    def test_hosmer_lemeshow_collapses_groups(self):
        p = np.repeat([0.1, 0.2, 0.3], 50)
        y = (np.arange(150) % 5 == 0).astype(float)
        with pytest.warns(RuntimeWarning):
            _, df, _, g = hosmer_lemeshow(y, p)
        assert g == 3 and df == 1


def _matrix(rng, n, beta_ord, stratum=("female", "25-34")):
    spec_a = FeatureSpec("Signal", "implicit", "ordinal", ("low", "b", "c", "d", "high"))
    spec_b = FeatureSpec("Noise", "implicit", "ordinal", ("low", "b", "c", "d", "high"))
    codes = rng.integers(0, 5, size=(n, 2))
    y = (rng.random(n) < expit(-3 + beta_ord * codes[:, 0])).astype(int)
    return FeatureMatrix(codes, y, [spec_a, spec_b], stratum)


class TestDiscovery:
    def test_planted_ordinal_coverage(self):
        # B = 0.451 on one ordinal feature, n = 5660, about 5% prevalence
        rng = np.random.default_rng(11)
        hits = 0
        spec = FeatureSpec("HHS", "implicit", "ordinal", ("a", "b", "c", "d", "e"))
        for _ in range(100):
            x = rng.integers(0, 5, 5660)
            y = (rng.random(5660) < expit(-3.9 + 0.451 * x)).astype(int)
            fm = FeatureMatrix(x[:, None], y, [spec])
            (res,) = discover_risk_factors([fm], family="subgroup")
            f = res.factors[0]
            hits += abs(f.B - 0.451) <= 2 * f.SE
        assert hits >= 90

    def test_signal_found_noise_not(self):
        rng = np.random.default_rng(0)
        res = discover_risk_factors([_matrix(rng, 4000, 0.5)])
        assert res[0].discovered_features == ["Signal"]
        assert res[0].placebo_features == ["Noise"]

    def test_pooled_family_and_padding(self):
        rng = np.random.default_rng(1)
        mats = [_matrix(rng, 3000, 0.3), _matrix(rng, 3000, 0.0, ("male", "25-34"))]
        pooled = discover_risk_factors(mats, family="pooled")
        raw = np.array([f.p_raw for r in pooled for f in r.factors])
        from riskmine.stats import bh_adjust
        np.testing.assert_allclose([f.p_bh for r in pooled for f in r.factors], bh_adjust(raw))
        padded = discover_risk_factors(mats, family="pooled", candidates=[10, 10])
        expected = bh_adjust(np.r_[raw, np.ones(16)])[:4]
        np.testing.assert_allclose([f.p_bh for r in padded for f in r.factors], expected)

    def test_unknown_family(self):
        with pytest.raises(ValidationError):
            discover_risk_factors([], family="global")

    def test_extreme_levels_keeps_largest_magnitude(self):
        rows = [RiskFactor("Alcohol", "a", 0.4, 0.1, 0.01, 0.02), RiskFactor("Alcohol", "b", -0.9, 0.2, 0.01, 0.02),
                RiskFactor("Weight", None, 0.2, 0.05, 0.01, 0.02)]
        out = extreme_levels(rows)
        assert [(r.feature, r.level) for r in out] == [("Alcohol", "b"), ("Weight", None)]

    def test_wald_excludes_missing_indicator(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(400, 2))
        y = (rng.random(400) < expit(X[:, 0])).astype(float)
        model = fit_logistic(X, y, columns=["a", "persona_missing"],
                             meta=[("a", None), ("persona_missing", None)])
        assert [f.feature for f in wald_risk_factors(model)] == ["a"]

    def test_figure_stars(self):
        assert [figure_stars(p) for p in (0.0005, 0.005, 0.03)] == ["**", "*", ""]
