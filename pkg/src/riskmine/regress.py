"""Multiple logistic regression, fit diagnostics and risk-factor discovery."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy import stats as _dist
from scipy.special import expit

from .errors import CollinearityError, NumericError, SeparationError, ValidationError
from .features import MISSING_COLUMN, FeatureMatrix, design_matrix
from .stats import bh_adjust

Z975 = 1.959964
SCORE_TOL = 1e-8
REL_LL_TOL = 1e-10
MAX_ITER = 50
SEPARATION_BOUND = 15.0


def log_likelihood(X1: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    eta = X1 @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _offending_columns(X1: np.ndarray, names: Sequence[str]) -> list[str]:
    """Columns that add nothing to the rank of the columns before them."""
    bad, basis = [], np.zeros((X1.shape[0], 0))
    rank = 0
    for j in range(X1.shape[1]):
        trial = np.column_stack([basis, X1[:, j]])
        r = np.linalg.matrix_rank(trial)
        if r > rank:
            basis, rank = trial, r
        else:
            bad.append(names[j])
    return bad


@dataclass
class LogisticModel:
    coefficients: np.ndarray  # intercept first
    design_columns: list[str]
    converged: bool
    iterations: int
    log_likelihood: float
    null_log_likelihood: float
    covariance: np.ndarray
    score: np.ndarray
    n: int
    n_cases: int
    meta: list = field(default_factory=list)

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def slopes(self) -> np.ndarray:
        return self.coefficients[1:]

    @property
    def m(self) -> int:
        return len(self.design_columns)

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        return self.coefficients[0] + np.asarray(X, float) @ self.coefficients[1:]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return expit(self.linear_predictor(X))


def fit_logistic(X, y, columns: Sequence[str] | None = None, meta=None) -> LogisticModel:
    """Maximum-likelihood logistic regression by Newton-Raphson (IRLS).

    Starts from zero slopes and the empirical logit intercept, halves the step
    whenever the log-likelihood would drop, and stops when the largest score
    component falls below 1e-8 or the relative log-likelihood change below
    1e-10 (at most 50 iterations).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, m = X.shape
    columns = list(columns) if columns is not None else [f"x{j + 1}" for j in range(m)]
    n1 = int(y.sum())
    if n1 == 0 or n1 == n:
        raise ValidationError("logistic fit needs at least one case and one control")
    X1 = np.column_stack([np.ones(n), X])
    if np.linalg.matrix_rank(X1) < m + 1:
        raise CollinearityError(_offending_columns(X1, ["(intercept)"] + columns))

    beta = np.zeros(m + 1)
    beta[0] = math.log(n1 / (n - n1))
    ll_null = log_likelihood(X1, y, beta)
    ll = ll_null
    converged, it = False, 0
    for it in range(1, MAX_ITER + 1):
        mu = expit(X1 @ beta)
        score = X1.T @ (y - mu)
        if np.max(np.abs(score)) < SCORE_TOL:
            converged = True
            it -= 1
            break
        info = X1.T @ (X1 * (mu * (1 - mu))[:, None])
        try:
            step = linalg.cho_solve(linalg.cho_factor(info), score)
        except linalg.LinAlgError as exc:
            raise NumericError("information matrix is not positive definite") from exc
        t = 1.0
        while True:
            cand = beta + t * step
            ll_cand = log_likelihood(X1, y, cand)
            if ll_cand >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        rel = abs(ll_cand - ll) / max(abs(ll), 1e-300)
        beta, ll = cand, ll_cand
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            s_new = X1.T @ (y - expit(X1 @ beta))
            if np.max(np.abs(s_new)) > SCORE_TOL:
                big = [(["(intercept)"] + columns)[j] for j in np.flatnonzero(np.abs(beta) > SEPARATION_BOUND)]
                raise SeparationError("coefficients diverge (separation) for: " + ", ".join(big))
        if rel < REL_LL_TOL:
            converged = True
            break
    mu = expit(X1 @ beta)
    score = X1.T @ (y - mu)
    info = X1.T @ (X1 * (mu * (1 - mu))[:, None])
    try:
        cov = linalg.cho_solve(linalg.cho_factor(info), np.eye(m + 1))
    except linalg.LinAlgError as exc:
        raise NumericError("information matrix is not positive definite") from exc
    if not converged:
        warnings.warn(f"logistic fit did not converge in {MAX_ITER} iterations", RuntimeWarning)
    return LogisticModel(beta, columns, converged, it, log_likelihood(X1, y, beta), ll_null, cov, score, n, n1,
                         list(meta) if meta is not None else [(c, None) for c in columns])


def fit_feature_matrix(matrix: FeatureMatrix) -> tuple[LogisticModel, np.ndarray]:
    """Fit on a feature matrix's expanded design; returns the model and the design X."""
    d = design_matrix(matrix)
    return fit_logistic(d.X, matrix.labels, d.columns, d.meta), d.X


# -- risk factors ----------------------------------------------------------


@dataclass
class RiskFactor:
    feature: str
    level: str | None
    B: float
    SE: float
    p_raw: float
    p_bh: float = float("nan")

    @property
    def exp_B(self) -> float:
        return math.exp(self.B)

    @property
    def ci_low(self) -> float:
        return math.exp(self.B - Z975 * self.SE)

    @property
    def ci_high(self) -> float:
        return math.exp(self.B + Z975 * self.SE)

    @property
    def z(self) -> float:
        return self.B / self.SE


def odds_ratio_ci(B: float, SE: float) -> tuple[float, float, float]:
    """(Exp(B), lower, upper) of the Wald 95% interval."""
    return math.exp(B), math.exp(B - Z975 * SE), math.exp(B + Z975 * SE)


def wald_risk_factors(model: LogisticModel, exclude: Sequence[str] = (MISSING_COLUMN,)) -> list[RiskFactor]:
    """Wald tests for every slope; BH adjustment runs over the returned family."""
    if not model.converged:
        raise ValidationError("model did not converge")
    var = np.diag(model.covariance)[1:]
    if (var <= 0).any():
        raise NumericError("non-positive variance in the inverse information")
    se = np.sqrt(var)
    out = []
    for j, (feat, level) in enumerate(model.meta):
        if feat in exclude:
            continue
        b = float(model.slopes[j])
        p = float(2 * _dist.norm.sf(abs(b / se[j])))
        out.append(RiskFactor(feat, level, b, float(se[j]), p))
    if out:
        adj = bh_adjust([r.p_raw for r in out])
        for r, q in zip(out, adj):
            r.p_bh = float(q)
    return out


# -- diagnostics -----------------------------------------------------------


@dataclass
class FitDiagnostics:
    omnibus_chi2: float
    omnibus_df: int
    omnibus_p: float
    minus2LL: float
    r2_cox_snell: float
    r2_nagelkerke: float
    hl_chi2: float
    hl_df: int
    hl_p: float
    hl_groups: int = 10


def pseudo_r2(chi2: float, n: int, minus2ll: float) -> tuple[float, float]:
    """Cox & Snell and Nagelkerke R² from the omnibus chi-squared, n and the model's -2LL."""
    cs = 1.0 - math.exp(-chi2 / n)
    null_m2ll = minus2ll + chi2
    return cs, cs / (1.0 - math.exp(-null_m2ll / n))


def hosmer_lemeshow(y, prob, groups: int = 10) -> tuple[float, int, float, int]:
    """Hosmer-Lemeshow statistic over equal-count groups of predicted risk.

    Rows are ordered by (probability, row index).  When fewer than ``groups``
    distinct probabilities exist the rows are grouped by value instead and the
    degrees of freedom shrink to (groups - 2).
    Returns ``(chi2, df, p, n_groups)``.
    """
    y = np.asarray(y, float)
    prob = np.asarray(prob, float)
    order = np.lexsort((np.arange(prob.size), prob))
    distinct = np.unique(prob)
    if distinct.size < groups:
        warnings.warn(f"only {distinct.size} distinct predicted values; Hosmer-Lemeshow groups collapsed",
                      RuntimeWarning)
        parts = [np.flatnonzero(prob == v) for v in distinct]
    else:
        parts = np.array_split(order, groups)
    chi2 = 0.0
    for idx in parts:
        obs1, exp1 = y[idx].sum(), prob[idx].sum()
        obs0, exp0 = idx.size - obs1, idx.size - exp1
        if exp1 > 0:
            chi2 += (obs1 - exp1) ** 2 / exp1
        if exp0 > 0:
            chi2 += (obs0 - exp0) ** 2 / exp0
    g = len(parts)
    df = max(g - 2, 1)
    return float(chi2), df, float(_dist.chi2.sf(chi2, df)), g


def fit_diagnostics(model: LogisticModel, X, y) -> FitDiagnostics:
    chi2 = 2.0 * (model.log_likelihood - model.null_log_likelihood)
    chi2 = max(chi2, 0.0)
    m2ll = -2.0 * model.log_likelihood
    cs, nk = pseudo_r2(chi2, model.n, m2ll)
    df = model.m
    p = float(_dist.chi2.sf(chi2, df)) if df > 0 else 1.0
    hl, hl_df, hl_p, g = hosmer_lemeshow(y, model.predict_proba(X))
    return FitDiagnostics(chi2, df, p, m2ll, cs, nk, hl, hl_df, hl_p, g)


# -- discovery ---------------------------------------------------------------

FIGURE_STARS = ((0.001, "**"), (0.01, "*"))


@dataclass
class SubgroupResult:
    stratum: tuple[str, str]
    size: int
    model: LogisticModel
    diagnostics: FitDiagnostics
    factors: list[RiskFactor]
    significant: list[RiskFactor] = field(default_factory=list)
    candidate_features: list[str] = field(default_factory=list)

    @property
    def discovered_features(self) -> list[str]:
        return [r.feature for r in self.significant]

    @property
    def placebo_features(self) -> list[str]:
        found = set(self.discovered_features)
        return [f for f in self.candidate_features if f not in found]


def extreme_levels(factors: Sequence[RiskFactor]) -> list[RiskFactor]:
    """One row per feature: nominal features keep only their most extreme level.

    That is the largest Exp(B) when B > 0, or the smallest when B < 0 (the
    level with the largest |B|).
    """
    best = {}
    for r in factors:
        cur = best.get(r.feature)
        if cur is None or abs(r.B) > abs(cur.B):
            best[r.feature] = r
    order = []
    for r in factors:
        if r.feature not in order:
            order.append(r.feature)
    return [best[f] for f in order]


def discover_risk_factors(matrices: Sequence[FeatureMatrix], q: float = 0.05, family: str = "pooled",
                          candidates: Sequence[int] | None = None) -> list[SubgroupResult]:
    """Fit each subgroup, run diagnostics and keep coefficients with p^BH < q.

    ``family`` selects the BH family: ``"subgroup"`` corrects within each
    fit, ``"pooled"`` corrects once over the coefficients of all subgroups.
    ``candidates`` optionally gives, per subgroup, the number of coefficients
    that were eligible before screening; coefficients screened out enter the
    family as p = 1, so the correction accounts for every hypothesis looked at.
    """
    if family not in ("subgroup", "pooled"):
        raise ValidationError(f"unknown BH family {family!r}")
    if candidates is not None and len(candidates) != len(matrices):
        raise ValidationError("one candidate count per subgroup is required")
    results = []
    for fm in matrices:
        if fm.specs:
            model, X = fit_feature_matrix(fm)
        else:
            model, X = fit_logistic(np.zeros((fm.n, 0)), fm.labels), np.zeros((fm.n, 0))
        diag = fit_diagnostics(model, X, fm.labels)
        factors = wald_risk_factors(model)
        results.append(SubgroupResult(fm.stratum, fm.n, model, diag, factors, candidate_features=fm.names))
    pad = [0] * len(results) if candidates is None else [max(int(c) - len(r.factors), 0)
                                                         for c, r in zip(candidates, results)]
    groups = [results] if family == "pooled" else [[r] for r in results]
    for grp in groups:
        tested = [f for r in grp for f in r.factors]
        extra = sum(pad[results.index(r)] for r in grp)
        if tested:
            adj = bh_adjust(np.r_[[f.p_raw for f in tested], np.ones(extra)])
            for f, qv in zip(tested, adj):
                f.p_bh = float(qv)
    for res in results:
        res.significant = extreme_levels([r for r in res.factors if r.p_bh < q])
    return results


def figure_stars(p_bh: float) -> str:
    for cut, mark in FIGURE_STARS:
        if p_bh < cut:
            return mark
    return ""


DIAGNOSTICS_HEADER = ["Sex", "Age", "Size", "Omnibus chi2", "Omnibus df", "Omnibus p", "-2 Log Likelihood",
                      "Cox & Snell R2", "Nagelkerke R2", "HL chi2", "HL df", "HL p"]
RISK_FACTOR_HEADER = ["Lifestyle Feature", "Level", "Coding", "Sex", "Age", "Size", "B", "SE", "Exp(B)",
                      "CI Lower", "CI Upper", "p", "p^BH", "Sig."]


def diagnostics_rows(results: Sequence[SubgroupResult]) -> list[list[str]]:
    rows = [DIAGNOSTICS_HEADER]
    for r in results:
        d = r.diagnostics
        rows.append([r.stratum[0].capitalize(), r.stratum[1], str(r.size), f"{d.omnibus_chi2:.3f}",
                     str(d.omnibus_df), f"{d.omnibus_p:.3f}", f"{d.minus2LL:.3f}", f"{d.r2_cox_snell:.3f}",
                     f"{d.r2_nagelkerke:.3f}", f"{d.hl_chi2:.3f}", str(d.hl_df), f"{d.hl_p:.3f}"])
    return rows


def risk_factor_rows(results: Sequence[SubgroupResult], specs_by_name: dict) -> list[list[str]]:
    rows = [RISK_FACTOR_HEADER]
    flat = [(r, f) for r in results for f in r.significant]
    flat.sort(key=lambda t: (t[1].feature.lower(), t[0].stratum))
    for res, f in flat:
        spec = specs_by_name.get(f.feature)
        rows.append([f.feature, f.level or "", spec.coding_label if spec else "", res.stratum[0].capitalize(),
                     res.stratum[1], str(res.size), f"{f.B:.3f}", f"{f.SE:.3f}", f"{f.exp_B:.3f}",
                     f"{f.ci_low:.3f}", f"{f.ci_high:.3f}", f"{f.p_raw:.5f}", f"{f.p_bh:.5f}",
                     figure_stars(f.p_bh)])
    return rows
