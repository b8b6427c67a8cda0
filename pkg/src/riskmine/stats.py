"""Hypothesis tests, multiple-testing correction and sample-size planning.

Distribution tails come from ``scipy.stats``; every statistic itself is
computed here from its textbook definition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _dist
from scipy.stats import rankdata

from .errors import ValidationError

#: Sample size the source study reports for its power calculation.
REPORTED_POWER_N = 1068


@dataclass
class TestResult:
    statistic: float
    df: float
    p_value: float
    auxiliary: dict = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if not np.isfinite(self.statistic):
            raise ValidationError("test statistic is not finite")
        self.p_value = float(min(max(self.p_value, 0.0), 1.0))

    def to_dict(self) -> dict:
        out = {"statistic": float(self.statistic), "df": float(self.df), "p": self.p_value}
        out.update({k: (float(v) if isinstance(v, (int, float, np.floating, np.integer)) else v)
                    for k, v in self.auxiliary.items()})
        return out


def _two_sided_normal(z: float) -> float:
    return float(2.0 * _dist.norm.sf(abs(z)))


def welch_t(mean1, sd1, n1, mean2, sd2, n2) -> TestResult:
    """Two-sample t test without the equal-variance assumption, from summary statistics."""
    if n1 < 2 or n2 < 2:
        raise ValidationError("welch_t needs at least two observations per group")
    if sd1 <= 0 or sd2 <= 0:
        raise ValidationError("welch_t needs positive standard deviations")
    v1, v2 = sd1 ** 2 / n1, sd2 ** 2 / n2
    t = (mean1 - mean2) / math.sqrt(v1 + v2)
    df = (v1 + v2) ** 2 / (v1 ** 2 / (n1 - 1) + v2 ** 2 / (n2 - 1))
    return TestResult(t, df, float(2.0 * _dist.t.sf(abs(t), df)), {"mean_diff": mean1 - mean2})


def welch_t_samples(x, y) -> TestResult:
    x, y = np.asarray(x, float), np.asarray(y, float)
    return welch_t(x.mean(), x.std(ddof=1), x.size, y.mean(), y.std(ddof=1), y.size)


def pearson_chi2(table) -> TestResult:
    """Pearson's chi-squared test of independence on an r x c table of counts."""
    obs = np.asarray(table, dtype=float)
    if obs.ndim != 2 or min(obs.shape) < 2:
        raise ValidationError("contingency table must be at least 2 x 2")
    rows, cols = obs.sum(axis=1), obs.sum(axis=0)
    if (rows <= 0).any() or (cols <= 0).any():
        raise ValidationError("contingency table has a zero marginal")
    n = obs.sum()
    expected = np.outer(rows, cols) / n
    chi2 = float(((obs - expected) ** 2 / expected).sum())
    df = (obs.shape[0] - 1) * (obs.shape[1] - 1)
    return TestResult(chi2, df, float(_dist.chi2.sf(chi2, df)), {"n": n})


def _mwu_z(u, n1, n2, tie_term=0.0):
    n = n1 + n2
    mean = n1 * n2 / 2.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    return (u - mean) / math.sqrt(var)


def mann_whitney_from_u(u: float, n1: int, n2: int) -> TestResult:
    """Normal approximation for a known U statistic, untied variance, no continuity correction."""
    z = _mwu_z(u, n1, n2)
    return TestResult(u, float("nan"), _two_sided_normal(z), {"U": u, "z": z, "n1": n1, "n2": n2})


def mann_whitney(sample1, sample2, tie_correction: bool = False) -> TestResult:
    """Mann-Whitney U test; U refers to ``sample1`` and mid-ranks are used for ties.

    The z score carries no continuity correction; the tie-corrected variance
    is only used when ``tie_correction`` is set.
    """
    x, y = np.asarray(sample1, float), np.asarray(sample2, float)
    n1, n2 = x.size, y.size
    if n1 == 0 or n2 == 0:
        raise ValidationError("mann_whitney needs two non-empty samples")
    ranks = rankdata(np.concatenate([x, y]))
    u1 = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    tie_term = 0.0
    if tie_correction:
        _, counts = np.unique(ranks, return_counts=True)
        tie_term = float((counts ** 3 - counts).sum())
    z = _mwu_z(u1, n1, n2, tie_term)
    return TestResult(u1, float("nan"), _two_sided_normal(z),
                      {"U": u1, "U2": n1 * n2 - u1, "z": z, "n1": n1, "n2": n2})


def wilcoxon_signed_rank(differences) -> TestResult:
    """Wilcoxon signed-rank test on paired differences (normal approximation).

    Zero differences are dropped.  ``statistic`` is the positive-rank sum W+;
    ``z`` is computed from the smaller of the two rank sums, so it is never
    positive, which is how the z of this test is usually reported.
    """
    d = np.asarray(differences, float)
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise ValidationError("all differences are zero")
    if n < 5:
        raise ValidationError(f"wilcoxon_signed_rank needs at least 5 non-zero differences, got {n}")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    _, counts = np.unique(ranks, return_counts=True)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - (counts ** 3 - counts).sum() / 48.0
    z = (min(w_plus, w_minus) - mean) / math.sqrt(var)
    return TestResult(w_plus, float("nan"), _two_sided_normal(z),
                      {"W_plus": w_plus, "W_minus": w_minus, "z": z, "n": n,
                       "direction": "positive" if w_plus > w_minus else ("negative" if w_minus > w_plus else "none")})


def _ss_model(y, groups_list):
    """Regression sum of squares of y on the cell means defined by combined group keys."""
    key = np.zeros(y.size, dtype=np.int64)
    for g in groups_list:
        _, inv = np.unique(g, return_inverse=True)
        key = key * (inv.max() + 1) + inv
    _, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
    means = np.bincount(inv, weights=y) / counts
    return float((counts * (means - y.mean()) ** 2).sum())


def _ss_additive(y, a, b):
    """Regression SS of the additive two-factor model (no interaction)."""
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    X = np.column_stack([np.ones(y.size)]
                        + [(ia == k).astype(float) for k in range(1, ia.max() + 1)]
                        + [(ib == k).astype(float) for k in range(1, ib.max() + 1)])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    fitted = X @ beta
    return float(((fitted - y.mean()) ** 2).sum())


def srh_h(ss_effect: float, ms_total: float, df_effect: int) -> TestResult:
    """H = SS_effect / MS_total referred to chi-squared with the effect's df."""
    h = ss_effect / ms_total
    return TestResult(h, df_effect, float(_dist.chi2.sf(h, df_effect)), {"SS": ss_effect, "MS_total": ms_total})


def scheirer_ray_hare(values, factor_a, factor_b) -> list[TestResult]:
    """Two-way ANOVA on mid-ranks; returns results for A, B and A x B.

    Sums of squares are sequential (A, then B given A, then the interaction),
    so effect and error components add up to the total.
    """
    y = rankdata(np.asarray(values, float))
    a = np.asarray(factor_a)
    b = np.asarray(factor_b)
    la, lb = np.unique(a), np.unique(b)
    if la.size < 2 or lb.size < 2:
        raise ValidationError("each factor needs at least two levels")
    cells = {(x, z) for x, z in zip(a.tolist(), b.tolist())}
    if len(cells) < la.size * lb.size:
        raise ValidationError("design has an empty cell")
    n = y.size
    ss_total = float(((y - y.mean()) ** 2).sum())
    ms_total = ss_total / (n - 1)
    ss_a = _ss_model(y, [a])
    ss_ab_add = _ss_additive(y, a, b)
    ss_full = _ss_model(y, [a, b])
    dfa, dfb = la.size - 1, lb.size - 1
    dfab = dfa * dfb
    out = []
    for name, ss, df in (("A", ss_a, dfa), ("B", ss_ab_add - ss_a, dfb), ("AxB", ss_full - ss_ab_add, dfab)):
        r = srh_h(ss, ms_total, df)
        r.auxiliary.update({"source": name, "MS": ss / df})
        out.append(r)
    error = ss_total - ss_full
    for r in out:
        r.auxiliary.update({"SS_error": error, "df_error": n - la.size * lb.size, "SS_total": ss_total,
                            "df_total": n - 1})
    return out


def bh_adjust(p_values) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, returned in input order."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return p.copy()
    if ((p < 0) | (p > 1) | ~np.isfinite(p)).any():
        raise ValidationError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adjusted, 1.0)
    return out


@dataclass(frozen=True)
class PowerSpec:
    odds_ratio: float = 1.49
    alpha: float = 0.05
    power: float = 0.8
    p0: float = 0.5
    r2_other: float = 0.8

    def __post_init__(self):
        if self.odds_ratio <= 0:
            raise ValidationError("odds ratio must be positive")
        if not (0 < self.alpha < 1 and 0 < self.power < 1):
            raise ValidationError("alpha and power must lie in (0, 1)")
        if not 0 < self.p0 < 1:
            raise ValidationError("p0 must lie in (0, 1)")
        if not 0 <= self.r2_other < 1:
            raise ValidationError("r2_other must lie in [0, 1)")


def power_sample_size_exact(spec: PowerSpec) -> float:
    """Unrounded sample size for one logistic covariate, inflated by 1 / (1 - R^2_other)."""
    if spec.odds_ratio == 1:
        raise ValidationError("odds ratio of 1 means no effect; sample size is unbounded")
    za = _dist.norm.ppf(1 - spec.alpha / 2)
    zb = _dist.norm.ppf(spec.power)
    n = (za + zb) ** 2 / (spec.p0 * (1 - spec.p0) * math.log(spec.odds_ratio) ** 2)
    return n / (1 - spec.r2_other)


def power_sample_size(spec: PowerSpec) -> int:
    return int(math.ceil(power_sample_size_exact(spec) - 1e-9))
