"""Cost-sensitive linear SVM, stratified cross-validation and evaluation reports.

The SVM solves, for labels y in {-1, +1} and per-example costs c_i
(``positive_class_cost`` on cases, 1 on controls),

    min_w  (lambda / 2) ||w||^2 + sum_i c_i * max(0, 1 - y_i w.x_i)

with a constant 1 appended to x so that the bias is part of w.  Training is
dual coordinate descent in a fixed sweep order, compiled with numba.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy.stats import rankdata

from .errors import ValidationError
from .features import FeatureMatrix, design_matrix
from .stats import wilcoxon_signed_rank


@dataclass(frozen=True)
class SvmConfig:
    positive_class_cost: float = 1.0
    regularization: float = 100.0
    tolerance: float = 1e-2
    max_passes: int = 5000

    def __post_init__(self):
        for name in ("positive_class_cost", "regularization", "tolerance"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be positive and finite")
        if int(self.max_passes) < 1:
            raise ValidationError("max_passes must be a positive integer")

    def with_cost(self, cost: float) -> "SvmConfig":
        return SvmConfig(float(cost), self.regularization, self.tolerance, self.max_passes)


@njit(cache=True, nogil=True)
def _dual_cd(X, y, upper, tol, max_passes, history):
    n, d = X.shape
    alpha = np.zeros(n)
    w = np.zeros(d)
    q = np.zeros(n)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += X[i, j] * X[i, j]
        q[i] = s
    for ep in range(max_passes):
        max_pg = -np.inf
        min_pg = np.inf
        for i in range(n):
            if q[i] == 0.0:
                continue
            g = 0.0
            for j in range(d):
                g += w[j] * X[i, j]
            g = y[i] * g - 1.0
            a = alpha[i]
            if a == 0.0:
                pg = min(g, 0.0)
            elif a == upper[i]:
                pg = max(g, 0.0)
            else:
                pg = g
            if pg > max_pg:
                max_pg = pg
            if pg < min_pg:
                min_pg = pg
            if pg != 0.0:
                new = min(max(a - g / q[i], 0.0), upper[i])
                step = (new - a) * y[i]
                for j in range(d):
                    w[j] += step * X[i, j]
                alpha[i] = new
        ww = 0.0
        for j in range(d):
            ww += w[j] * w[j]
        history[ep] = 0.5 * ww - alpha.sum()
        if max_pg - min_pg < tol:
            return w, alpha, ep + 1, True
    return w, alpha, max_passes, False


@dataclass
class SvmModel:
    weights: np.ndarray  # on the raw (unstandardized) design columns
    bias: float
    objective: float  # primal objective at the returned weights
    objective_history: np.ndarray  # dual objective (minimization form, times lambda) per epoch
    converged: bool
    epochs: int
    columns: list = field(default_factory=list)

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, float) @ self.weights + self.bias

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0).astype(np.int8)


def primal_objective(w_aug: np.ndarray, Xa: np.ndarray, y: np.ndarray, cost: np.ndarray, lam: float) -> float:
    margins = np.maximum(0.0, 1.0 - y * (Xa @ w_aug))
    return float(0.5 * lam * w_aug @ w_aug + cost @ margins)


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def train_cost_svm(X, labels, config: SvmConfig = SvmConfig(), standardize: bool = True,
                   columns: Sequence[str] | None = None) -> SvmModel:
    """Fit the class-weighted linear SVM; positives carry ``positive_class_cost``.

    Columns are standardized with the training data's mean and SD unless
    ``standardize`` is off; the returned weights act on the raw columns.
    Failure to reach the tolerance within ``max_passes`` epochs is reported
    through ``converged`` and a ``RuntimeWarning``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(labels)
    if labels.shape[0] != X.shape[0]:
        raise ValidationError("labels and rows disagree in length")
    if np.unique(labels).size < 2:
        raise ValidationError("SVM training needs both classes")
    if not np.isfinite(X).all():
        raise ValidationError("design contains non-finite values")
    if standardize:
        mean, scale = _standardize(X)
    else:
        mean, scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Xa = np.column_stack([(X - mean) / scale, np.ones(X.shape[0])])
    y = np.where(labels == 1, 1.0, -1.0)
    cost = np.where(labels == 1, config.positive_class_cost, 1.0)
    lam = config.regularization
    history = np.full(int(config.max_passes), np.nan)
    w, _, epochs, ok = _dual_cd(np.ascontiguousarray(Xa), y, cost / lam, float(config.tolerance),
                                int(config.max_passes), history)
    if not ok:
        warnings.warn(f"SVM did not reach tolerance {config.tolerance} in {config.max_passes} passes",
                      RuntimeWarning)
    weights = w[:-1] / scale
    bias = float(w[-1] - weights @ mean)
    return SvmModel(weights, bias, primal_objective(w, Xa, y, cost, lam), lam * history[:epochs], bool(ok),
                    int(epochs), list(columns) if columns is not None else [])


# -- folds -------------------------------------------------------------------


def stratified_kfold(labels, k: int = 10, seed: int = 0) -> np.ndarray:
    """Fold index per row: each class is shuffled with the seed and dealt round-robin.

    Controls continue the deal where the cases stopped, so fold sizes differ
    by at most one overall as well as within each class.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValidationError("k must be at least 2")
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be 0/1")
    folds = np.empty(labels.size, dtype=np.int64)
    rng = np.random.default_rng(seed)
    offset = 0
    for cls in (1, 0):
        rows = np.flatnonzero(labels == cls)
        if rows.size < k:
            raise ValidationError(f"class {cls} has {rows.size} members, fewer than k={k}")
        perm = rows[rng.permutation(rows.size)]
        folds[perm] = (offset + np.arange(rows.size)) % k
        offset = (offset + rows.size) % k
    return folds


# -- evaluation --------------------------------------------------------------


def auc_score(scores, labels) -> float:
    """Area under the ROC curve as the mid-rank Mann-Whitney U / (n1 * n0)."""
    s = np.asarray(scores, float)
    y = np.asarray(labels)
    n1 = int((y == 1).sum())
    n0 = int((y == 0).sum())
    if n1 == 0 or n0 == 0:
        raise ValidationError("AUC is undefined with a single class")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def roc_points(scores, labels) -> np.ndarray:
    """ROC vertices (fpr, tpr) over all distinct thresholds, from (0, 0) to (1, 1)."""
    s = np.asarray(scores, float)
    y = np.asarray(labels)
    n1 = int((y == 1).sum())
    n0 = int((y == 0).sum())
    if n1 == 0 or n0 == 0:
        raise ValidationError("ROC is undefined with a single class")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    fpr = np.r_[0.0, fp[last] / n0]
    tpr = np.r_[0.0, tp[last] / n1]
    return np.column_stack([fpr, tpr])


METRICS = ("sensitivity", "specificity", "ppv", "npv", "accuracy", "f1", "auc")


@dataclass
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _ratio(a, b):
    return a / b if b > 0 else 0.0


def evaluate(scores, labels, threshold: float = 0.0) -> tuple[dict, Confusion]:
    """Metrics at ``threshold`` (score >= threshold predicts a case) plus AUC.

    Ratios with an empty denominator are reported as 0.
    """
    s = np.asarray(scores, float)
    if not np.isfinite(s).all():
        raise ValidationError("scores must be finite")
    y = np.asarray(labels)
    pred = s >= threshold
    cm = Confusion(int((pred & (y == 1)).sum()), int((pred & (y == 0)).sum()),
                   int((~pred & (y == 0)).sum()), int((~pred & (y == 1)).sum()))
    sens = _ratio(cm.tp, cm.tp + cm.fn)
    spec = _ratio(cm.tn, cm.tn + cm.fp)
    ppv = _ratio(cm.tp, cm.tp + cm.fp)
    npv = _ratio(cm.tn, cm.tn + cm.fn)
    f1 = _ratio(2 * ppv * sens, ppv + sens)
    return ({"sensitivity": sens, "specificity": spec, "ppv": ppv, "npv": npv,
             "accuracy": (cm.tp + cm.tn) / cm.n, "f1": f1, "auc": auc_score(s, y)}, cm)


@dataclass
class EvalReport:
    name: str
    mean: dict
    sd: dict
    fold_metrics: list
    roc: np.ndarray  # pooled out-of-fold ROC
    oof_scores: np.ndarray
    folds: np.ndarray
    n: int = 0
    n_cases: int = 0

    @property
    def auc_folds(self) -> np.ndarray:
        return np.array([m["auc"] for m in self.fold_metrics])


def _design(matrix: FeatureMatrix) -> np.ndarray:
    return design_matrix(matrix, drop_pure=False).X


def cross_validate(X, labels, config: SvmConfig = SvmConfig(), k: int = 10, seed: int = 0, name: str = "",
                   folds: np.ndarray | None = None, threads: int = 1) -> EvalReport:
    """Stratified k-fold CV of the SVM; metrics per fold, summarised as mean and SD (ddof=1)."""
    X = np.asarray(X, float)
    labels = np.asarray(labels)
    folds = stratified_kfold(labels, k, seed) if folds is None else np.asarray(folds)
    k = int(folds.max()) + 1

    def run(f):
        test = folds == f
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            model = train_cost_svm(X[~test], labels[~test], config)
        return f, model.decision_function(X[test])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(run, range(k)))
    else:
        outs = [run(f) for f in range(k)]
    oof = np.empty(labels.size)
    per_fold = []
    for f, s in outs:
        test = folds == f
        oof[test] = s
        per_fold.append(evaluate(s, labels[test])[0])
    mean = {m: float(np.mean([p[m] for p in per_fold])) for m in METRICS}
    sd = {m: float(np.std([p[m] for p in per_fold], ddof=1)) for m in METRICS}
    return EvalReport(name, mean, sd, per_fold, roc_points(oof, labels), oof, folds, labels.size,
                      int((labels == 1).sum()))


def cross_validate_matrix(matrix: FeatureMatrix, config: SvmConfig = SvmConfig(), k: int = 10, seed: int = 0,
                          threads: int = 1) -> EvalReport:
    name = f"{matrix.stratum[0].capitalize()} {matrix.stratum[1]}" if matrix.stratum else ""
    return cross_validate(_design(matrix), matrix.labels, config, k, seed, name, threads=threads)


def eval_report_rows(reports: Sequence[EvalReport]) -> list[list[str]]:
    """Table of cross-validated mean ± SD per metric, one row per report."""
    header = ["Subgroup", "Size", "Sensitivity", "Specificity", "PPV", "NPV", "Accuracy", "F1", "AUC"]
    rows = [header]
    for r in reports:
        rows.append([r.name, str(r.n)] + [f"{r.mean[m]:.3f}±{r.sd[m]:.3f}" for m in METRICS])
    return rows


# -- cost sweep --------------------------------------------------------------


def default_cost_grid(ratio: float) -> list[float]:
    grid = []
    for c in (1.0, ratio / 4, ratio / 2, ratio, 2 * ratio):
        c = float(c)
        if c > 0 and not any(abs(c - g) < 1e-12 for g in grid):
            grid.append(c)
    return sorted(grid)


def _wilcoxon_p(diff) -> float:
    diff = np.asarray(diff, float)
    if np.count_nonzero(diff) < 5:
        return float("nan")
    return wilcoxon_signed_rank(diff).p_value


@dataclass
class CostSweep:
    name: str
    grid: list
    aucs: np.ndarray  # (len(grid), k) fold AUCs
    best_index: int
    p_vs_best: list  # Wilcoxon p per cost (NaN for the optimum or too few differences)

    @property
    def best_cost(self) -> float:
        return self.grid[self.best_index]

    @property
    def mean_auc(self) -> np.ndarray:
        return self.aucs.mean(axis=1)


def cost_sweep(X, labels, cost_grid: Sequence[float], config: SvmConfig = SvmConfig(), k: int = 10,
               seed: int = 0, name: str = "", threads: int = 1) -> CostSweep:
    """Fold AUCs for every cost on shared folds; the best mean wins; others tested against it."""
    grid = [float(c) for c in cost_grid]
    if not grid:
        raise ValidationError("cost grid is empty")
    labels = np.asarray(labels)
    folds = stratified_kfold(labels, k, seed)
    aucs = np.array([cross_validate(X, labels, config.with_cost(c), k, seed, folds=folds,
                                    threads=threads).auc_folds for c in grid])
    means = aucs.mean(axis=1)
    best = int(np.flatnonzero(means == means.max())[0])
    p = [float("nan") if i == best else _wilcoxon_p(aucs[best] - aucs[i]) for i in range(len(grid))]
    return CostSweep(name, grid, aucs, best, p)


@dataclass
class PooledSweep:
    grid: list
    subgroup_means: np.ndarray  # (len(grid), n_subgroups)
    best_index: int
    p_vs_best: list


def pooled_cost_sweep(sweeps: Sequence[CostSweep]) -> PooledSweep:
    """Combine per-subgroup sweeps: mean AUC per subgroup, Wilcoxon across subgroups."""
    grid = sweeps[0].grid
    for s in sweeps:
        if s.grid != grid:
            raise ValidationError("sweeps use different cost grids")
    means = np.column_stack([s.mean_auc for s in sweeps])
    avg = means.mean(axis=1)
    best = int(np.flatnonzero(avg == avg.max())[0])
    p = [float("nan") if i == best else _wilcoxon_p(means[best] - means[i]) for i in range(len(grid))]
    return PooledSweep(grid, means, best, p)


def cost_sweep_rows(sweeps: Sequence[CostSweep], pooled: PooledSweep | None = None) -> list[list[str]]:
    rows = [["Subgroup", "Cost", "Mean AUC", "SD AUC", "Best", "Wilcoxon p vs best"]]
    for s in sweeps:
        for i, c in enumerate(s.grid):
            rows.append([s.name, f"{c:g}", f"{s.aucs[i].mean():.4f}", f"{s.aucs[i].std(ddof=1):.4f}",
                         "yes" if i == s.best_index else "", _fmt_p(s.p_vs_best[i])])
    if pooled is not None:
        for i, c in enumerate(pooled.grid):
            col = pooled.subgroup_means[i]
            rows.append(["All subgroups", f"{c:g}", f"{col.mean():.4f}",
                         f"{col.std(ddof=1):.4f}" if col.size > 1 else "0.0000",
                         "yes" if i == pooled.best_index else "", _fmt_p(pooled.p_vs_best[i])])
    return rows


def _fmt_p(p: float) -> str:
    return "" if p is None or not np.isfinite(p) else f"{p:.4f}"


# -- risk factors versus placebos ------------------------------------------------


@dataclass
class PlaceboRow:
    name: str
    factors: list
    placebos: list
    auc_factors: float
    auc_placebos: float
    auc_combined: float


@dataclass
class PlaceboReport:
    rows: list
    p_factor_vs_placebo: float
    p_combined_vs_factor: float
    z_factor_vs_placebo: float = float("nan")


def _cv_auc(matrix: FeatureMatrix, names, config, k, seed, threads) -> float:
    if not names:
        return float("nan")
    return cross_validate_matrix(matrix.select(list(names)), config, k, seed, threads).mean["auc"]


def factor_placebo_experiment(subsamples: Sequence[FeatureMatrix], risk_factors: Sequence[Sequence[str]],
                              seed: int = 0, config: SvmConfig = SvmConfig(), k: int = 10,
                              threads: int = 1) -> PlaceboReport:
    """Cross-validated AUC with risk factors, with placebos, and with both, per subgroup.

    ``subsamples`` are the screened feature matrices and ``risk_factors``
    the significant feature names of each; the remaining screened features
    are the placebos.  Paired Wilcoxon tests run across subgroups when at
    least five subgroups have both sets.
    """
    if len(subsamples) != len(risk_factors):
        raise ValidationError("one risk-factor list per subsample is required")
    rows = []
    for fm, factors in zip(subsamples, risk_factors):
        factors = [f for f in fm.names if f in set(factors)]
        placebos = [f for f in fm.names if f not in set(factors)]
        name = f"{fm.stratum[0].capitalize()} {fm.stratum[1]}" if fm.stratum else ""
        rows.append(PlaceboRow(name, factors, placebos,
                               _cv_auc(fm, factors, config, k, seed, threads),
                               _cv_auc(fm, placebos, config, k, seed, threads),
                               _cv_auc(fm, factors + placebos, config, k, seed, threads)))
    both = [r for r in rows if r.factors and r.placebos]
    p1 = p2 = z1 = float("nan")
    if len(both) >= 5:
        d1 = np.array([r.auc_factors - r.auc_placebos for r in both])
        if np.count_nonzero(d1) >= 5:
            res = wilcoxon_signed_rank(d1)
            p1, z1 = res.p_value, res.auxiliary["z"]
        p2 = _wilcoxon_p([r.auc_combined - r.auc_factors for r in both])
    return PlaceboReport(rows, p1, p2, z1)


def placebo_rows(report: PlaceboReport) -> list[list[str]]:
    out = [["Subgroup", "Risk factors", "Placebos", "AUC risk factors", "AUC placebos", "AUC combined"]]
    for r in report.rows:
        out.append([r.name, str(len(r.factors)), str(len(r.placebos))]
                   + ["" if not np.isfinite(v) else f"{v:.4f}" for v in (r.auc_factors, r.auc_placebos,
                                                                         r.auc_combined)])
    out.append(["Wilcoxon p (risk factors vs placebos)", _fmt_p(report.p_factor_vs_placebo), "", "", "", ""])
    out.append(["Wilcoxon p (combined vs risk factors)", _fmt_p(report.p_combined_vs_factor), "", "", "", ""])
    return out


# -- ROC and published baselines ---------------------------------------------------


@dataclass(frozen=True)
class Baseline:
    disease: str
    study: str
    sensitivity: float
    specificity: float
    auc: float


BASELINES = (
    Baseline("depression", "Diagnostic Code", 0.77, 0.76, 0.77),
    Baseline("depression", "Problem List", 0.49, 0.78, 0.63),
    Baseline("depression", "Medication List", 0.56, 0.88, 0.72),
    Baseline("depression", "Combination of All EMR Fields", 0.25, 0.96, 0.61),
    Baseline("type2_diabetes", "Cambridge Risk Model", 0.422, 0.795, 0.676),
    Baseline("type2_diabetes", "Danish Risk Score", 0.551, 0.721, 0.690),
    Baseline("type2_diabetes", "Indian Risk Score", 0.961, 0.187, 0.675),
    Baseline("type2_diabetes", "Rotterdam Study", 0.188, 0.904, 0.631),
    Baseline("type2_diabetes", "Finnish Risk Score", 0.395, 0.804, 0.665),
    Baseline("type2_diabetes", "Thai Risk Score", 0.868, 0.326, 0.662),
    Baseline("type2_diabetes", "Chinese Risk Score", 0.842, 0.398, 0.673),
)


def baselines_for(disease: str) -> list[Baseline]:
    return [b for b in BASELINES if b.disease == disease]


def roc_with_baselines(scores, labels, disease: str) -> tuple[np.ndarray, list[tuple[str, float, float, float]]]:
    """ROC vertices plus the disease's reference instruments as (study, 1 - specificity, sensitivity, auc)."""
    roc = roc_points(scores, labels)
    overlay = [(b.study, 1.0 - b.specificity, b.sensitivity, b.auc) for b in baselines_for(disease)]
    return roc, overlay


def roc_svg(curves: dict, overlay, size: int = 400) -> str:
    """Minimal SVG line plot: one polyline per curve and one marker per overlay point."""
    pad = 40
    span = size - 2 * pad

    def xy(fpr, tpr):
        return pad + fpr * span, size - pad - tpr * span

    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="#000"/>',
             f'<line x1="{pad}" y1="{size - pad}" x2="{size - pad}" y2="{pad}" stroke="#999" '
             f'stroke-dasharray="4,4"/>',
             f'<text x="{size / 2:.0f}" y="{size - 8}" text-anchor="middle" font-size="12">'
             f'1 - specificity</text>',
             f'<text x="12" y="{size / 2:.0f}" font-size="12" transform="rotate(-90 12 {size / 2:.0f})" '
             f'text-anchor="middle">sensitivity</text>']
    for i, (label, pts) in enumerate(curves.items()):
        path = " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(f, t) for f, t in pts))
        parts.append(f'<polyline fill="none" stroke="{colors[i % len(colors)]}" points="{path}">'
                     f'<title>{label}</title></polyline>')
    for study, fpr, tpr, _ in overlay:
        x, y = xy(fpr, tpr)
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="4" fill="#ff7f0e"><title>{study}</title></circle>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
