"""Lifestyle feature engineering: aggregation, binning, collinearity pruning and screening."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ValidationError
from .events import PURCHASE, EventLog, StudyWindow
from .stats import pearson_chi2

MISSING = -1
MISSING_COLUMN = "persona_missing"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str  # "explicit" or "implicit"
    coding: str  # "ordinal" or "nominal"
    levels: tuple[str, ...]
    control_category: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if self.kind not in ("explicit", "implicit"):
            raise ValidationError(f"{self.name}: unknown kind {self.kind!r}")
        if self.coding == "ordinal":
            if len(self.levels) < 2:
                raise ValidationError(f"{self.name}: ordinal features need at least two levels")
        elif self.coding == "nominal":
            if self.control_category not in self.levels:
                raise ValidationError(f"{self.name}: nominal features need a control category among the levels")
        else:
            raise ValidationError(f"{self.name}: unknown coding {self.coding!r}")

    @property
    def category(self) -> str:
        """Product-category code used by purchase events of an explicit feature."""
        return slug(self.name)

    @property
    def control_index(self) -> int:
        return self.levels.index(self.control_category) if self.coding == "nominal" else 0

    @property
    def coding_label(self) -> str:
        if self.coding == "ordinal":
            return f"Ordinal ({self.levels[0]} → {self.levels[-1]})"
        return f"Nominal (control category: {self.control_category})"


def slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower().replace("'", "")).strip("_")


def load_taxonomy(path=None) -> list[FeatureSpec]:
    """Read a feature taxonomy CSV (name, kind, coding, levels, control_category)."""
    if path is None:
        text = resources.files("riskmine.data").joinpath("feature_taxonomy.csv").read_text(encoding="utf-8")
        rows = list(csv.DictReader(text.splitlines()))
    else:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
    specs = [FeatureSpec(r["name"], r["kind"], r["coding"], tuple(r["levels"].split("|")),
                         r.get("control_category") or None) for r in rows]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate feature names in taxonomy")
    return specs


@dataclass
class FeatureMatrix:
    """Per-shopper feature codes plus the binary disease label for one stratum.

    Codes index into each spec's levels; ``MISSING`` (-1) marks an absent
    buyer persona and is handled as a level of its own.
    """

    codes: np.ndarray
    labels: np.ndarray
    specs: list[FeatureSpec]
    stratum: tuple[str, str] | None = None
    ids: np.ndarray | None = None
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int16).reshape(len(self.labels), len(self.specs))
        self.labels = np.asarray(self.labels, dtype=np.int8)
        for j, s in enumerate(self.specs):
            col = self.codes[:, j]
            if col.size and (col.max() >= len(s.levels) or col.min() < MISSING):
                raise ValidationError(f"{s.name}: code outside level range")
            if s.kind == "explicit" and (col == MISSING).any():
                raise ValidationError(f"{s.name}: explicit features cannot be missing")

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    def column(self, name: str) -> np.ndarray:
        return self.codes[:, self.names.index(name)]

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        idx = [self.names.index(n) for n in names]
        return FeatureMatrix(self.codes[:, idx], self.labels, [self.specs[i] for i in idx],
                             self.stratum, self.ids, dict(self.notes))

    def rows(self, rows) -> "FeatureMatrix":
        return FeatureMatrix(self.codes[rows], self.labels[rows], list(self.specs), self.stratum,
                             None if self.ids is None else self.ids[rows], dict(self.notes))


# -- aggregation -----------------------------------------------------------


class ExplicitAggregate(NamedTuple):
    counts: np.ndarray  # (n_shoppers, n_categories)
    spend: np.ndarray
    categories: list[str]


def aggregate_explicit(log: EventLog, categories: Sequence[str], window: StudyWindow,
                       n_shoppers: int | None = None) -> ExplicitAggregate:
    """Per-shopper purchase counts and spend per category over the observation period.

    ``categories`` are category codes (see ``FeatureSpec.category``).
    Performance-period events are ignored; any event outside the study year
    is rejected.
    """
    shift = (window.start - log.origin).days
    day = log.day.astype(np.int64) - shift
    if len(log) and (day.min() < 0 or day.max() >= window.n_days):
        raise ValidationError("event outside the study year")
    if n_shoppers is None:
        n_shoppers = int(log.shopper.max()) + 1 if len(log) else 0
    col_of = np.full(len(log.categories), -1, dtype=np.int64)
    lookup = {c: j for j, c in enumerate(categories)}
    for i, c in enumerate(log.categories):
        col_of[i] = lookup.get(c, -1)
    col = col_of[log.category.astype(np.int64)] if len(log) else np.empty(0, np.int64)
    keep = (log.kind == PURCHASE) & (day < window.performance_offset) & (col >= 0)
    k = len(categories)
    flat = log.shopper[keep].astype(np.int64) * k + col[keep]
    counts = np.bincount(flat, minlength=n_shoppers * k).reshape(n_shoppers, k)
    spend = np.bincount(flat, weights=log.amount[keep].astype(np.float64),
                        minlength=n_shoppers * k).reshape(n_shoppers, k)
    return ExplicitAggregate(counts, spend, list(categories))


# -- discretisation --------------------------------------------------------


class Binning(NamedTuple):
    codes: np.ndarray
    edges: np.ndarray
    degenerate: bool


def discretize(values, n_bins: int = 5) -> Binning:
    """Quantile binning into at most ``n_bins`` ordinal codes (0 = lowest).

    Cut points are the empirical k/n_bins quantiles (values taken from the
    data).  A value equal to a cut point falls in the lower bin; duplicate cut
    points collapse, so heavily tied data yields fewer bins.
    """
    if n_bins < 2:
        raise ValidationError("n_bins must be at least 2")
    v = np.asarray(values, dtype=float)
    if v.size == 0 or np.all(v == v[0]):
        return Binning(np.zeros(v.size, dtype=np.int16), np.empty(0), True)
    qs = np.arange(1, n_bins) / n_bins
    edges = np.unique(np.quantile(v, qs, method="inverted_cdf"))
    edges = edges[edges < v.max()]
    codes = np.searchsorted(edges, v, side="left").astype(np.int16)
    return Binning(codes, edges, False)


# -- association and collinearity -----------------------------------------


def _crosstab(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    nb = ib.max() + 1 if ib.size else 0
    na = ia.max() + 1 if ia.size else 0
    return np.bincount(ia * nb + ib, minlength=na * nb).reshape(na, nb)


def cramers_v(a, b) -> float:
    """Cramér's V between two categorical code vectors (0 when either is constant)."""
    tab = _crosstab(np.asarray(a), np.asarray(b)).astype(float)
    if min(tab.shape) < 2:
        return 0.0
    n = tab.sum()
    expected = np.outer(tab.sum(axis=1), tab.sum(axis=0)) / n
    chi2 = ((tab - expected) ** 2 / expected).sum()
    return float(np.sqrt(min(chi2 / (n * (min(tab.shape) - 1)), 1.0)))


def association_matrix(codes: np.ndarray) -> np.ndarray:
    p = codes.shape[1]
    v = np.eye(p)
    for i in range(p):
        for j in range(i + 1, p):
            v[i, j] = v[j, i] = cramers_v(codes[:, i], codes[:, j])
    return v


def prune_collinear(matrix: FeatureMatrix, threshold: float = 0.7) -> tuple[FeatureMatrix, list[str]]:
    """Drop features until no pair has Cramér's V above ``threshold``.

    The most associated pair is resolved first; of its two members the one
    with the larger mean V against the remaining features goes, ties going to
    the later name.  Returns the pruned matrix and the dropped names in order.
    """
    if not 0 < threshold <= 1:
        raise ValidationError("threshold must lie in (0, 1]")
    names = matrix.names
    v = association_matrix(matrix.codes)
    alive = list(range(len(names)))
    dropped = []
    while len(alive) > 1:
        sub = v[np.ix_(alive, alive)].copy()
        np.fill_diagonal(sub, -1.0)
        if sub.max() <= threshold:
            break
        best = None
        for ii in range(len(alive)):
            for jj in range(ii + 1, len(alive)):
                if sub[ii, jj] > threshold:
                    pair_key = (-sub[ii, jj], min(names[alive[ii]], names[alive[jj]]),
                                max(names[alive[ii]], names[alive[jj]]))
                    if best is None or pair_key < best[0]:
                        best = (pair_key, ii, jj)
        _, ii, jj = best
        np.fill_diagonal(sub, 0.0)
        denom = max(len(alive) - 1, 1)
        mean_i, mean_j = sub[ii].sum() / denom, sub[jj].sum() / denom
        a, b = alive[ii], alive[jj]
        if np.isclose(mean_i, mean_j, rtol=0, atol=1e-12):
            victim = a if names[a] > names[b] else b
        else:
            victim = a if mean_i > mean_j else b
        alive.remove(victim)
        dropped.append(names[victim])
    kept = [names[i] for i in alive]
    out = matrix.select(kept)
    out.notes["collinear_dropped"] = list(dropped)
    return out, dropped


# -- chi-squared screening -------------------------------------------------


def _guarded_table(col: np.ndarray, labels: np.ndarray, spec: FeatureSpec) -> tuple[np.ndarray, bool]:
    """Level x label table after merging levels so that at most 20% of cells expect < 5."""
    levels = sorted(set(col.tolist()))
    rows = {lv: np.array([np.sum((col == lv) & (labels == 0)), np.sum((col == lv) & (labels == 1))], float)
            for lv in levels}
    rows = {lv: r for lv, r in rows.items() if r.sum() > 0}
    order = [lv for lv in sorted(rows) if lv != MISSING]
    merged = False
    n1, n = float(labels.sum()), float(labels.size)

    def violated(tab_rows):
        if len(tab_rows) < 2:
            return False
        tot = np.array([r.sum() for r in tab_rows])
        exp = np.outer(tot, [n - n1, n1]) / n
        return (exp < 5).mean() > 0.2

    def current():
        out = [rows[lv] for lv in order]
        if MISSING in rows:
            out.append(rows[MISSING])
        return out

    while violated(current()):
        merged = True
        if MISSING in rows:
            # fold the missing-persona level into the most populous level
            host = max(order, key=lambda lv: (rows[lv].sum(), -lv)) if order else None
            if host is None:
                break
            rows[host] = rows[host] + rows.pop(MISSING)
            continue
        if len(order) < 2:
            break
        if spec.coding == "ordinal":
            smallest = min(range(len(order)), key=lambda i: (rows[order[i]].sum(), i))
            if smallest == 0:
                nb = 1
            elif smallest == len(order) - 1:
                nb = smallest - 1
            else:
                left, right = rows[order[smallest - 1]].sum(), rows[order[smallest + 1]].sum()
                nb = smallest - 1 if left <= right else smallest + 1
            keep, gone = sorted((smallest, nb))
            rows[order[keep]] = rows[order[keep]] + rows.pop(order[gone])
            del order[gone]
        else:
            ctrl = spec.control_index
            if ctrl not in rows:
                ctrl = max(order, key=lambda lv: rows[lv].sum())
            others = [lv for lv in order if lv != ctrl]
            small = min(others, key=lambda lv: (rows[lv].sum(), lv))
            rows[ctrl] = rows[ctrl] + rows.pop(small)
            order.remove(small)
    return np.vstack(current()) if rows else np.zeros((0, 2)), merged


def chi2_screen_pvalue(col: np.ndarray, labels: np.ndarray, spec: FeatureSpec) -> tuple[float, bool]:
    tab, merged = _guarded_table(col, labels, spec)
    if tab.shape[0] < 2 or (tab.sum(axis=0) == 0).any():
        return 1.0, True
    return pearson_chi2(tab).p_value, merged


@dataclass
class ScreenResult:
    stratum: tuple[str, str] | None
    size: int
    p_values: dict  # feature -> chi-squared p
    selected: list[FeatureSpec]
    fallback: list[str]  # features whose table needed level merging
    alpha: float

    @property
    def selected_names(self) -> list[str]:
        return [s.name for s in self.selected]


def screen_features(matrix: FeatureMatrix, alpha: float = 0.1) -> ScreenResult:
    """Keep features whose chi-squared test of independence against the label has p < alpha."""
    labels = matrix.labels
    if np.unique(labels).size < 2:
        raise ValidationError("screening needs both label classes")
    pvals, fallback, selected = {}, [], []
    for j, spec in enumerate(matrix.specs):
        p, merged = chi2_screen_pvalue(matrix.codes[:, j], labels, spec)
        pvals[spec.name] = p
        if merged:
            fallback.append(spec.name)
        if p < alpha:
            selected.append(spec)
    return ScreenResult(matrix.stratum, matrix.n, pvals, selected, fallback, alpha)


STAR_LEVELS = ((0.001, "****"), (0.01, "***"), (0.05, "**"), (0.1, "*"))


def stars(p: float, levels=STAR_LEVELS) -> str:
    for cut, mark in levels:
        if p < cut:
            return mark
    return ""


def selection_table(results: Sequence[ScreenResult]) -> list[list[str]]:
    """Feature x stratum star table with a closing 'Total Selected' row."""
    header = ["Lifestyle Feature"] + [f"{s.stratum[0].capitalize()} {s.stratum[1]} n={s.size}" for s in results]
    names = sorted({n for r in results for n in r.selected_names}, key=str.lower)
    body = []
    for name in names:
        body.append([name] + [stars(r.p_values[name]) if name in r.selected_names else "" for r in results])
    total = ["Total Selected"] + [str(len(r.selected)) for r in results]
    return [header] + body + [total]


# -- design matrices -------------------------------------------------------


@dataclass
class Design:
    X: np.ndarray
    columns: list[str]
    meta: list[tuple[str, str | None]]  # (feature, level) per column; level None for ordinal
    dropped: list[str]


def design_matrix(matrix: FeatureMatrix, drop_pure: bool = True) -> Design:
    """Expand codes into regression columns.

    Ordinal features enter as their integer code; nominal features as
    indicators of each non-control level.  Missing personas are coded as the
    reference value and flagged by one shared indicator column.  Indicator
    columns that are empty, or (``drop_pure``) contain a single label class,
    are dropped because they admit no finite estimate.
    """
    cols, names, meta, dropped = [], [], [], []
    labels = matrix.labels
    any_missing = np.zeros(matrix.n, dtype=bool)

    def add_indicator(x, name, m):
        k = int(x.sum())
        pure = drop_pure and (labels[x.astype(bool)].min(initial=1) == labels[x.astype(bool)].max(initial=0))
        if k == 0 or k == matrix.n or pure:
            dropped.append(name)
            return
        cols.append(x.astype(float))
        names.append(name)
        meta.append(m)

    for j, spec in enumerate(matrix.specs):
        c = matrix.codes[:, j].astype(np.int64)
        miss = c == MISSING
        any_missing |= miss
        if spec.coding == "ordinal":
            cols.append(np.where(miss, 0, c).astype(float))
            names.append(spec.name)
            meta.append((spec.name, None))
        else:
            for lv, level in enumerate(spec.levels):
                if lv == spec.control_index:
                    continue
                add_indicator((c == lv).astype(float), f"{spec.name}={level}", (spec.name, level))
    if any_missing.any():
        add_indicator(any_missing.astype(float), MISSING_COLUMN, (MISSING_COLUMN, None))
    X = np.column_stack(cols) if cols else np.zeros((matrix.n, 0))
    return Design(X, names, meta, dropped)


# -- assembling matrices from a cohort ------------------------------------


def build_feature_matrix(spend: np.ndarray, personas: dict, rows: np.ndarray, labels: np.ndarray,
                         specs: Sequence[FeatureSpec], n_bins: int = 5, stratum=None, ids=None) -> FeatureMatrix:
    """Feature matrix for the cohort rows of one stratum.

    ``spend`` holds observation-period spend per explicit feature (columns in
    the order of the explicit specs); explicit features are binned on the
    stratum's pooled case and control distribution.  Degenerate (constant)
    features are left out and listed in ``notes['degenerate']``.
    """
    explicit = [s for s in specs if s.kind == "explicit"]
    kept, cols, degenerate = [], [], []
    for s in specs:
        if s.kind == "explicit":
            b = discretize(spend[rows, explicit.index(s)], n_bins)
            if b.degenerate:
                degenerate.append(s.name)
                continue
            n_codes = int(b.codes.max()) + 1
            levels = s.levels if len(s.levels) == n_codes else _resample_levels(s.levels, n_codes)
            kept.append(replace(s, levels=levels))
            cols.append(b.codes)
        else:
            c = np.asarray(personas[s.name])[rows]
            present = c[c != MISSING]
            if present.size == 0 or np.all(present == present[0]):
                degenerate.append(s.name)
                continue
            kept.append(s)
            cols.append(c)
    codes = np.column_stack(cols) if cols else np.zeros((len(rows), 0), dtype=np.int16)
    fm = FeatureMatrix(codes, labels, kept, stratum, ids)
    fm.notes["degenerate"] = degenerate
    return fm


def _resample_levels(levels: Sequence[str], k: int) -> tuple[str, ...]:
    if k <= 1:
        return (levels[0], levels[-1])
    idx = np.round(np.linspace(0, len(levels) - 1, k)).astype(int)
    out = [levels[i] for i in idx]
    if len(set(out)) < k:
        out = [f"bin {i + 1}" for i in range(k)]
        out[0], out[-1] = levels[0], levels[-1]
    return tuple(out)
