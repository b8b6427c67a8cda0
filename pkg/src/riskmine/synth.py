"""Synthetic shopper cohorts with planted feature -> disease effects.

The generator reproduces the activity volumes and demographic mix of a
10,000-user reference sample and plants known log-odds effects on lifestyle
features, so that the mining pipeline can be scored against ground truth.

Everything is drawn from independent child streams of one
``numpy.random.SeedSequence``, so a fixed seed gives a byte-identical cohort.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .cohort import DrugCatalog
from .errors import ConfigError
from .events import AGE_BANDS, DISEASES, MIN_AGE, PURCHASE, QUERY, SEXES, Cohort, EventLog, StudyWindow
from .features import MISSING, FeatureSpec, discretize, load_taxonomy

STRATA = tuple((s, b) for s in SEXES for b in AGE_BANDS)

#: Reference sample: users per (sex, age band) out of 10,000.
DEFAULT_MIX = {
    ("female", "15-24"): 1414, ("female", "25-34"): 2433, ("female", "35-44"): 1339,
    ("female", "45-54"): 450, ("female", "55-64"): 27, ("female", "65-74"): 5,
    ("male", "15-24"): 1141, ("male", "25-34"): 1719, ("male", "35-44"): 1059,
    ("male", "45-54"): 378, ("male", "55-64"): 35, ("male", "65-74"): 0,
}

# Monthly (mean, SD) per sex over 15-24 ... 55-64; the oldest band reuses 55-64.
_QUERIES = {
    "female": [(69.18, 65.12), (48.16, 49.00), (42.35, 51.43), (36.49, 42.66), (22.04, 19.56)],
    "male": [(40.31, 42.20), (38.68, 41.80), (39.13, 45.29), (38.95, 40.91), (34.51, 46.23)],
}
_PURCHASES = {
    "female": [(15.49, 10.77), (16.27, 13.85), (13.68, 13.76), (10.91, 10.70), (10.38, 11.24)],
    "male": [(9.35, 8.06), (11.21, 11.46), (11.08, 10.76), (10.83, 10.99), (14.27, 11.34)],
}


def _by_stratum(table):
    return {(s, b): table[s][min(i, 4)] for s in SEXES for i, b in enumerate(AGE_BANDS)}


DEFAULT_QUERY_MODEL = _by_stratum(_QUERIES)
DEFAULT_PURCHASE_MODEL = _by_stratum(_PURCHASES)
DEFAULT_PREVALENCE = {"depression": 0.05, "type2_diabetes": 0.08}

INTERCEPT = "(intercept)"
PHARMACY = "pharmacy"
FILLER_CATEGORIES = tuple(f"general_{k:02d}" for k in range(20))
NOMINAL_CONTROL_SHARE = 0.55
ORDINAL_PERSONA_PROBS = (0.15, 0.2, 0.3, 0.2, 0.15)
MINOR_SHARE_15_24 = 0.02


def _key(k) -> str:
    return f"{k[0]}:{k[1]}"


def _unkey(s: str) -> tuple[str, str]:
    a, b = s.split(":")
    return a, b


@dataclass(frozen=True)
class PlantedEffect:
    """A log-odds coefficient planted on one feature.

    For ordinal features the coefficient applies per ordinal step; for
    nominal features it applies to membership of ``level`` (versus the
    control category).  ``applies_to`` lists (sex, age_band, disease)
    triples; ``None`` means every stratum of every disease.
    """

    feature_name: str
    coefficient: float
    applies_to: frozenset | None = None
    level: str | None = None

    def __post_init__(self):
        if not math.isfinite(self.coefficient):
            raise ConfigError(f"{self.feature_name}: coefficient must be finite")
        if self.applies_to is not None:
            object.__setattr__(self, "applies_to", frozenset(tuple(t) for t in self.applies_to))

    def applies(self, sex: str, band: str, disease: str) -> bool:
        return self.applies_to is None or (sex, band, disease) in self.applies_to

    def to_dict(self) -> dict:
        return {"feature_name": self.feature_name, "coefficient": self.coefficient, "level": self.level,
                "applies_to": None if self.applies_to is None else sorted(list(t) for t in self.applies_to)}

    @classmethod
    def from_dict(cls, d: dict) -> "PlantedEffect":
        at = d.get("applies_to")
        return cls(d["feature_name"], float(d["coefficient"]),
                   None if at is None else frozenset(tuple(t) for t in at), d.get("level"))


@dataclass
class GeneratorConfig:
    n_shoppers: int = 20000
    demographic_mix: dict = field(default_factory=lambda: {k: v / 10000 for k, v in DEFAULT_MIX.items()})
    monthly_query_model: dict = field(default_factory=lambda: dict(DEFAULT_QUERY_MODEL))
    monthly_purchase_model: dict = field(default_factory=lambda: dict(DEFAULT_PURCHASE_MODEL))
    prevalence: dict = field(default_factory=lambda: dict(DEFAULT_PREVALENCE))
    seed: int = 0
    exclusion_rate: float = 0.01
    no_purchase_rate: float = 0.15
    emit_queries: bool = True
    window: StudyWindow = field(default_factory=StudyWindow)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if int(self.n_shoppers) < 1:
            raise ConfigError("n_shoppers must be positive")
        mix = self.demographic_mix
        if set(mix) - set(STRATA):
            raise ConfigError(f"unknown strata in demographic_mix: {sorted(set(mix) - set(STRATA))}")
        if any(v < 0 for v in mix.values()):
            raise ConfigError("demographic_mix has negative entries")
        if abs(sum(mix.values()) - 1.0) > 1e-9:
            raise ConfigError(f"demographic_mix sums to {sum(mix.values())}, not 1")
        for name, model in (("monthly_query_model", self.monthly_query_model),
                            ("monthly_purchase_model", self.monthly_purchase_model)):
            for k in STRATA:
                if k not in model:
                    raise ConfigError(f"{name} lacks stratum {_key(k)}")
                m, s = model[k]
                if m <= 0 or s < 0:
                    raise ConfigError(f"{name}[{_key(k)}] needs mean > 0 and sd >= 0")
        for d, p in self.prevalence.items():
            if d not in DISEASES:
                raise ConfigError(f"unknown disease {d!r}")
            if not 0 < p < 0.5:
                raise ConfigError(f"prevalence for {d} must lie in (0, 0.5)")
        if not 0 <= self.exclusion_rate < 1:
            raise ConfigError("exclusion_rate must lie in [0, 1)")
        if not 0 <= self.no_purchase_rate < 1:
            raise ConfigError("no_purchase_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "n_shoppers": int(self.n_shoppers),
            "demographic_mix": {_key(k): v for k, v in self.demographic_mix.items()},
            "monthly_query_model": {_key(k): list(v) for k, v in self.monthly_query_model.items()},
            "monthly_purchase_model": {_key(k): list(v) for k, v in self.monthly_purchase_model.items()},
            "prevalence": dict(self.prevalence),
            "seed": int(self.seed),
            "exclusion_rate": self.exclusion_rate,
            "no_purchase_rate": self.no_purchase_rate,
            "emit_queries": self.emit_queries,
            "window": self.window.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        base = cls()
        kw = {}
        for name in ("n_shoppers", "seed", "exclusion_rate", "no_purchase_rate", "emit_queries", "prevalence"):
            if name in d:
                kw[name] = d[name]
        for name in ("demographic_mix", "monthly_query_model", "monthly_purchase_model"):
            if name in d:
                kw[name] = {_unkey(k): (tuple(v) if isinstance(v, list) else v) for k, v in d[name].items()}
            else:
                kw[name] = getattr(base, name)
        if "window" in d:
            kw["window"] = StudyWindow.from_dict(d["window"])
        return cls(**kw)


# -- ground truth --------------------------------------------------------------


@dataclass(frozen=True)
class TruthRow:
    disease: str
    sex: str
    age_band: str
    feature: str
    level: str | None
    coefficient: float


@dataclass
class TruthTable:
    rows: list[TruthRow]
    labels: dict  # disease -> int8 array (1 case, 0 control, -1 excluded)

    def effects(self, disease: str, sex: str | None = None, band: str | None = None) -> list[TruthRow]:
        return [r for r in self.rows if r.disease == disease and r.feature != INTERCEPT
                and (sex is None or r.sex == sex) and (band is None or r.age_band == band)]

    def intercept(self, disease: str, sex: str, band: str) -> float:
        for r in self.rows:
            if (r.disease, r.sex, r.age_band, r.feature) == (disease, sex, band, INTERCEPT):
                return r.coefficient
        raise KeyError((disease, sex, band))

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["disease", "sex", "age_band", "feature", "level", "coefficient"])
            for r in self.rows:
                w.writerow([r.disease, r.sex, r.age_band, r.feature, r.level or "", repr(float(r.coefficient))])


# -- helpers ---------------------------------------------------------------------


def lognormal_params(mean: float, sd: float) -> tuple[float, float]:
    """(mu, sigma) of a lognormal with the given mean and SD (moment inversion)."""
    if mean <= 0:
        raise ConfigError("lognormal mean must be positive")
    sigma2 = math.log1p((sd / mean) ** 2)
    return math.log(mean) - sigma2 / 2, math.sqrt(sigma2)


def _monthly_rates(rng, mean: float, sd: float, n: int) -> np.ndarray:
    """Per-shopper monthly rates whose Poisson-mixed monthly average has the target mean and SD.

    The yearly count is Poisson(12 * rate), which adds mean/12 to the variance
    of the monthly average; that share is removed from the rate variance.
    """
    var = max(sd * sd - mean / 12.0, 1e-6 * mean * mean)
    mu, sigma = lognormal_params(mean, math.sqrt(var))
    return rng.lognormal(mu, sigma, n)


def calibrate_intercept(eta: np.ndarray, u: np.ndarray, target: int, lo: float = -40.0,
                        hi: float = 40.0, max_iter: int = 200) -> float:
    """Intercept b such that exactly ``target`` rows have u < logistic(b + eta).

    The count is non-decreasing in b, so bisection applies; failure to bracket
    the target raises ``ConfigError``.
    """
    eta = np.asarray(eta, float)
    u = np.asarray(u, float)

    def count(b):
        return int(np.count_nonzero(u < expit(b + eta)))

    if target < 0 or target > eta.size:
        raise ConfigError(f"target case count {target} outside [0, {eta.size}]")
    if count(lo) > target or count(hi) < target:
        raise ConfigError("prevalence calibration cannot bracket the target")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        c = count(mid)
        if c == target:
            return mid
        if c < target:
            lo = mid
        else:
            hi = mid
    raise ConfigError("prevalence calibration did not converge")


def _effect_column(effect: PlantedEffect, spec: FeatureSpec, codes: np.ndarray) -> np.ndarray:
    if spec.coding == "ordinal":
        if effect.level is not None:
            raise ConfigError(f"{spec.name}: ordinal effects take no level")
        return np.where(codes == MISSING, 0, codes).astype(float)
    level = effect.level
    if level is None:
        raise ConfigError(f"{spec.name}: nominal effects must name a level")
    if level not in spec.levels or level == spec.control_category:
        raise ConfigError(f"{spec.name}: {level!r} is not a non-control level")
    return (codes == spec.levels.index(level)).astype(float)


# -- generation --------------------------------------------------------------------


def _ages(rng, bands: np.ndarray) -> np.ndarray:
    ages = np.empty(bands.size, dtype=np.int16)
    for i, b in enumerate(AGE_BANDS):
        rows = np.flatnonzero(bands == i)
        lo = MIN_AGE + 10 * i
        if i == 0:
            w = np.array([MINOR_SHARE_15_24 / 3] * 3 + [(1 - MINOR_SHARE_15_24) / 7] * 7)
            ages[rows] = lo + rng.choice(10, size=rows.size, p=w / w.sum())
        else:
            ages[rows] = lo + rng.integers(0, 10, rows.size)
    return ages


def _personas(rng, specs: Sequence[FeatureSpec], ages: np.ndarray) -> dict:
    out = {}
    minor = ages < 18
    for s in specs:
        k = len(s.levels)
        if s.coding == "ordinal":
            p = np.asarray(ORDINAL_PERSONA_PROBS if k == 5 else [1.0 / k] * k)
        else:
            p = np.full(k, (1 - NOMINAL_CONTROL_SHARE) / (k - 1))
            p[s.control_index] = NOMINAL_CONTROL_SHARE
        codes = rng.choice(k, size=ages.size, p=p / p.sum()).astype(np.int8)
        codes[minor] = MISSING
        out[s.name] = codes
    return out


def generate_cohort(config: GeneratorConfig, effects: Sequence[PlantedEffect] = (),
                    taxonomy: Sequence[FeatureSpec] | None = None,
                    catalog: DrugCatalog | None = None) -> tuple[Cohort, TruthTable]:
    """Draw a cohort and its ground truth.

    Returns the ``Cohort`` (roster, personas and event log) and a
    ``TruthTable`` holding every planted coefficient, the calibrated
    per-stratum intercepts and the intended label of every shopper.
    """
    config.validate()
    specs = list(taxonomy) if taxonomy is not None else load_taxonomy()
    by_name = {s.name: s for s in specs}
    for e in effects:
        if e.feature_name not in by_name:
            raise ConfigError(f"planted effect on unknown feature {e.feature_name!r}")
        _effect_column(e, by_name[e.feature_name], np.zeros(1, dtype=np.int16))
    catalog = catalog or DrugCatalog.load()
    window = config.window
    n = int(config.n_shoppers)
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(int(config.seed)).spawn(8)]
    r_demo, r_persona, r_explicit, r_query, r_purchase, r_label, r_drug, r_excl = streams

    # demographics
    keys = list(STRATA)
    p = np.array([config.demographic_mix.get(k, 0.0) for k in keys])
    cell = r_demo.choice(len(keys), size=n, p=p / p.sum())
    sex_idx = cell // len(AGE_BANDS)
    band_idx = cell % len(AGE_BANDS)
    sex = np.asarray(SEXES, dtype=object)[sex_idx]
    ages = _ages(r_demo, band_idx)
    ids = np.asarray([f"S{i:07d}" for i in range(n)], dtype=object)

    implicit = [s for s in specs if s.kind == "implicit"]
    explicit = [s for s in specs if s.kind == "explicit"]
    personas = _personas(r_persona, implicit, ages)

    # explicit features: one observation-period purchase per bought category
    n_days, perf = window.n_days, window.performance_offset
    bought = r_explicit.random((n, len(explicit))) >= config.no_purchase_rate
    amounts = np.round(r_explicit.lognormal(3.0, 1.0, (n, len(explicit))), 2) + 0.01
    spend = np.where(bought, amounts, 0.0)
    feat_rows, feat_cols = np.nonzero(bought)
    feat_day = r_explicit.integers(0, perf, feat_rows.size)
    # later purchases in the same categories fall in the performance period (ignored by features)
    late = r_explicit.random(bought.shape) < 0.3
    late_rows, late_cols = np.nonzero(late)
    late_day = r_explicit.integers(perf, n_days, late_rows.size)
    late_amount = np.round(r_explicit.lognormal(3.0, 1.0, late_rows.size), 2) + 0.01

    # explicit codes on the stratum's own quantile bins (what the pipeline will see)
    codes = {}
    for j, s in enumerate(explicit):
        col = np.zeros(n, dtype=np.int16)
        for c in range(len(keys)):
            rows = np.flatnonzero(cell == c)
            if rows.size:
                col[rows] = discretize(spend[rows, j]).codes
        codes[s.name] = col
    codes.update({k: v.astype(np.int16) for k, v in personas.items()})

    # exclusions: catalog drug bought during observation
    excluded = r_excl.random(n) < config.exclusion_rate
    excl_rows = np.flatnonzero(excluded)
    all_codes = sorted(catalog.codes)
    excl_day = r_excl.integers(0, perf, excl_rows.size)
    excl_drug = r_excl.integers(0, len(all_codes), excl_rows.size)

    # labels
    truth_rows, labels = [], {}
    case_rows, case_day, case_drug = [], [], []
    for disease in DISEASES:
        if disease not in config.prevalence:
            continue
        prev = config.prevalence[disease]
        u = r_label.random(n)
        status = np.where(excluded, -1, 0).astype(np.int8)
        for c, (sx, bd) in enumerate(keys):
            rows = np.flatnonzero((cell == c) & ~excluded)
            if rows.size == 0:
                continue
            eta = np.zeros(rows.size)
            for e in effects:
                if e.applies(sx, bd, disease):
                    eta += e.coefficient * _effect_column(e, by_name[e.feature_name], codes[e.feature_name][rows])
                    truth_rows.append(TruthRow(disease, sx, bd, e.feature_name, e.level, e.coefficient))
            target = int(math.floor(prev * rows.size))
            b0 = calibrate_intercept(eta, u[rows], target)
            truth_rows.append(TruthRow(disease, sx, bd, INTERCEPT, None, b0))
            status[rows[u[rows] < expit(b0 + eta)]] = 1
        labels[disease] = status
        cases = np.flatnonzero(status == 1)
        dcodes = sorted(catalog.codes_for(disease))
        case_rows.append(cases)
        case_day.append(r_drug.integers(perf, n_days, cases.size))
        case_drug.append(np.asarray([all_codes.index(dcodes[k])
                                     for k in r_drug.integers(0, len(dcodes), cases.size)], dtype=np.int64))

    # activity volumes
    qm = np.array([config.monthly_query_model[k] for k in keys], dtype=float)
    pm = np.array([config.monthly_purchase_model[k] for k in keys], dtype=float)
    q_rate = np.empty(n)
    p_rate = np.empty(n)
    for c in range(len(keys)):
        rows = np.flatnonzero(cell == c)
        if rows.size:
            q_rate[rows] = _monthly_rates(r_query, qm[c, 0], qm[c, 1], rows.size)
            p_rate[rows] = _monthly_rates(r_purchase, pm[c, 0], pm[c, 1], rows.size)
    if config.emit_queries:
        n_q = r_query.poisson(12 * q_rate)
    else:
        n_q = np.zeros(n, dtype=np.int64)
    structured = (bought.sum(axis=1) + late.sum(axis=1) + excluded
                  + sum(np.bincount(r, minlength=n) for r in case_rows))
    n_fill = np.maximum(r_purchase.poisson(12 * p_rate) - structured, 0)

    # assemble columns
    cats = tuple(s.category for s in explicit) + FILLER_CATEGORIES + (PHARMACY,)
    pharmacy = len(cats) - 1
    n_explicit_cats = len(explicit)
    q_who = np.repeat(np.arange(n), n_q)
    f_who = np.repeat(np.arange(n), n_fill)
    case_who = np.concatenate(case_rows) if case_rows else np.zeros(0, np.int64)
    parts = [
        # (shopper, day, kind, category, amount, drug)
        (q_who, r_query.integers(0, n_days, q_who.size), QUERY,
         r_query.integers(0, len(cats) - 1, q_who.size), 0.0, -1),
        (feat_rows, feat_day, PURCHASE, feat_cols, amounts[feat_rows, feat_cols], -1),
        (late_rows, late_day, PURCHASE, late_cols, late_amount, -1),
        (f_who, r_purchase.integers(0, n_days, f_who.size), PURCHASE,
         n_explicit_cats + r_purchase.integers(0, len(FILLER_CATEGORIES), f_who.size),
         np.round(r_purchase.lognormal(3.0, 1.0, f_who.size), 2) + 0.01, -1),
        (excl_rows, excl_day, PURCHASE, pharmacy, 25.0, excl_drug),
        (case_who, np.concatenate(case_day) if case_day else case_who, PURCHASE, pharmacy, 25.0,
         np.concatenate(case_drug) if case_drug else case_who),
    ]

    def col(i, dtype):
        return np.concatenate([np.broadcast_to(np.asarray(pt[i]), pt[0].shape).astype(dtype) for pt in parts])

    shopper = col(0, np.int64)
    day = col(1, np.int64)
    order = np.argsort(shopper * (n_days + 1) + day, kind="stable")
    log = EventLog(shopper[order].astype(np.int32), day[order].astype(np.int32), col(2, np.int8)[order],
                   col(3, np.int16)[order], col(4, np.float64)[order], col(5, np.int16)[order],
                   cats, tuple(all_codes), window.start)
    cohort = Cohort(ids, sex, ages, log, window, personas)
    return cohort, TruthTable(truth_rows, labels)


# -- summaries ---------------------------------------------------------------------


@dataclass
class CohortSummary:
    """Per-(sex, age band) mean and SD of monthly query and purchase counts."""

    queries: dict  # (sex, band) -> (mean, sd, n)
    purchases: dict

    def rows(self, measure: str) -> list[list[str]]:
        table = self.queries if measure == "queries" else self.purchases
        bands = [b for b in AGE_BANDS if any((s, b) in table for s in SEXES)]
        out = [["Sex"] + bands]
        for s in SEXES:
            row = [s.capitalize()]
            for b in bands:
                m = table.get((s, b))
                row.append("" if m is None else f"{m[0]:.2f}±{m[1]:.2f}")
            out.append(row)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for measure, title in (("queries", "Numbers of query logs per month"),
                                   ("purchases", "Numbers of purchase records per month")):
                w.writerow([title])
                w.writerows(self.rows(measure))


def _mean_sd(x: np.ndarray) -> tuple[float, float, int]:
    return float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0, int(x.size)


def emit_summary(cohort: Cohort, months: int = 12) -> CohortSummary:
    """Mean and SD over shoppers of each shopper's average monthly count (yearly total / months)."""
    if len(cohort) == 0:
        raise ConfigError("cannot summarise an empty cohort")
    ev = cohort.events
    n = len(cohort)
    nq = np.bincount(ev.shopper[ev.kind == QUERY], minlength=n) / months
    npur = np.bincount(ev.shopper[ev.kind == PURCHASE], minlength=n) / months
    bands = cohort.age_band
    q, p = {}, {}
    for s in SEXES:
        for b in AGE_BANDS:
            rows = (cohort.sex == s) & (bands == b)
            if rows.any():
                q[(s, b)] = _mean_sd(nq[rows])
                p[(s, b)] = _mean_sd(npur[rows])
    return CohortSummary(q, p)


def write_cohort(cohort: Cohort, truth: TruthTable, config: GeneratorConfig, effects: Sequence[PlantedEffect],
                 outdir) -> dict:
    """Write events.jsonl, roster.csv, truth.csv and synth_config.json into ``outdir``."""
    from pathlib import Path

    outdir = Path(outdir)
    paths = {"events": outdir / "events.jsonl", "roster": outdir / "roster.csv",
             "truth": outdir / "truth.csv", "config": outdir / "synth_config.json"}
    cohort.write_events_jsonl(paths["events"])
    cohort.write_roster_csv(paths["roster"])
    truth.write_csv(paths["truth"])
    with open(paths["config"], "w", encoding="utf-8") as fh:
        json.dump({"generator": config.to_dict(), "effects": [e.to_dict() for e in effects]}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    return paths


#: Ten effects whose magnitudes are taken from published coefficients, used for recovery experiments.
REFERENCE_EFFECTS = (
    PlantedEffect("Alcohol Preference", 2.153, level="style A"),
    PlantedEffect("Mid-Range Phone Preference", 0.796, level="style C"),
    PlantedEffect("Financial Status", -0.507),
    PlantedEffect("Membership Level", 0.453),
    PlantedEffect("Home Healthcare Supplies", 0.451),
    PlantedEffect("Posted Positive Reviews", -0.386),
    PlantedEffect("Men's Clothing", -0.384),
    PlantedEffect("Children's Clothing", -0.305),
    PlantedEffect("Purchase Frequency", 0.262),
    PlantedEffect("Phone Expenses", -0.259),
)


def effects_to_json(effects: Sequence[PlantedEffect]) -> list:
    return [e.to_dict() for e in effects]


def effects_from_json(items) -> list[PlantedEffect]:
    return [PlantedEffect.from_dict(d) for d in items]


__all__ = [
    "GeneratorConfig", "PlantedEffect", "TruthRow", "TruthTable", "CohortSummary", "generate_cohort",
    "emit_summary", "calibrate_intercept", "lognormal_params", "write_cohort", "REFERENCE_EFFECTS",
    "DEFAULT_MIX", "DEFAULT_QUERY_MODEL", "DEFAULT_PURCHASE_MODEL",
]
