"""End-to-end mining run: cohort -> case-control sample -> features -> regression -> prediction."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .cohort import LabeledPool, build_case_control_sample, load_catalog, partition_subgroups
from .errors import ConfigError, ValidationError
from .events import DISEASES, Cohort, StudyWindow
from .features import (FeatureMatrix, ScreenResult, aggregate_explicit, build_feature_matrix, load_taxonomy,
                       prune_collinear, screen_features, selection_table)
from .predict import (CostSweep, EvalReport, PlaceboReport, SvmConfig, baselines_for, cost_sweep,
                      cost_sweep_rows, cross_validate, default_cost_grid, eval_report_rows,
                      factor_placebo_experiment, placebo_rows, pooled_cost_sweep, roc_points, roc_svg,
                      train_cost_svm)
from .regress import SubgroupResult, diagnostics_rows, discover_risk_factors, risk_factor_rows
from .stats import REPORTED_POWER_N
from .synth import GeneratorConfig, PlantedEffect, effects_from_json, effects_to_json, generate_cohort

DEFAULT_RATIO = {"depression": 19, "type2_diabetes": 9}


@dataclass
class PipelineConfig:
    disease: str = "depression"
    ratio: int | None = None  # None: 19 for depression, 9 for diabetes
    power_threshold: int = REPORTED_POWER_N
    screen_alpha: float = 0.1
    bh_level: float = 0.05
    bh_family: str = "pooled"
    bh_count_screened_out: bool = True
    bins: int = 5
    collinearity_threshold: float = 0.7
    svm: SvmConfig = field(default_factory=SvmConfig)
    cost_grid: list | None = None  # None: default grid around the control:case ratio
    k_folds: int = 10
    seed: int = 0
    window: StudyWindow = field(default_factory=StudyWindow)
    roster: str | None = None
    events: str | None = None
    catalog: str | None = None
    taxonomy: str | None = None
    synth: GeneratorConfig | None = None
    effects: list = field(default_factory=list)
    output: str = "riskmine_out"
    svg: bool = True
    run_placebo: bool = True
    run_cost_sweep: bool = True

    def __post_init__(self):
        self.validate()

    @property
    def case_control_ratio(self) -> int:
        return int(self.ratio if self.ratio is not None else DEFAULT_RATIO[self.disease])

    def validate(self) -> None:
        if self.disease not in DISEASES:
            raise ConfigError(f"unknown disease {self.disease!r}")
        if self.ratio is not None and int(self.ratio) < 1:
            raise ConfigError("ratio must be a positive integer")
        if int(self.power_threshold) < 0:
            raise ConfigError("power_threshold must be nonnegative")
        if not 0 < self.screen_alpha <= 1:
            raise ConfigError("screen_alpha must lie in (0, 1]")
        if not 0 < self.bh_level < 1:
            raise ConfigError("bh_level must lie in (0, 1)")
        if self.bh_family not in ("subgroup", "pooled"):
            raise ConfigError("bh_family must be 'subgroup' or 'pooled'")
        if int(self.bins) < 2:
            raise ConfigError("bins must be at least 2")
        if not 0 < self.collinearity_threshold <= 1:
            raise ConfigError("collinearity_threshold must lie in (0, 1]")
        if int(self.k_folds) < 2:
            raise ConfigError("k_folds must be at least 2")
        if self.cost_grid is not None and (not self.cost_grid or any(c <= 0 for c in self.cost_grid)):
            raise ConfigError("cost_grid must be a non-empty list of positive costs")
        if self.synth is None and (self.roster is None or self.events is None):
            raise ConfigError("either a synth section or both roster and events inputs are required")

    def to_dict(self) -> dict:
        return {
            "disease": self.disease, "ratio": self.ratio, "power_threshold": int(self.power_threshold),
            "screen_alpha": self.screen_alpha, "bh_level": self.bh_level, "bh_family": self.bh_family,
            "bh_count_screened_out": self.bh_count_screened_out,
            "bins": int(self.bins), "collinearity_threshold": self.collinearity_threshold,
            "svm": {"positive_class_cost": self.svm.positive_class_cost,
                    "regularization": self.svm.regularization, "tolerance": self.svm.tolerance,
                    "max_passes": int(self.svm.max_passes)},
            "cost_grid": None if self.cost_grid is None else [float(c) for c in self.cost_grid],
            "k_folds": int(self.k_folds), "seed": int(self.seed), "window": self.window.to_dict(),
            "roster": self.roster, "events": self.events, "catalog": self.catalog, "taxonomy": self.taxonomy,
            "synth": None if self.synth is None else self.synth.to_dict(),
            "effects": effects_to_json(self.effects), "output": self.output, "svg": self.svg,
            "run_placebo": self.run_placebo, "run_cost_sweep": self.run_cost_sweep,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        if "svm" in kw:
            kw["svm"] = SvmConfig(**kw["svm"])
        if "window" in kw:
            kw["window"] = StudyWindow.from_dict(kw["window"])
        if kw.get("synth") is not None:
            kw["synth"] = GeneratorConfig.from_dict(kw["synth"])
        if "effects" in kw:
            kw["effects"] = effects_from_json(kw["effects"] or [])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def analysis_dict(self) -> dict:
        """The config without the output location, which does not affect results."""
        d = self.to_dict()
        d.pop("output")
        return d

    def digest(self) -> str:
        text = json.dumps(self.analysis_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class MiningResult:
    disease: str
    retained: list
    dropped: list
    matrices: list  # screened FeatureMatrix per retained subgroup
    screens: list  # ScreenResult per retained subgroup
    discoveries: list  # SubgroupResult per retained subgroup
    specs: list

    @property
    def discovered(self) -> list[list[str]]:
        return [r.discovered_features for r in self.discoveries]


def subgroup_matrices(cohort: Cohort, config: PipelineConfig, specs=None, catalog=None):
    """Label, match, partition and build the pruned feature matrix of every retained subgroup."""
    specs = specs if specs is not None else load_taxonomy(config.taxonomy)
    catalog = catalog if catalog is not None else load_catalog(config.catalog)
    missing = [s.name for s in specs if s.kind == "implicit" and s.name not in cohort.personas]
    if missing:
        raise ValidationError(f"roster lacks persona columns: {missing}")
    pool = LabeledPool.from_cohort(cohort, catalog, config.disease)
    sample = build_case_control_sample(pool, config.disease, config.case_control_ratio, config.seed)
    retained, dropped = partition_subgroups(sample, int(config.power_threshold))
    explicit = [s for s in specs if s.kind == "explicit"]
    agg = aggregate_explicit(cohort.events, [s.category for s in explicit], config.window, len(cohort))
    matrices = []
    for sub in retained:
        rows = sample.index[sub.rows]
        fm = build_feature_matrix(agg.spend, cohort.personas, rows, sample.label[sub.rows], specs,
                                  int(config.bins), (sub.sex, sub.age_band), np.asarray(cohort.ids)[rows])
        pruned, _ = prune_collinear(fm, config.collinearity_threshold)
        pruned.notes["degenerate"] = fm.notes.get("degenerate", [])
        matrices.append(pruned)
    return retained, dropped, matrices


def candidate_count(matrix: FeatureMatrix) -> int:
    """Number of regression coefficients the matrix could contribute (missing-persona flag excluded)."""
    from .features import MISSING_COLUMN, design_matrix

    return sum(c != MISSING_COLUMN for c in design_matrix(matrix, drop_pure=False).columns)


def mine(cohort: Cohort, config: PipelineConfig, specs=None, catalog=None) -> MiningResult:
    """Feature screening and risk-factor discovery for every retained subgroup."""
    specs = specs if specs is not None else load_taxonomy(config.taxonomy)
    retained, dropped, pruned = subgroup_matrices(cohort, config, specs, catalog)
    screens = [screen_features(fm, config.screen_alpha) for fm in pruned]
    screened = [fm.select(s.selected_names) for fm, s in zip(pruned, screens)]
    candidates = [candidate_count(fm) for fm in pruned] if config.bh_count_screened_out else None
    discoveries = (discover_risk_factors(screened, config.bh_level, config.bh_family, candidates)
                   if screened else [])
    return MiningResult(config.disease, retained, dropped, screened, screens, discoveries, specs)


# -- reporting -----------------------------------------------------------------


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _subgroup_rows(result: MiningResult) -> list[list[str]]:
    rows = [["Sex", "Age", "Cases", "Controls", "Size", "Status"]]
    for status, subs in (("retained", result.retained), ("dropped", result.dropped)):
        for s in subs:
            rows.append([s.sex.capitalize(), s.age_band, str(s.case_count), str(s.control_count),
                         str(s.size), status])
    return rows


def _roc_rows(curves: dict) -> list[list[str]]:
    rows = [["curve", "fpr", "tpr"]]
    for name, pts in curves.items():
        rows.extend([name, f"{f:.6f}", f"{t:.6f}"] for f, t in pts)
    return rows


def _design(fm: FeatureMatrix) -> np.ndarray:
    from .features import design_matrix

    return design_matrix(fm, drop_pure=False).X


def predict_reports(result: MiningResult, config: PipelineConfig, threads: int = 1) -> dict:
    """Cost sweep, cross-validated evaluation, placebo experiment and ROC curves."""
    usable = [fm for fm in result.matrices if fm.specs]
    out = {"sweeps": [], "pooled": None, "reports": [], "placebo": None, "curves": {}, "overlay": []}
    if not usable:
        return out
    ratio = config.case_control_ratio
    grid = config.cost_grid if config.cost_grid is not None else default_cost_grid(ratio)
    k, seed = int(config.k_folds), int(config.seed)
    cost = config.svm.positive_class_cost
    if config.run_cost_sweep:
        sweeps = [cost_sweep(_design(fm), fm.labels, grid, config.svm, k, seed,
                             f"{fm.stratum[0].capitalize()} {fm.stratum[1]}", threads) for fm in usable]
        pooled = pooled_cost_sweep(sweeps)
        cost = pooled.grid[pooled.best_index]
        out["sweeps"], out["pooled"] = sweeps, pooled
    svm = config.svm.with_cost(cost)
    out["cost"] = cost
    reports = []
    for fm in usable:
        reports.append(cross_validate(_design(fm), fm.labels, svm, k, seed,
                                      f"{fm.stratum[0].capitalize()} {fm.stratum[1]}", threads=threads))
    labels = np.concatenate([fm.labels for fm in usable])
    oof = np.concatenate([r.oof_scores for r in reports])
    pooled_report = _pooled_report(reports, labels, oof)
    out["reports"] = reports + [pooled_report]
    ins = np.concatenate([train_cost_svm(_design(fm), fm.labels, svm).decision_function(_design(fm))
                          for fm in usable])
    out["curves"] = {"in-sample": roc_points(ins, labels), "out-of-sample": roc_points(oof, labels)}
    out["overlay"] = [(b.study, 1 - b.specificity, b.sensitivity, b.auc) for b in baselines_for(config.disease)]
    if config.run_placebo:
        disc = {d.stratum: d.discovered_features for d in result.discoveries}
        out["placebo"] = factor_placebo_experiment(usable, [disc.get(fm.stratum, []) for fm in usable], seed,
                                                   svm, k, threads)
    return out


def _pooled_report(reports: Sequence[EvalReport], labels, oof) -> EvalReport:
    """All subgroups together: metrics averaged over every subgroup's folds."""
    folds = [m for r in reports for m in r.fold_metrics]
    mean = {m: float(np.mean([f[m] for f in folds])) for m in folds[0]}
    sd = {m: float(np.std([f[m] for f in folds], ddof=1)) for m in folds[0]}
    return EvalReport("All subgroups", mean, sd, folds, roc_points(oof, labels), oof,
                      np.concatenate([r.folds for r in reports]), int(labels.size), int(labels.sum()))


def write_reports(result: MiningResult, preds: dict, config: PipelineConfig, outdir: Path) -> list[str]:
    specs_by_name = {s.name: s for s in result.specs}
    files = {
        "subgroups.csv": _subgroup_rows(result),
        "selection_table.csv": selection_table(result.screens) if result.screens else [["Lifestyle Feature"]],
        "diagnostics.csv": diagnostics_rows(result.discoveries),
        "risk_factors.csv": risk_factor_rows(result.discoveries, specs_by_name),
        "eval_report.csv": eval_report_rows(preds["reports"]),
        "roc_points.csv": _roc_rows(preds["curves"]),
        "baseline_overlay.csv": [["study", "fpr", "tpr", "auc"]]
        + [[s, f"{f:.3f}", f"{t:.3f}", f"{a:.3f}"] for s, f, t, a in preds["overlay"]],
        "cost_sweep.csv": cost_sweep_rows(preds["sweeps"], preds["pooled"]) if preds["sweeps"]
        else [["Subgroup", "Cost", "Mean AUC", "SD AUC", "Best", "Wilcoxon p vs best"]],
    }
    if preds["placebo"] is not None:
        files["placebo_experiment.csv"] = placebo_rows(preds["placebo"])
    for name, rows in files.items():
        _write_csv(outdir / name, rows)
    names = sorted(files)
    if config.svg and preds["curves"]:
        (outdir / "roc.svg").write_text(roc_svg(preds["curves"], preds["overlay"]), encoding="utf-8")
        names.append("roc.svg")
    return sorted(names)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(outdir: Path, names: Sequence[str], config: PipelineConfig) -> None:
    import numba
    import scipy

    manifest = {
        "tool": "riskmine",
        "versions": {"riskmine": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "numba": numba.__version__},
        "seeds": {"pipeline": int(config.seed),
                  "synth": None if config.synth is None else int(config.synth.seed)},
        "config_sha256": config.digest(),
        "config": config.analysis_dict(),
        "files": {n: _sha256(outdir / n) for n in sorted(names)},
    }
    with open(outdir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_cohort(config: PipelineConfig) -> Cohort:
    if config.synth is not None:
        cohort, _ = generate_cohort(config.synth, config.effects, load_taxonomy(config.taxonomy),
                                    load_catalog(config.catalog))
        return cohort
    for p in (config.roster, config.events):
        if not Path(p).is_file():
            raise FileNotFoundError(p)
    return Cohort.read(config.roster, config.events, config.window)


def run_pipeline(config: PipelineConfig, threads: int = 1) -> Path:
    """Run every stage and publish the report bundle atomically into ``config.output``.

    Reports are written to a temporary sibling directory that replaces the
    output directory only after every stage succeeded; on failure nothing is
    left behind.
    """
    out = Path(config.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    cohort = load_cohort(config)
    result = mine(cohort, config)
    preds = predict_reports(result, config, threads)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        names = write_reports(result, preds, config, tmp)
        write_manifest(tmp, names, config)
        if out.exists():
            old = out.with_name(f".{out.name}.old")
            if old.exists():
                shutil.rmtree(old)
            os.replace(out, old)
            os.replace(tmp, out)
            shutil.rmtree(old)
        else:
            os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out


__all__ = ["PipelineConfig", "MiningResult", "mine", "subgroup_matrices", "predict_reports", "run_pipeline",
           "load_cohort", "PlantedEffect", "ScreenResult", "SubgroupResult", "CostSweep", "PlaceboReport"]
