"""Monte Carlo checks of the mining pipeline against planted ground truth."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .pipeline import PipelineConfig, mine
from .predict import SvmConfig, factor_placebo_experiment
from .synth import GeneratorConfig, PlantedEffect, generate_cohort


@dataclass
class ReplicateOutcome:
    seed: int
    recovered: int  # (subgroup, planted effect) pairs found with the right sign
    planted_pairs: int
    false_discoveries: int
    reported: int
    subgroups: int
    p_factor_vs_placebo: float = float("nan")
    auc_factors: list = field(default_factory=list)
    auc_placebos: list = field(default_factory=list)
    auc_combined: list = field(default_factory=list)

    @property
    def recall(self) -> float:
        return self.recovered / self.planted_pairs if self.planted_pairs else float("nan")


def run_replicate(seed: int, effects: Sequence[PlantedEffect], n_shoppers: int = 20000,
                  disease: str = "depression", placebo: bool = True,
                  svm: SvmConfig | None = None) -> ReplicateOutcome:
    """Generate one cohort, mine it and score the reported factors against the planted truth."""
    gen = GeneratorConfig(n_shoppers=n_shoppers, seed=seed, emit_queries=False)
    cohort, truth = generate_cohort(gen, effects)
    config = PipelineConfig(disease=disease, synth=gen, seed=seed)
    result = mine(cohort, config)
    recovered = pairs = false = reported = 0
    for d in result.discoveries:
        planted = {r.feature: np.sign(r.coefficient) for r in truth.effects(disease, *d.stratum)
                   if r.coefficient != 0}
        pairs += len(planted)
        for f in d.significant:
            reported += 1
            if planted.get(f.feature) == np.sign(f.B):
                recovered += 1
            else:
                false += 1
    out = ReplicateOutcome(seed, recovered, pairs, false, reported, len(result.discoveries))
    if placebo and result.matrices:
        svm = svm or SvmConfig(positive_class_cost=float(config.case_control_ratio))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rep = factor_placebo_experiment(result.matrices, result.discovered, seed, svm, config.k_folds)
        out.p_factor_vs_placebo = rep.p_factor_vs_placebo
        out.auc_factors = [r.auc_factors for r in rep.rows]
        out.auc_placebos = [r.auc_placebos for r in rep.rows]
        out.auc_combined = [r.auc_combined for r in rep.rows]
    return out


@dataclass
class ExperimentSummary:
    outcomes: list

    @property
    def recall(self) -> float:
        planted = sum(o.planted_pairs for o in self.outcomes)
        return sum(o.recovered for o in self.outcomes) / planted if planted else float("nan")

    @property
    def fdr(self) -> float:
        reported = sum(o.reported for o in self.outcomes)
        return sum(o.false_discoveries for o in self.outcomes) / reported if reported else 0.0

    @property
    def zero_discovery_runs(self) -> int:
        return sum(o.reported == 0 for o in self.outcomes)

    @property
    def placebo_auc(self) -> float:
        vals = [v for o in self.outcomes for v in o.auc_placebos if np.isfinite(v)]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def placebo_wins(self) -> int:
        """Replicates whose factor-vs-placebo Wilcoxon test has p < 0.05."""
        return sum(np.isfinite(o.p_factor_vs_placebo) and o.p_factor_vs_placebo < 0.05 for o in self.outcomes)


def run_experiment(seeds: Sequence[int], effects: Sequence[PlantedEffect], **kw) -> ExperimentSummary:
    return ExperimentSummary([run_replicate(s, effects, **kw) for s in seeds])
