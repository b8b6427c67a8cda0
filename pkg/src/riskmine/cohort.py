"""Health-status labeling, case-control matching and subgroup partitioning."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from datetime import date
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ShortageError, ValidationError
from .events import AGE_BANDS, DISEASES, SEXES, Cohort, Shopper, StudyWindow

CASE, CONTROL, EXCLUDED = 1, 0, -1

_CODE_PREFIXES = {"depression": ("N06", "D04"), "type2_diabetes": ("A10",)}


@dataclass(frozen=True)
class DrugEntry:
    generic_name: str
    atc_code: str
    disease: str


@dataclass(frozen=True)
class DrugCatalog:
    entries: tuple[DrugEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise ValidationError("drug catalog is empty")
        seen = set()
        for e in self.entries:
            if e.disease not in DISEASES:
                raise ValidationError(f"{e.atc_code}: unknown disease {e.disease!r}")
            if e.atc_code in seen:
                raise ValidationError(f"duplicate ATC code {e.atc_code}")
            if not e.atc_code.startswith(_CODE_PREFIXES[e.disease]):
                raise ValidationError(f"{e.atc_code} is not a {e.disease} ATC code")
            seen.add(e.atc_code)

    @classmethod
    def load(cls, path=None) -> "DrugCatalog":
        """Read a (generic_name, atc_code, disease) CSV; defaults to the shipped catalog."""
        if path is None:
            text = resources.files("riskmine.data").joinpath("drug_catalog.csv").read_text(encoding="utf-8")
            rows = list(csv.DictReader(text.splitlines()))
        else:
            with open(path, encoding="utf-8", newline="") as fh:
                rows = list(csv.DictReader(fh))
        missing = {"generic_name", "atc_code", "disease"} - set(rows[0] if rows else ())
        if missing:
            raise ValidationError(f"drug catalog missing columns {sorted(missing)}")
        return cls(tuple(DrugEntry(r["generic_name"].strip(), r["atc_code"].strip(), r["disease"].strip())
                         for r in rows))

    @property
    def codes(self) -> frozenset[str]:
        return frozenset(e.atc_code for e in self.entries)

    def codes_for(self, disease: str) -> frozenset[str]:
        return frozenset(e.atc_code for e in self.entries if e.disease == disease)

    def by_code(self, code: str) -> DrugEntry:
        for e in self.entries:
            if e.atc_code == code:
                return e
        raise KeyError(code)


@dataclass(frozen=True)
class Label:
    value: str  # "case", "control" or "excluded"
    disease: str
    first_drug_date: date | None = None

    @property
    def excluded(self) -> bool:
        return self.value == "excluded"


def assess_health_status(shopper: Shopper, catalog: DrugCatalog, window: StudyWindow,
                         disease: str) -> Label:
    """Label one shopper for ``disease`` from their drug purchases.

    Any catalog drug bought before the performance period (pre-study or during
    observation) excludes the shopper.  Otherwise the shopper is a case when a
    drug for ``disease`` is first bought inside the performance period.
    """
    if disease not in DISEASES:
        raise ValidationError(f"unknown disease {disease!r}")
    shopper.check_sorted()
    all_codes = catalog.codes
    wanted = catalog.codes_for(disease)
    first = None
    for e in shopper.events:
        if e.kind != "purchase" or e.drug_code is None:
            continue
        if e.drug_code not in all_codes:
            raise ValidationError(f"shopper {shopper.id}: drug code {e.drug_code} not in catalog")
        zone = window.zone(e.timestamp)
        if zone in ("pre", "observation"):
            return Label("excluded", disease, e.timestamp)
        if zone == "performance" and e.drug_code in wanted and first is None:
            first = e.timestamp
    if first is not None:
        return Label("case", disease, first)
    return Label("control", disease, None)


def label_cohort(cohort: Cohort, catalog: DrugCatalog, disease: str,
                 window: StudyWindow | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``assess_health_status`` over a whole cohort.

    Returns ``(status, first_day)`` with status in {CASE, CONTROL, EXCLUDED}
    and ``first_day`` the day offset of the first qualifying drug purchase
    (-1 when there is none).
    """
    window = window or cohort.window
    ev = cohort.events
    ev.check_sorted()
    n = len(cohort)
    status = np.full(n, CONTROL, dtype=np.int8)
    first_day = np.full(n, -1, dtype=np.int32)
    drug_rows = np.flatnonzero((ev.drug >= 0) & (ev.kind == 1))
    if drug_rows.size == 0:
        return status, first_day
    all_codes, wanted = catalog.codes, catalog.codes_for(disease)
    known = np.asarray([c in all_codes for c in ev.drug_codes], dtype=bool)
    if not known[ev.drug[drug_rows]].all():
        bad = sorted({ev.drug_codes[i] for i in ev.drug[drug_rows] if not known[i]})
        raise ValidationError(f"drug codes not in catalog: {bad}")
    is_wanted = np.asarray([c in wanted for c in ev.drug_codes], dtype=bool)
    shift = (window.start - ev.origin).days
    day = ev.day[drug_rows].astype(np.int64) - shift
    who = ev.shopper[drug_rows]
    perf = window.performance_offset
    early = day < perf
    status[np.unique(who[early])] = EXCLUDED
    hit = (~early) & (day < window.n_days) & is_wanted[ev.drug[drug_rows]]
    if hit.any():
        # rows are sorted by (shopper, day): the first row per shopper is the earliest
        w, d = who[hit], day[hit]
        uniq, first_idx = np.unique(w, return_index=True)
        keep = status[uniq] != EXCLUDED
        status[uniq[keep]] = CASE
        first_day[uniq[keep]] = d[first_idx][keep]
    first_day[status == EXCLUDED] = -1
    return status, first_day


@dataclass
class LabeledPool:
    """Labeled shoppers eligible for sampling (columnar)."""

    ids: np.ndarray
    sex: np.ndarray
    age_band: np.ndarray
    status: np.ndarray
    index: np.ndarray = None  # row in the originating cohort

    def __post_init__(self):
        if self.index is None:
            self.index = np.arange(len(self.ids))

    @classmethod
    def from_cohort(cls, cohort: Cohort, catalog: DrugCatalog, disease: str) -> "LabeledPool":
        status, _ = label_cohort(cohort, catalog, disease)
        return cls(cohort.ids, cohort.sex, cohort.age_band, status, np.arange(len(cohort)))


def stratum_seed(master_seed: int, *key) -> int:
    """Stable 64-bit seed for a stratum, independent of evaluation order."""
    text = ":".join([str(int(master_seed))] + [str(k) for k in key])
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


@dataclass
class CaseControlSample:
    disease: str
    ratio: int
    ids: np.ndarray
    sex: np.ndarray
    age_band: np.ndarray
    label: np.ndarray  # 1 case, 0 control
    index: np.ndarray  # row in the originating cohort
    matches: dict = field(default_factory=dict)  # case id -> tuple of control ids

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    @property
    def n_cases(self) -> int:
        return int(self.label.sum())


def build_case_control_sample(pool: LabeledPool, disease: str, ratio: int, seed: int) -> CaseControlSample:
    """Match every case with ``ratio`` distinct controls of the same sex and age band."""
    if ratio < 1:
        raise ValidationError("ratio must be a positive integer")
    status = np.asarray(pool.status)
    sexes = np.asarray(pool.sex, dtype=object)
    bands = np.asarray(pool.age_band, dtype=object)
    cases_by, controls_by = {}, {}
    for s in SEXES:
        for b in AGE_BANDS:
            in_cell = (sexes == s) & (bands == b)
            cases_by[(s, b)] = np.flatnonzero(in_cell & (status == CASE))
            controls_by[(s, b)] = np.flatnonzero(in_cell & (status == CONTROL))
    deficits = {}
    for key, cases in cases_by.items():
        need, have = ratio * len(cases), len(controls_by[key])
        if need > have:
            deficits[f"{key[0]}:{key[1]}"] = (need, have)
    if deficits:
        raise ShortageError(deficits)

    rows, matches = [], {}
    for key in sorted(cases_by):
        cases = cases_by[key]
        if len(cases) == 0:
            continue
        rng = np.random.default_rng(stratum_seed(seed, disease, *key))
        chosen = controls_by[key][rng.permutation(len(controls_by[key]))[: ratio * len(cases)]]
        for j, c in enumerate(cases):
            mine = chosen[j * ratio:(j + 1) * ratio]
            matches[str(pool.ids[c])] = tuple(str(pool.ids[m]) for m in mine)
            rows.append(c)
            rows.extend(mine.tolist())
    rows = np.asarray(rows, dtype=np.int64)
    return CaseControlSample(
        disease=disease, ratio=ratio,
        ids=np.asarray(pool.ids)[rows] if rows.size else np.asarray([], dtype=object),
        sex=sexes[rows], age_band=bands[rows],
        label=(status[rows] == CASE).astype(np.int8),
        index=np.asarray(pool.index)[rows] if rows.size else np.asarray([], dtype=np.int64),
        matches=matches)


@dataclass
class Subsample:
    sex: str
    age_band: str
    members: list
    case_count: int
    control_count: int
    rows: np.ndarray = None  # positions inside the parent sample

    @property
    def size(self) -> int:
        return self.case_count + self.control_count

    @property
    def key(self) -> str:
        return f"{self.sex}:{self.age_band}"

    @property
    def title(self) -> str:
        return f"{self.sex.capitalize()} {self.age_band}"


def partition_subgroups(sample: CaseControlSample, power_threshold: int) -> tuple[list[Subsample], list[Subsample]]:
    """Split a sample into (sex, age band) cells; cells smaller than the threshold are dropped.

    Returns ``(retained, dropped)``, both in (sex, age band) order.
    """
    retained, dropped = [], []
    sexes = np.asarray(sample.sex, dtype=object)
    bands = np.asarray(sample.age_band, dtype=object)
    for s in SEXES:
        for b in AGE_BANDS:
            rows = np.flatnonzero((sexes == s) & (bands == b))
            if rows.size == 0:
                continue
            n_case = int(sample.label[rows].sum())
            sub = Subsample(s, b, [str(x) for x in np.asarray(sample.ids)[rows]], n_case,
                            int(rows.size - n_case), rows)
            (retained if rows.size >= power_threshold else dropped).append(sub)
    return retained, dropped


def load_catalog(path: str | Path | None = None) -> DrugCatalog:
    return DrugCatalog.load(path)
