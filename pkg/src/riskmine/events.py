"""Shopper records and event streams.

Two representations live here.  ``Shopper``/``Event`` are plain immutable
records convenient for single-shopper logic and for the JSON-lines wire
format.  ``EventLog`` stores a whole cohort column-wise in numpy arrays so
that aggregation over tens of millions of events stays cheap.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

SEXES = ("female", "male")
AGE_BANDS = ("15-24", "25-34", "35-44", "45-54", "55-64", "65-74")
DISEASES = ("depression", "type2_diabetes")
QUERY, PURCHASE = 0, 1
KINDS = ("query", "purchase")
MIN_AGE = 15


def age_band(age_years: int) -> str:
    """Decade band starting at 15; ages past 74 fold into the last band."""
    if age_years < MIN_AGE:
        raise ValidationError(f"age {age_years} below minimum study age {MIN_AGE}")
    return AGE_BANDS[min((int(age_years) - MIN_AGE) // 10, len(AGE_BANDS) - 1)]


def age_bands(ages: np.ndarray) -> np.ndarray:
    ages = np.asarray(ages)
    if ages.size and ages.min() < MIN_AGE:
        raise ValidationError(f"age {int(ages.min())} below minimum study age {MIN_AGE}")
    idx = np.minimum((ages - MIN_AGE) // 10, len(AGE_BANDS) - 1)
    return np.asarray(AGE_BANDS, dtype=object)[idx]


@dataclass(frozen=True)
class StudyWindow:
    """Adjacent observation and performance periods (inclusive date bounds)."""

    observation_start: date = date(2018, 1, 1)
    observation_end: date = date(2018, 8, 31)
    performance_start: date = date(2018, 9, 1)
    performance_end: date = date(2018, 12, 31)

    def __post_init__(self):
        if not (self.observation_start <= self.observation_end < self.performance_start <= self.performance_end):
            raise ValidationError("observation period must precede the performance period")
        if self.performance_start != self.observation_end + timedelta(days=1):
            raise ValidationError("observation and performance periods must be adjacent")

    @property
    def start(self) -> date:
        return self.observation_start

    @property
    def end(self) -> date:
        return self.performance_end

    @property
    def n_days(self) -> int:
        return (self.performance_end - self.observation_start).days + 1

    @property
    def performance_offset(self) -> int:
        """Day index (from study start) of the first performance day."""
        return (self.performance_start - self.observation_start).days

    def offset(self, d: date) -> int:
        return (d - self.observation_start).days

    def date_at(self, offset: int) -> date:
        return self.observation_start + timedelta(days=int(offset))

    def zone(self, d: date) -> str:
        if d < self.observation_start:
            return "pre"
        if d <= self.observation_end:
            return "observation"
        if d <= self.performance_end:
            return "performance"
        return "post"

    def month_starts(self) -> list[int]:
        """Day offsets of each calendar month start inside the window, plus the end sentinel."""
        out = []
        d = date(self.start.year, self.start.month, 1)
        while d <= self.end:
            out.append(max(self.offset(d), 0))
            d = date(d.year + (d.month == 12), d.month % 12 + 1, 1)
        out.append(self.n_days)
        return out

    def to_dict(self) -> dict:
        return {
            "observation": [self.observation_start.isoformat(), self.observation_end.isoformat()],
            "performance": [self.performance_start.isoformat(), self.performance_end.isoformat()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StudyWindow":
        o, p = d["observation"], d["performance"]
        return cls(date.fromisoformat(o[0]), date.fromisoformat(o[1]),
                   date.fromisoformat(p[0]), date.fromisoformat(p[1]))


@dataclass(frozen=True)
class Event:
    timestamp: date
    kind: str
    category: str
    amount: float = 0.0
    drug_code: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown event kind {self.kind!r}")
        if self.amount < 0:
            raise ValidationError("event amount must be nonnegative")
        if self.kind == "query" and (self.amount != 0 or self.drug_code is not None):
            raise ValidationError("query events carry no amount or drug code")


@dataclass(frozen=True)
class Shopper:
    id: str
    sex: str
    age_years: int
    events: tuple[Event, ...] = ()

    def __post_init__(self):
        if self.sex not in SEXES:
            raise ValidationError(f"unknown sex {self.sex!r}")
        if self.age_years < MIN_AGE:
            raise ValidationError(f"shopper {self.id}: age {self.age_years} below {MIN_AGE}")
        object.__setattr__(self, "events", tuple(self.events))

    @property
    def age_band(self) -> str:
        return age_band(self.age_years)

    def check_sorted(self) -> None:
        ts = [e.timestamp for e in self.events]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValidationError(f"shopper {self.id}: events not sorted by timestamp")


@dataclass
class EventLog:
    """Column-wise event store, sorted by (shopper, day).

    ``day`` is the offset in days from ``origin``; negative offsets are
    allowed so that pre-study purchase history can be represented.
    """

    shopper: np.ndarray
    day: np.ndarray
    kind: np.ndarray
    category: np.ndarray
    amount: np.ndarray
    drug: np.ndarray
    categories: tuple[str, ...]
    drug_codes: tuple[str, ...]
    origin: date = date(2018, 1, 1)

    def __len__(self) -> int:
        return int(self.shopper.shape[0])

    def check_sorted(self) -> None:
        if len(self) < 2:
            return
        s, d = self.shopper.astype(np.int64), self.day.astype(np.int64)
        bad = (np.diff(s) < 0) | ((np.diff(s) == 0) & (np.diff(d) < 0))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValidationError(f"event log not sorted at row {i + 1}")

    def bounds(self, n_shoppers: int) -> np.ndarray:
        """Row offsets so that shopper ``i`` owns rows ``bounds[i]:bounds[i+1]``."""
        return np.searchsorted(self.shopper, np.arange(n_shoppers + 1), side="left")

    def take(self, rows) -> "EventLog":
        return EventLog(self.shopper[rows], self.day[rows], self.kind[rows], self.category[rows],
                        self.amount[rows], self.drug[rows], self.categories, self.drug_codes, self.origin)

    @classmethod
    def from_shoppers(cls, shoppers: Sequence[Shopper], origin: date = date(2018, 1, 1),
                      categories: Iterable[str] = (), drug_codes: Iterable[str] = ()) -> "EventLog":
        cats = list(categories)
        drugs = list(drug_codes)
        cat_index = {c: i for i, c in enumerate(cats)}
        drug_index = {c: i for i, c in enumerate(drugs)}
        cols = {k: [] for k in ("shopper", "day", "kind", "category", "amount", "drug")}
        for i, sh in enumerate(shoppers):
            sh.check_sorted()
            for e in sh.events:
                if e.category not in cat_index:
                    cat_index[e.category] = len(cats)
                    cats.append(e.category)
                if e.drug_code is not None and e.drug_code not in drug_index:
                    drug_index[e.drug_code] = len(drugs)
                    drugs.append(e.drug_code)
                cols["shopper"].append(i)
                cols["day"].append((e.timestamp - origin).days)
                cols["kind"].append(KINDS.index(e.kind))
                cols["category"].append(cat_index[e.category])
                cols["amount"].append(e.amount)
                cols["drug"].append(-1 if e.drug_code is None else drug_index[e.drug_code])
        return cls(np.asarray(cols["shopper"], dtype=np.int32), np.asarray(cols["day"], dtype=np.int32),
                   np.asarray(cols["kind"], dtype=np.int8), np.asarray(cols["category"], dtype=np.int16),
                   np.asarray(cols["amount"], dtype=np.float64), np.asarray(cols["drug"], dtype=np.int16),
                   tuple(cats), tuple(drugs), origin)

    def events_for(self, lo: int, hi: int) -> list[Event]:
        out = []
        for r in range(lo, hi):
            k = int(self.kind[r])
            drug = int(self.drug[r])
            out.append(Event(self.origin + timedelta(days=int(self.day[r])), KINDS[k],
                             self.categories[int(self.category[r])],
                             round(float(self.amount[r]), 2) if k == PURCHASE else 0.0,
                             None if drug < 0 else self.drug_codes[drug]))
        return out


@dataclass
class Cohort:
    """Shopper roster (demographics + buyer personas) and its event log."""

    ids: np.ndarray
    sex: np.ndarray
    age: np.ndarray
    events: EventLog
    window: StudyWindow = field(default_factory=StudyWindow)
    personas: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    @property
    def age_band(self) -> np.ndarray:
        return age_bands(self.age)

    def shopper(self, i: int) -> Shopper:
        b = np.searchsorted(self.events.shopper, [i, i + 1], side="left")
        return Shopper(str(self.ids[i]), str(self.sex[i]), int(self.age[i]),
                       tuple(self.events.events_for(int(b[0]), int(b[1]))))

    def shoppers(self) -> Iterable[Shopper]:
        for i in range(len(self)):
            yield self.shopper(i)

    # -- wire formats -------------------------------------------------------

    def write_events_jsonl(self, path) -> None:
        ev = self.events
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r in range(len(ev)):
                k = int(ev.kind[r])
                drug = int(ev.drug[r])
                rec = {
                    "id": str(self.ids[int(ev.shopper[r])]),
                    "ts": (ev.origin + timedelta(days=int(ev.day[r]))).isoformat(),
                    "kind": KINDS[k],
                    "category": ev.categories[int(ev.category[r])],
                    "amount": round(float(ev.amount[r]), 2) if k == PURCHASE else 0,
                    "drug_code": None if drug < 0 else ev.drug_codes[drug],
                }
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")

    def write_roster_csv(self, path) -> None:
        names = sorted(self.personas)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "sex", "age"] + names)
            for i in range(len(self)):
                w.writerow([self.ids[i], self.sex[i], int(self.age[i])]
                           + ["" if self.personas[n][i] < 0 else int(self.personas[n][i]) for n in names])

    @classmethod
    def read(cls, roster_path, events_path, window: StudyWindow | None = None) -> "Cohort":
        window = window or StudyWindow()
        roster_path, events_path = Path(roster_path), Path(events_path)
        with open(roster_path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValidationError(f"{roster_path}: empty roster")
        persona_names = [c for c in rows[0] if c not in ("id", "sex", "age")]
        ids = np.asarray([r["id"] for r in rows], dtype=object)
        index = {sid: i for i, sid in enumerate(ids)}
        sex = np.asarray([r["sex"] for r in rows], dtype=object)
        bad = set(sex) - set(SEXES)
        if bad:
            raise ValidationError(f"{roster_path}: unknown sex values {sorted(bad)}")
        age = np.asarray([int(r["age"]) for r in rows], dtype=np.int16)
        age_bands(age)
        personas = {n: np.asarray([-1 if r[n] == "" else int(r[n]) for r in rows], dtype=np.int8)
                    for n in persona_names}

        cats, drugs = {}, {}
        cols = {k: [] for k in ("shopper", "day", "kind", "category", "amount", "drug")}
        with open(events_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                try:
                    i = index[rec["id"]]
                except KeyError:
                    raise ValidationError(f"{events_path}:{lineno}: unknown shopper {rec['id']!r}") from None
                cat = cats.setdefault(rec["category"], len(cats))
                code = rec.get("drug_code")
                cols["shopper"].append(i)
                cols["day"].append(window.offset(date.fromisoformat(rec["ts"])))
                cols["kind"].append(KINDS.index(rec["kind"]))
                cols["category"].append(cat)
                cols["amount"].append(float(rec.get("amount", 0)))
                cols["drug"].append(-1 if code is None else drugs.setdefault(code, len(drugs)))
        shopper = np.asarray(cols["shopper"], dtype=np.int32)
        day = np.asarray(cols["day"], dtype=np.int32)
        order = np.lexsort((day, shopper))
        log = EventLog(shopper[order], day[order], np.asarray(cols["kind"], dtype=np.int8)[order],
                       np.asarray(cols["category"], dtype=np.int16)[order],
                       np.asarray(cols["amount"], dtype=np.float64)[order],
                       np.asarray(cols["drug"], dtype=np.int16)[order],
                       tuple(cats), tuple(drugs), window.start)
        return cls(ids, sex, age, log, window, personas)
