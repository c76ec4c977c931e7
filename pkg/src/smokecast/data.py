"""Core grids, index conventions and ingestion of the input surfaces.

Periods are carried internally by their mid-period label year (start + 3), so
the quinquennium 1950-1955 is ``1953``.  Ages are identified by the lower
bound of their group on the abridged grid ``0, 1, 5, 10, ..., 100+``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    DuplicateKey,
    EmptySlice,
    ImplausibleE0,
    MissingAgeGroup,
    MissingCoreGroup,
    NegativeRate,
    OpenGroupZeroRate,
    OutOfRangeFraction,
    ParseError,
    UnknownSex,
)

ASSAF_AGES = (40, 45, 50, 55, 60, 65, 70, 75, 80)
ESTIMATION_LABELS = tuple(range(1953, 2014, 5))
FORECAST_LABELS = tuple(range(2018, 2059, 5))
COHORT_ORIGIN = 1873


class Sex(str, enum.Enum):
    MALE = "male"
    FEMALE = "female"

    @classmethod
    def parse(cls, value):
        if isinstance(value, Sex):
            return value
        key = str(value).strip().lower()
        aliases = {"male": cls.MALE, "m": cls.MALE, "female": cls.FEMALE, "f": cls.FEMALE}
        if key not in aliases:
            raise UnknownSex(f"unknown sex {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class AgeGroup:
    lower: int
    width: int | None  # None marks the open-ended group

    @property
    def is_open(self):
        return self.width is None

    def __str__(self):
        if self.is_open:
            return f"{self.lower}+"
        return f"{self.lower}-{self.lower + self.width - 1}"


def abridged_grid(open_age=100):
    """Return the abridged age grid ``0, 1-4, 5-9, ..., open_age+``."""
    if open_age < 10 or open_age % 5:
        raise ValueError("open_age must be a multiple of 5 and at least 10")
    groups = [AgeGroup(0, 1), AgeGroup(1, 4)]
    groups += [AgeGroup(x, 5) for x in range(5, open_age, 5)]
    groups.append(AgeGroup(open_age, None))
    return tuple(groups)


def grid_from_lowers(lowers):
    """Build an age grid from lower bounds; the last group is open-ended."""
    lowers = [int(x) for x in lowers]
    if any(b <= a for a, b in zip(lowers, lowers[1:])):
        raise ValueError("age lower bounds must be strictly increasing")
    groups = [AgeGroup(a, b - a) for a, b in zip(lowers, lowers[1:])]
    groups.append(AgeGroup(lowers[-1], None))
    return tuple(groups)


def check_grid(grid):
    lowers = [g.lower for g in grid]
    if any(b <= a for a, b in zip(lowers, lowers[1:])):
        raise ValueError("age lower bounds must be strictly increasing")
    opens = [g.is_open for g in grid]
    if sum(opens) != 1 or not opens[-1]:
        raise ValueError("grid needs exactly one open-ended group, in last position")


DEFAULT_GRID = abridged_grid()


def label_year(start_year):
    return int(start_year) + 3


def normalize_period(value):
    """Map a period start year or label year onto the label year."""
    value = int(value)
    if value % 5 == 0:
        return value + 3
    if value % 5 == 3:
        return value
    raise ParseError(f"period {value} is neither a 5-year start nor a mid-period label")


def start_year(label):
    return int(label) - 3


@dataclass(frozen=True)
class Slice:
    """One (country, sex) block of a surface: periods x ages."""

    periods: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.periods.setflags(write=False)
        self.values.setflags(write=False)

    def at(self, period):
        idx = np.flatnonzero(self.periods == period)
        if idx.size == 0:
            raise KeyError(period)
        return self.values[idx[0]]

    def restrict(self, periods):
        keep = np.isin(self.periods, list(periods))
        return Slice(self.periods[keep].copy(), self.values[keep].copy())


@dataclass(frozen=True)
class Surface:
    """Age x period grid for many countries and sexes."""

    grid: tuple
    slices: dict = field(default_factory=dict)

    @property
    def ages(self):
        return np.array([g.lower for g in self.grid])

    def keys(self):
        return sorted(self.slices, key=lambda k: (k[0], k[1].value))

    def countries(self, sex=None):
        return sorted({c for c, s in self.slices if sex is None or s == Sex.parse(sex)})

    def get(self, country, sex):
        try:
            return self.slices[(country, Sex.parse(sex))]
        except KeyError:
            raise EmptySlice(f"no data for {country}/{Sex.parse(sex).value}", key=(country, sex)) from None

    def n_cells(self, sex=None):
        return sum(s.values.size for (c, sx), s in self.slices.items() if sex is None or sx == Sex.parse(sex))

    def restrict_periods(self, periods):
        return type(self)(self.grid, {k: s.restrict(periods) for k, s in self.slices.items()})

    def restrict_countries(self, countries):
        keep = set(countries)
        return type(self)(self.grid, {k: s for k, s in self.slices.items() if k[0] in keep})

    def to_frame(self, value_name):
        rows = []
        for (country, sex), sl in self.slices.items():
            for i, p in enumerate(sl.periods):
                for j, g in enumerate(self.grid):
                    rows.append((country, sex.value, start_year(p), g.lower, sl.values[i, j]))
        return pd.DataFrame(rows, columns=["country", "sex", "period_start", "age_lower", value_name])


class MortalitySurface(Surface):
    """Central death rates m_x (deaths per person-year)."""

    value_name = "mx"


class AssafSurface(Surface):
    """Smoking-attributable fractions on the full age grid."""

    value_name = "y"


@dataclass(frozen=True)
class E0Series:
    """Life expectancy at birth by (country, sex), indexed by period label."""

    slices: dict = field(default_factory=dict)

    def get(self, country, sex):
        try:
            return self.slices[(country, Sex.parse(sex))]
        except KeyError:
            raise EmptySlice(f"no e0 for {country}/{Sex.parse(sex).value}", key=(country, sex)) from None

    def countries(self, sex=None):
        return sorted({c for c, s in self.slices if sex is None or s == Sex.parse(sex)})

    def value(self, country, sex, period):
        periods, values = self.get(country, sex)
        idx = np.flatnonzero(periods == period)
        if idx.size == 0:
            raise KeyError((country, sex, period))
        return float(values[idx[0]])

    def restrict_periods(self, periods):
        out = {}
        for k, (p, v) in self.slices.items():
            keep = np.isin(p, list(periods))
            out[k] = (p[keep], v[keep])
        return E0Series(out)

    def to_frame(self, value_name="e0"):
        rows = []
        for (country, sex), (periods, values) in self.slices.items():
            for p, v in zip(periods, values):
                rows.append((country, sex.value, start_year(p), float(v)))
        return pd.DataFrame(rows, columns=["country", "sex", "period_start", value_name])


# ---------------------------------------------------------------- ingestion

DEFAULT_SCHEMAS = {
    "mortality": {"country": "country", "sex": "sex", "period": "period_start", "age": "age_lower", "value": "mx"},
    "assaf": {"country": "country", "sex": "sex", "period": "period_start", "age": "age_lower", "value": "y"},
    "e0": {"country": "country", "sex": "sex", "period": "period_start", "value": "e0"},
}


def _read_table(path, kind, schema, errors):
    """Read a delimited file into canonical columns, recording parse failures."""
    schema = {**DEFAULT_SCHEMAS[kind], **(schema or {})}
    frame = pd.read_csv(path, sep=None, engine="python", dtype=str, keep_default_na=False)
    missing = [col for col in schema.values() if col not in frame.columns]
    if missing:
        raise ParseError(f"{path}: missing columns {missing}")
    out = pd.DataFrame({role: frame[col].str.strip() for role, col in schema.items()})
    out["row"] = np.arange(len(out)) + 2  # 1-based, after the header line
    numeric = [r for r in ("period", "age", "value") if r in out]
    for role in numeric:
        parsed = pd.to_numeric(out[role], errors="coerce")
        for row in out["row"][parsed.isna() | ~np.isfinite(parsed.fillna(np.nan))]:
            errors.append(ParseError(f"unparseable {schema[role]!r} value", row=int(row)))
        out[role] = parsed
    out = out.dropna(subset=numeric)
    good = []
    for rec in out.itertuples(index=False):
        try:
            sex = Sex.parse(rec.sex)
            period = normalize_period(rec.period)
        except DataError as exc:
            exc.row = int(rec.row)
            errors.append(exc)
            continue
        good.append((rec, sex, period))
    return good


def _collect_slices(records, kind, grid, errors):
    """Group records into (country, sex) -> {period: {age: (value, row)}}."""
    lowers = {g.lower for g in grid} if grid is not None else set()
    table = {}
    for rec, sex, period in records:
        key = (rec.country, sex, period, int(rec.age) if kind != "e0" else None)
        if kind != "e0" and int(rec.age) not in lowers:
            errors.append(ParseError(f"age {rec.age} is not on the age grid", row=int(rec.row), key=key))
            continue
        cell = table.setdefault((rec.country, sex), {}).setdefault(period, {})
        slot = key[3]
        if slot in cell:
            errors.append(DuplicateKey("duplicate key", row=int(rec.row), key=key))
            continue
        cell[slot] = (float(rec.value), int(rec.row))
    return table


def _build_mortality(table, grid, errors):
    slices = {}
    for (country, sex), periods in table.items():
        labels = sorted(periods)
        values = np.full((len(labels), len(grid)), np.nan)
        ok = True
        for i, p in enumerate(labels):
            for j, g in enumerate(grid):
                if g.lower not in periods[p]:
                    errors.append(MissingAgeGroup(f"missing age group {g}", key=(country, sex.value, p, g.lower)))
                    ok = False
                    continue
                v, row = periods[p][g.lower]
                if v < 0:
                    errors.append(NegativeRate(f"negative rate {v}", row=row, key=(country, sex.value, p, g.lower)))
                    ok = False
                elif g.is_open and v == 0:
                    errors.append(OpenGroupZeroRate("open age group has zero rate", row=row, key=(country, sex.value, p, g.lower)))
                    ok = False
                values[i, j] = v
        if ok:
            slices[(country, sex)] = Slice(np.array(labels), values)
    return MortalitySurface(grid, slices)


def _build_assaf(table, grid, errors):
    slices = {}
    for (country, sex), periods in table.items():
        labels = sorted(periods)
        rows = []
        ok = True
        for p in labels:
            raw = {age: v for age, (v, _row) in periods[p].items() if age in ASSAF_AGES}
            try:
                rows.append(harmonize_assaf_ages(raw, grid))
            except DataError as exc:
                exc.key = (country, sex.value, p)
                errors.append(exc)
                ok = False
        if ok:
            slices[(country, sex)] = Slice(np.array(labels), np.array(rows))
    return AssafSurface(grid, slices)


def _build_e0(table, errors, bounds):
    lo, hi = bounds
    slices = {}
    for (country, sex), periods in table.items():
        labels = sorted(periods)
        values = np.array([periods[p][None][0] for p in labels])
        bad = [(p, periods[p][None]) for p in labels if not lo < periods[p][None][0] < hi]
        for p, (v, row) in bad:
            errors.append(ImplausibleE0(f"e0 {v} outside ({lo}, {hi})", row=row, key=(country, sex.value, p)))
        if not bad:
            slices[(country, sex)] = (np.array(labels), values)
    return E0Series(slices)


def _raise_first(errors):
    if errors:
        raise errors[0]


def read_mortality(path, schema=None, grid=DEFAULT_GRID):
    """Load a mortality file, returning ``(surface, errors)`` without raising."""
    errors = []
    records = _read_table(path, "mortality", schema, errors)
    table = _collect_slices(records, "mortality", grid, errors)
    return _build_mortality(table, grid, errors), errors


def read_assaf(path, schema=None, grid=DEFAULT_GRID):
    errors = []
    records = _read_table(path, "assaf", schema, errors)
    table = _collect_slices(records, "assaf", grid, errors)
    return _build_assaf(table, grid, errors), errors


def read_e0(path, schema=None, bounds=(20.0, 100.0)):
    errors = []
    records = _read_table(path, "e0", schema, errors)
    table = _collect_slices(records, "e0", None, errors)
    return _build_e0(table, errors, bounds), errors


def load_mortality_surface(path, schema=None, grid=DEFAULT_GRID):
    """Load and validate a mortality file.

    Raises the first invariant violation found (``MissingAgeGroup``,
    ``NegativeRate``, ``DuplicateKey``, ``ParseError`` ...); errors carry the
    offending 1-based file row where one exists.
    """
    surface, errors = read_mortality(path, schema, grid)
    _raise_first(errors)
    return surface


def load_assaf_surface(path, schema=None, grid=DEFAULT_GRID):
    surface, errors = read_assaf(path, schema, grid)
    _raise_first(errors)
    return surface


def load_e0_series(path, schema=None, bounds=(20.0, 100.0)):
    series, errors = read_e0(path, schema, bounds)
    _raise_first(errors)
    return series


def validate_files(mortality=None, assaf=None, e0=None, schemas=None):
    """Run every loader and return the full list of violations."""
    schemas = schemas or {}
    report = []
    for kind, path, reader in (("mortality", mortality, read_mortality), ("assaf", assaf, read_assaf), ("e0", e0, read_e0)):
        if path is None:
            continue
        _, errors = reader(path, schemas.get(kind))
        report += [{"file": str(path), "kind": kind, **err.to_record()} for err in errors]
    return report


def write_surface(surface, path):
    surface.to_frame(surface.value_name).to_csv(path, index=False)


def write_e0_series(series, path, value_name="e0"):
    series.to_frame(value_name).to_csv(path, index=False)


# ---------------------------------------------------------- ASSAF age rules

def harmonize_assaf_ages(raw, full_grid=DEFAULT_GRID):
    """Spread the nine core ASSAF groups over the full age grid.

    Groups below 40 get zero; every group from 85 upward repeats the 80-84
    value.  ``raw`` maps age lower bound to fraction and may also carry the
    already-harmonized full grid (the operation is idempotent).
    """
    missing = [x for x in ASSAF_AGES if x not in raw]
    if missing:
        raise MissingCoreGroup(f"ASSAF missing core age groups {missing}")
    core = {x: float(raw[x]) for x in ASSAF_AGES}
    for x, y in core.items():
        if not (0.0 <= y < 1.0) or not np.isfinite(y):
            raise OutOfRangeFraction(f"ASSAF {y} for age {x} outside [0, 1)")
    out = np.zeros(len(full_grid))
    for j, g in enumerate(full_grid):
        if g.lower < ASSAF_AGES[0]:
            out[j] = 0.0
        elif g.lower >= ASSAF_AGES[-1]:
            out[j] = core[ASSAF_AGES[-1]]
        elif g.lower in core:
            out[j] = core[g.lower]
        else:
            raise MissingCoreGroup(f"age group {g} does not align with the 5-year ASSAF groups")
    return out


def core_assaf(values, grid=DEFAULT_GRID):
    """Pick the nine core ASSAF columns out of full-grid values (last axis)."""
    lowers = [g.lower for g in grid]
    idx = [lowers.index(x) for x in ASSAF_AGES]
    return np.asarray(values)[..., idx]


def expand_core(core, grid=DEFAULT_GRID):
    """Vectorized inverse of :func:`core_assaf` (last axis 9 -> full grid)."""
    core = np.asarray(core, dtype=float)
    lowers = np.array([g.lower for g in grid])
    pos = np.clip((lowers - ASSAF_AGES[0]) // 5, 0, len(ASSAF_AGES) - 1)
    out = core[..., pos]
    out[..., lowers < ASSAF_AGES[0]] = 0.0
    return out


# ------------------------------------------------------- age-cohort matrix

@dataclass(frozen=True)
class AgeCohortMatrix:
    """ASSAF re-indexed by (age, birth cohort); NaN marks a missing cell."""

    ages: tuple
    cohorts: np.ndarray
    values: np.ndarray

    @property
    def observed(self):
        return ~np.isnan(self.values)

    @property
    def n_obs(self):
        return int(self.observed.sum())

    def cell(self, age, cohort):
        i = self.ages.index(age)
        j = np.flatnonzero(self.cohorts == cohort)
        if j.size == 0:
            return None
        v = self.values[i, j[0]]
        return None if np.isnan(v) else float(v)

    def periods(self):
        i, j = np.nonzero(self.observed)
        return np.unique(self.cohorts[j] + np.asarray(self.ages)[i])

    def to_period_matrix(self):
        """Return ``(periods, core)`` with core shaped periods x 9."""
        periods = self.periods()
        out = np.full((periods.size, len(self.ages)), np.nan)
        for i, x in enumerate(self.ages):
            for j, c in enumerate(self.cohorts):
                if self.observed[i, j]:
                    out[np.searchsorted(periods, c + x), i] = self.values[i, j]
        return periods, out


def age_cohort_from_core(periods, core, ages=ASSAF_AGES):
    periods = np.asarray(periods, dtype=int)
    if periods.size == 0:
        raise EmptySlice("no periods observed")
    ages_arr = np.asarray(ages)
    cohorts = np.arange(periods.min() - ages_arr.max(), periods.max() - ages_arr.min() + 1, 5)
    values = np.full((len(ages), cohorts.size), np.nan)
    for p_idx, p in enumerate(periods):
        for i, x in enumerate(ages):
            values[i, (p - x - cohorts[0]) // 5] = core[p_idx, i]
    return AgeCohortMatrix(tuple(ages), cohorts, values)


def build_age_cohort_matrix(surface, country, sex="male"):
    """Re-index one country's ASSAF slice by age and birth cohort ``c = t - x``."""
    sl = surface.get(country, sex)
    if sl.periods.size == 0:
        raise EmptySlice(f"no periods for {country}")
    return age_cohort_from_core(sl.periods, core_assaf(sl.values, surface.grid))


def assaf_surface_from_core(core_by_key, grid=DEFAULT_GRID):
    """Assemble an AssafSurface from ``{(country, sex): (periods, core)}``."""
    slices = {}
    for (country, sex), (periods, core) in core_by_key.items():
        slices[(country, Sex.parse(sex))] = Slice(np.asarray(periods).copy(), expand_core(core, grid))
    return AssafSurface(grid, slices)
