"""Cause-of-death mortality panels: loading, validation, and descriptive statistics.

The canonical ingestion format is a long CSV with header
``age_group,year,cause,deaths,population``.  A CDC-WONDER tab-delimited
adapter normalizes vendor exports into that format.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    AgeOutOfRangeError,
    BaselineOutOfRangeError,
    EmptyExportError,
    InconsistentExposureError,
    MalformedRowError,
    MissingCellError,
    NegativeDeathsError,
    NonPositiveExposureError,
    RaggedYearsError,
    UnknownEraError,
    YearOutOfRangeError,
    ZeroBaselineRateError,
    ZeroRateError,
)

_AGE_CLOSED = re.compile(r"^(\d+)\s*-\s*(\d+)$")
_AGE_OPEN = re.compile(r"^(\d+)\s*\+$")
_AGE_UNDER = re.compile(r"^<\s*(\d+)$")

#: Midpoint offset (years) added to the lower bound of an open-ended band.
OPEN_BAND_OFFSET = 5.0


@dataclass(frozen=True)
class AgeAxis:
    """Ordered, contiguous age bands with representative midpoints."""

    labels: tuple[str, ...]
    bounds: tuple[tuple[float, float | None], ...]  # (lo, hi), hi=None if open
    midpoints: tuple[float, ...]

    def __post_init__(self):
        if not self.labels:
            raise ValueError("age axis needs at least one band")
        for i, (lo, hi) in enumerate(self.bounds):
            if hi is not None and hi <= lo:
                raise ValueError(f"band {self.labels[i]!r} is empty")
            if hi is None and i != len(self.bounds) - 1:
                raise ValueError("only the last band may be open-ended")
            if i > 0:
                prev_hi = self.bounds[i - 1][1]
                if prev_hi is None or prev_hi != lo:
                    raise ValueError("age bands must be contiguous and increasing")

    @classmethod
    def from_labels(cls, labels, open_band_offset=OPEN_BAND_OFFSET):
        bounds = []
        mids = []
        for lab in labels:
            m = _AGE_UNDER.match(lab.strip())
            if m:
                hi = float(m.group(1))
                bounds.append((0.0, hi))
                mids.append(0.5 * hi)
                continue
            m = _AGE_CLOSED.match(lab.strip())
            if m:
                # "1-4" style labels are inclusive of the upper age, so the
                # band really ends where the next one starts.
                lo, hi_excl = float(m.group(1)), float(m.group(2)) + 1.0
                bounds.append((lo, hi_excl))
                mids.append(0.5 * (lo + hi_excl))
                continue
            m = _AGE_OPEN.match(lab.strip())
            if m:
                lo = float(m.group(1))
                bounds.append((lo, None))
                mids.append(lo + open_band_offset)
                continue
            raise ValueError(f"unparseable age band label: {lab!r}")
        return cls(tuple(lab.strip() for lab in labels), tuple(bounds), tuple(mids))

    def __len__(self):
        return len(self.labels)

    def index_of_age(self, age):
        for i, (lo, hi) in enumerate(self.bounds):
            if age >= lo and (hi is None or age < hi):
                return i
        raise AgeOutOfRangeError(f"age {age} outside the axis")


@dataclass(frozen=True)
class CauseAxis:
    """Ordered cause-of-death groups; exactly one residual catch-all."""

    causes: tuple[str, ...]
    residual: int = -1  # index of the catch-all cause

    def __post_init__(self):
        if len(set(self.causes)) != len(self.causes):
            raise ValueError("cause labels must be unique")
        object.__setattr__(self, "residual", self.residual % len(self.causes))

    def __len__(self):
        return len(self.causes)


#: The six-group cause axis used for CDC WONDER exports.
SIX_CAUSE_AXIS = CauseAxis(
    ("Infectious", "Cancer", "Circulatory", "Respiratory", "External", "Other"),
    residual=5,
)

# ICD chapter ranges per coding era, keyed on a sortable (letter_rank, number)
# scalar so letter ranges like V00-Y89 compare naturally.
_ICD10_RANGES = [
    ("A00", "B99", 0),
    ("C00", "D48", 1),
    ("I00", "I99", 2),
    ("J00", "J98", 3),
    ("V00", "Y89", 4),
]
_ICD9_RANGES = [
    ((1, 139), 0),
    ((140, 239), 1),
    ((390, 437), 2),
    ((460, 519), 3),
]
_ICD9_E_RANGE = ((800, 999), 4)
_ICD8_RANGES = [
    ((1, 136), 0),
    ((140, 239), 1),
    ((390, 458), 2),
    ((460, 519), 3),
]
_ICD8_E_RANGE = ((810, 999), 4)

ERAS = ("icd8", "icd9", "icd10")


def _icd10_key(code):
    m = re.match(r"^([A-Z])(\d{1,2})", code.strip().upper())
    if m is None:
        return None
    return (ord(m.group(1)) - ord("A")) * 100 + int(m.group(2))


def map_icd_code(code, era):
    """Map a single ICD code to a cause index (0-based) of SIX_CAUSE_AXIS."""
    era = era.lower().replace("-", "")
    if era not in ERAS:
        raise UnknownEraError(f"unknown coding era {era!r}; expected one of {ERAS}")
    code = str(code).strip()
    if era == "icd10":
        key = _icd10_key(code)
        if key is not None:
            for lo, hi, cause in _ICD10_RANGES:
                if _icd10_key(lo) <= key <= _icd10_key(hi):
                    return cause
        return SIX_CAUSE_AXIS.residual
    ranges = _ICD9_RANGES if era == "icd9" else _ICD8_RANGES
    e_range = _ICD9_E_RANGE if era == "icd9" else _ICD8_E_RANGE
    m = re.match(r"^E(\d+)", code.upper())
    if m:
        (lo, hi), cause = e_range
        if lo <= int(m.group(1)) <= hi:
            return cause
        return SIX_CAUSE_AXIS.residual
    m = re.match(r"^(\d+)", code)
    if m:
        num = int(m.group(1))
        for (lo, hi), cause in ranges:
            if lo <= num <= hi:
                return cause
    return SIX_CAUSE_AXIS.residual


@dataclass(frozen=True)
class MortalityPanel:
    """Dense deaths/exposures panel with derived rates.

    deaths has shape (X, T, C); exposures (X, T); rates (X, T, C) with
    ``m = D / E``.  All arrays are immutable.
    """

    age_axis: AgeAxis
    cause_axis: CauseAxis
    years: np.ndarray
    deaths: np.ndarray
    exposures: np.ndarray
    rates: np.ndarray = field(default=None)

    def __post_init__(self):
        years = np.asarray(self.years, dtype=int)
        deaths = np.asarray(self.deaths, dtype=float)
        exposures = np.asarray(self.exposures, dtype=float)
        X, C = len(self.age_axis), len(self.cause_axis)
        T = years.size
        if deaths.shape != (X, T, C):
            raise ValueError(f"deaths shape {deaths.shape} != {(X, T, C)}")
        if exposures.shape != (X, T):
            raise ValueError(f"exposures shape {exposures.shape} != {(X, T)}")
        if T > 1 and np.any(np.diff(years) != 1):
            raise RaggedYearsError("years must be consecutive integers")
        if np.any(exposures <= 0):
            raise NonPositiveExposureError("exposures must be strictly positive")
        if np.any(deaths < 0):
            raise NegativeDeathsError("death counts must be non-negative")
        rates = deaths / exposures[:, :, None]
        if not np.all(np.isfinite(rates)):
            raise ValueError("derived rates are not finite")
        for name, arr in (("years", years), ("deaths", deaths),
                          ("exposures", exposures), ("rates", rates)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self):
        return self.rates.shape

    def year_index(self, year):
        idx = np.searchsorted(self.years, year)
        if idx >= self.years.size or self.years[idx] != year:
            raise YearOutOfRangeError(f"year {year} not in panel "
                                      f"[{self.years[0]}, {self.years[-1]}]")
        return int(idx)

    def window(self, start=None, end=None):
        """Restrict to years start..end inclusive."""
        start = self.years[0] if start is None else start
        end = self.years[-1] if end is None else end
        i0, i1 = self.year_index(start), self.year_index(end)
        return MortalityPanel(self.age_axis, self.cause_axis,
                              self.years[i0:i1 + 1].copy(),
                              self.deaths[:, i0:i1 + 1, :].copy(),
                              self.exposures[:, i0:i1 + 1].copy())

    def aggregate_deaths(self):
        """Cause-summed death counts, shape (X, T)."""
        return self.deaths.sum(axis=2)


@dataclass(frozen=True)
class ImprovementTensor:
    """Log mortality improvements ``ln m_t - ln m_{t-1}`` with the stacked
    vector ordering fixed as age fastest, then cause, then time."""

    z: np.ndarray           # (X, T-1, C)
    years: np.ndarray       # the T-1 comparison years (second year onward)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        years = np.asarray(self.years, dtype=int)
        if z.ndim != 3 or z.shape[1] != years.size:
            raise ValueError("z must be (X, T-1, C) aligned with years")
        z.setflags(write=False)
        years.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "years", years)

    @property
    def X(self):
        return self.z.shape[0]

    @property
    def C(self):
        return self.z.shape[2]

    @property
    def n_steps(self):
        return self.z.shape[1]

    def flat_index(self, x, t_idx, c):
        return (t_idx * self.C + c) * self.X + x

    def stacked(self):
        """Flatten to length X*C*(T-1), age fastest, then cause, then time."""
        return self.z.transpose(1, 2, 0).reshape(-1)

    @classmethod
    def from_stacked(cls, vec, X, C, years):
        z = np.asarray(vec, float).reshape(len(years), C, X).transpose(2, 0, 1)
        return cls(z, years)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

CANONICAL_COLUMNS = ("age_group", "year", "cause", "deaths", "population")


def load_canonical_csv(path, cause_axis=None):
    """Load a canonical long-format CSV into a dense MortalityPanel."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CANONICAL_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise MalformedRowError(f"missing columns: {sorted(missing)}")
        for row in reader:
            rows.append(row)
    if not rows:
        raise EmptyExportError(f"no data rows in {path}")

    age_labels = []
    for r in rows:
        if r["age_group"] not in age_labels:
            age_labels.append(r["age_group"])
    age_axis = AgeAxis.from_labels(_sort_age_labels(age_labels))
    years = np.array(sorted({int(r["year"]) for r in rows}))
    cause_labels = sorted({r["cause"] for r in rows}, key=_cause_sort_key)
    if cause_axis is None:
        if set(cause_labels) <= set(SIX_CAUSE_AXIS.causes):
            cause_axis = SIX_CAUSE_AXIS
        else:
            cause_axis = CauseAxis(tuple(cause_labels))
    cause_index = {c: i for i, c in enumerate(cause_axis.causes)}

    X, T, C = len(age_axis), years.size, len(cause_axis)
    deaths = np.full((X, T, C), np.nan)
    exposures = np.full((X, T), np.nan)
    age_index = {lab: i for i, lab in enumerate(age_axis.labels)}
    year_index = {int(y): i for i, y in enumerate(years)}

    for r in rows:
        try:
            x = age_index[r["age_group"].strip()]
            t = year_index[int(r["year"])]
            c = cause_index[r["cause"].strip()]
            d = float(r["deaths"])
            e = float(r["population"])
        except (KeyError, ValueError) as exc:
            raise MalformedRowError(f"bad row {r!r}") from exc
        deaths[x, t, c] = d
        if np.isnan(exposures[x, t]):
            exposures[x, t] = e
        elif exposures[x, t] != e:
            raise InconsistentExposureError(
                f"population differs across causes at (age={r['age_group']}, "
                f"year={r['year']}): {exposures[x, t]} vs {e}")

    holes = np.argwhere(np.isnan(deaths))
    if holes.size:
        cells = [(age_axis.labels[x], int(years[t]), cause_axis.causes[c])
                 for x, t, c in holes]
        raise MissingCellError(cells)
    return MortalityPanel(age_axis, cause_axis, years, deaths, exposures)


def _sort_age_labels(labels):
    def key(lab):
        if _AGE_UNDER.match(lab.strip()):
            return -1.0
        m = _AGE_CLOSED.match(lab.strip()) or _AGE_OPEN.match(lab.strip())
        return float(m.group(1)) if m else float("inf")
    return sorted(labels, key=key)


def _cause_sort_key(label):
    order = {c: i for i, c in enumerate(SIX_CAUSE_AXIS.causes)}
    return (order.get(label, len(order)), label)


def load_wonder_export(path, cause_axis=None, era="icd10"):
    """Collapse a CDC WONDER tab-delimited export into canonical rows.

    Returns a list of dicts with the canonical columns, ICD codes grouped
    into the six causes of SIX_CAUSE_AXIS (unmatched codes go to the
    residual cause).  Rows whose first field starts with ``Notes`` are
    footer material and skipped.
    """
    if cause_axis is None:
        cause_axis = SIX_CAUSE_AXIS
    era = era.lower().replace("-", "")
    if era not in ERAS:
        raise UnknownEraError(f"unknown coding era {era!r}; expected one of {ERAS}")

    acc = {}          # (age_group, year, cause_idx) -> deaths
    pops = {}         # (age_group, year) -> population
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None:
            raise EmptyExportError(f"{path} is empty")
        cols = {name.strip().lower(): i for i, name in enumerate(header)}

        def col(*names):
            for n in names:
                if n in cols:
                    return cols[n]
            raise MalformedRowError(f"export lacks a column among {names}")

        i_age = col("age group", "age_group", "age group code")
        i_year = col("year", "year code")
        i_icd = col("icd code", "icd_code", "cause code", "icd chapter code",
                    "cause of death code")
        i_d = col("deaths")
        i_p = col("population")

        n_data = 0
        for row in reader:
            if not row or row[0].strip().startswith("Notes"):
                continue
            try:
                age = row[i_age].strip()
                year = int(row[i_year])
                deaths = float(row[i_d])
                pop = float(row[i_p])
            except (ValueError, IndexError) as exc:
                raise MalformedRowError(f"malformed row: {row!r}") from exc
            cause = map_icd_code(row[i_icd], era)
            key = (age, year, cause)
            acc[key] = acc.get(key, 0.0) + deaths
            pk = (age, year)
            if pk in pops and pops[pk] != pop:
                raise InconsistentExposureError(
                    f"population differs within {pk}: {pops[pk]} vs {pop}")
            pops[pk] = pop
            n_data += 1
        if n_data == 0:
            raise EmptyExportError(f"no data rows in {path}")

    out = []
    ages = sorted({a for a, _ in pops}, key=lambda a: _sort_age_labels([a]))
    years = sorted({y for _, y in pops})
    for age in _sort_age_labels(list({a for a, _ in pops})):
        for year in years:
            for c in range(len(cause_axis)):
                out.append({
                    "age_group": age,
                    "year": year,
                    "cause": cause_axis.causes[c],
                    "deaths": acc.get((age, year, c), 0.0),
                    "population": pops[(age, year)],
                })
    return out


def write_canonical_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CANONICAL_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Derived statistics
# ---------------------------------------------------------------------------

def improvement_tensor(panel):
    """Z_{x,t,c} = ln m_{x,t,c} - ln m_{x,t-1,c} for the second year onward."""
    zero = np.argwhere(panel.rates == 0)
    if zero.size:
        coords = [(panel.age_axis.labels[x], int(panel.years[t]),
                   panel.cause_axis.causes[c]) for x, t, c in zero]
        raise ZeroRateError(coords)
    logm = np.log(panel.rates)
    z = logm[:, 1:, :] - logm[:, :-1, :]
    return ImprovementTensor(z, panel.years[1:])


def excess_log_mortality(panel, baseline_year):
    """Excess log mortality relative to a fixed baseline year.

    Returns (em, years, standardized) where em has shape (X, K, C) over the
    K years strictly after the baseline, and standardized (K, C) holds
    age-standardized means weighted by baseline-year exposures.
    """
    try:
        b = panel.year_index(baseline_year)
    except YearOutOfRangeError as exc:
        raise BaselineOutOfRangeError(str(exc)) from exc
    if np.any(panel.rates[:, b:, :] == 0):
        zero = np.argwhere(panel.rates[:, b:, :] == 0)
        coords = [(panel.age_axis.labels[x], int(panel.years[b + t]),
                   panel.cause_axis.causes[c]) for x, t, c in zero]
        raise ZeroRateError(coords)
    base = np.log(panel.rates[:, b, :])
    em = np.log(panel.rates[:, b + 1:, :]) - base[:, None, :]
    w = panel.exposures[:, b]
    w = w / w.sum()
    standardized = np.einsum("x,xtc->tc", w, em)
    return em, panel.years[b + 1:], standardized


def pct_change(panel, y0, y1):
    """100 * (m_{y1} - m_{y0}) / m_{y0} over (age, cause)."""
    i0, i1 = panel.year_index(y0), panel.year_index(y1)
    m0 = panel.rates[:, i0, :]
    if np.any(m0 == 0):
        raise ZeroBaselineRateError(f"zero baseline rates in year {y0}")
    return 100.0 * (panel.rates[:, i1, :] - m0) / m0


# ---------------------------------------------------------------------------
# Single-age hazards and life expectancy
# ---------------------------------------------------------------------------

def log_rate_interpolator(midpoints, ages):
    """Weight matrix W (len(ages), len(midpoints)) applying natural-cubic
    interpolation of log rates across band midpoints, with linear
    extrapolation beyond the end midpoints.

    Natural cubic splines are linear in the data, so W @ logm evaluates the
    spline for any log-rate vector.
    """
    midpoints = np.asarray(midpoints, float)
    ages = np.asarray(ages, float)
    n = midpoints.size
    W = np.empty((ages.size, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        if n >= 2:
            cs = CubicSpline(midpoints, e, bc_type="natural")
            inside = (ages >= midpoints[0]) & (ages <= midpoints[-1])
            W[inside, j] = cs(ages[inside])
            lo = ages < midpoints[0]
            hi = ages > midpoints[-1]
            # natural BC: end slopes from the spline's first derivative
            W[lo, j] = e[0] + cs(midpoints[0], 1) * (ages[lo] - midpoints[0])
            W[hi, j] = e[-1] + cs(midpoints[-1], 1) * (ages[hi] - midpoints[-1])
        else:
            W[:, j] = 1.0
    return W


def single_age_hazards(panel, year, ages):
    """All-cause hazards at single ages via per-cause log-rate interpolation."""
    t = panel.year_index(year)
    W = log_rate_interpolator(panel.age_axis.midpoints, ages)
    total = np.zeros(len(ages))
    for c in range(len(panel.cause_axis)):
        m = panel.rates[:, t, c]
        if np.all(m == 0):
            continue
        if np.any(m == 0):
            zero = np.argwhere(m == 0).ravel()
            raise ZeroRateError([(panel.age_axis.labels[x], int(year),
                                  panel.cause_axis.causes[c]) for x in zero])
        total += np.exp(W @ np.log(m))
    return total


def period_life_expectancy(panel, age, year, closure_age=110):
    """Period life expectancy at `age` in `year`.

    Hazards are interpolated to single ages, summed across causes, and the
    table is closed at `closure_age` (survivors to closure die there exactly;
    earlier deaths receive a half-year credit).
    """
    if age < panel.age_axis.bounds[0][0]:
        raise AgeOutOfRangeError(f"age {age} below the panel's first band")
    if age >= closure_age:
        raise AgeOutOfRangeError(f"age {age} at or above closure {closure_age}")
    ages = np.arange(age, closure_age)
    haz = single_age_hazards(panel, year, ages)
    surv = np.exp(-np.cumsum(haz))           # S(1..K), K = closure_age - age
    return float(surv.sum() + 0.5 * (1.0 - surv[-1]))
