"""Valuation and hedging of survivorship-linked products on simulated paths.

Present values are computed path by path from cohort survival curves, the
notional is scaled so the mean PV is 100, and risk measures are reported on
the mean-adjusted distribution.  A static natural hedge mixes the annuity
and insurance books with the variance-minimizing weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import gaussian_kde

from .errors import (
    DegenerateVarianceError,
    DimensionMismatchError,
    HorizonTooShortError,
    SampleTooSmallError,
)
from ._kernels import cohort_survival
from .panel import log_rate_interpolator


@dataclass(frozen=True)
class ProductSpec:
    """Product terms.  The annuity pays 1/yr in arrears for `term` years
    after a `deferral` period; the insurance pays 1 at the end of the year
    of death within `term` years.  Valuation discounts at flat `rate`."""

    kind: str
    issue_age: int = 35
    deferral: int = 30
    term: int = 30
    rate: float = 0.03

    def __post_init__(self):
        if self.kind not in ("annuity", "insurance"):
            raise ValueError(f"unknown product kind {self.kind!r}")
        if self.term < 1:
            raise ValueError("term must be at least one year")

    @property
    def horizon(self):
        if self.kind == "annuity":
            return self.deferral + self.term
        return self.term


DEFAULT_ANNUITY = ProductSpec("annuity", issue_age=35, deferral=30, term=30)
DEFAULT_INSURANCE = ProductSpec("insurance", issue_age=35, deferral=0, term=30)


@dataclass
class PVDistribution:
    """Per-path present values with the mean-100 notional scaling."""

    spec: ProductSpec
    values: np.ndarray            # scaled PVs, mean 100
    face: float                   # notional applied to reach mean 100
    label: str = ""

    @property
    def centered(self):
        return self.values - self.values.mean()


def survival_from_log_rates(log_rates, issue_age, midpoints, horizon):
    """Cohort survival curves from simulated log rates.

    log_rates: (P, H, X) all-cause or (P, H, X, C) cause-level band log
    rates; hazards are interpolated to single ages on the log scale (per
    cause, then summed)."""
    log_rates = np.asarray(log_rates, float)
    if log_rates.ndim == 3:
        log_rates = log_rates[:, :, :, None]
    P, H = log_rates.shape[:2]
    if horizon > H:
        raise HorizonTooShortError(
            f"valuation needs {horizon} simulated years, have {H}")
    ages = issue_age + np.arange(horizon, dtype=float)
    W = log_rate_interpolator(midpoints, ages)
    hz = np.zeros((P, horizon))
    for c in range(log_rates.shape[3]):
        interp = np.einsum("tx,ptx->pt", W, log_rates[:, :horizon, :, c])
        hz += np.exp(interp)
    return cohort_survival(hz)


def _pv_annuity(surv, spec):
    t = np.arange(spec.deferral + 1, spec.deferral + spec.term + 1)
    disc = (1.0 + spec.rate) ** (-t.astype(float))
    return surv[:, t - 1] @ disc


def _pv_insurance(surv, spec):
    S = np.concatenate([np.ones((surv.shape[0], 1)), surv[:, :spec.term]], axis=1)
    t = np.arange(spec.term)
    disc = (1.0 + spec.rate) ** (-(t + 1.0))
    return (S[:, :-1] - S[:, 1:]) @ disc


def value_product(surv, spec, label=""):
    """Path PVs scaled so the sample mean is 100."""
    if surv.shape[1] < spec.horizon:
        raise HorizonTooShortError(
            f"need {spec.horizon} survival years, have {surv.shape[1]}")
    raw = _pv_annuity(surv, spec) if spec.kind == "annuity" else _pv_insurance(surv, spec)
    mean = float(raw.mean())
    if mean == 0:
        raise DegenerateVarianceError("degenerate product: zero mean PV")
    face = 100.0 / mean
    return PVDistribution(spec=spec, values=face * raw, face=face, label=label)


def value_annuity(surv, spec=None, label="annuity"):
    return value_product(surv, spec or DEFAULT_ANNUITY, label)


def value_insurance(surv, spec=None, label="insurance"):
    return value_product(surv, spec or DEFAULT_INSURANCE, label)


# ---------------------------------------------------------------------------
# Risk measures
# ---------------------------------------------------------------------------

def risk_measures(values, levels=(0.05, 0.95)):
    """Summary of the mean-adjusted PV sample.

    VaR is the linear-interpolation quantile; CTE at level q averages the
    observations at or beyond the q-quantile (lower tail for q <= 0.5,
    upper tail otherwise).  sd uses ddof=1; skewness is m3 / sd^3."""
    values = np.asarray(values, float)
    if values.size < 100:
        raise SampleTooSmallError(
            f"need at least 100 paths for risk measures, got {values.size}")
    x = values - values.mean()
    sd = float(x.std(ddof=1))
    # a point mass has no defined shape; report skewness as not-available
    skew = float(np.mean(x ** 3) / sd ** 3) if sd > 0 else float("nan")
    out = {"mean": float(values.mean()), "sd": sd, "skewness": skew}
    for q in levels:
        v = float(np.quantile(x, q, method="linear"))
        out[f"var_{_qlabel(q)}"] = v
        if q <= 0.5:
            tail = x[x <= v]
        else:
            tail = x[x >= v]
        out[f"cte_{_qlabel(q)}"] = float(tail.mean()) if tail.size else v
    return out


def _qlabel(q):
    return f"{100.0 * q:g}".replace(".", "_")


# ---------------------------------------------------------------------------
# Hedging
# ---------------------------------------------------------------------------

@dataclass
class HedgeResult:
    weight: float                 # clamped to [0, 1]
    weight_raw: float
    portfolio: PVDistribution
    annuity_measures: dict
    insurance_measures: dict
    portfolio_measures: dict


def optimal_hedge(annuity, insurance):
    """Variance-minimizing static mix of the two books.

    weight w applies to the annuity PV, 1-w to the insurance PV; the
    analytic minimizer is (Var I - Cov) / (Var A + Var I - 2 Cov)."""
    a = np.asarray(annuity.values, float)
    ins = np.asarray(insurance.values, float)
    if a.shape != ins.shape:
        raise DimensionMismatchError("annuity and insurance paths must align")
    if a.size < 2:
        raise SampleTooSmallError("need at least two paths to hedge")
    va = float(np.var(a, ddof=1))
    vi = float(np.var(ins, ddof=1))
    cov = float(np.cov(a, ins, ddof=1)[0, 1])
    denom = va + vi - 2.0 * cov
    if denom <= 0:
        raise DegenerateVarianceError("hedge variance objective is degenerate")
    w_raw = (vi - cov) / denom
    w = min(max(w_raw, 0.0), 1.0)
    port = w * a + (1.0 - w) * ins
    pdist = PVDistribution(spec=annuity.spec, values=port, face=1.0,
                           label="portfolio")
    return HedgeResult(weight=w, weight_raw=w_raw, portfolio=pdist,
                       annuity_measures=risk_measures(a),
                       insurance_measures=risk_measures(ins),
                       portfolio_measures=risk_measures(port))


def hedge_comparison(main_pair, model_pairs=None):
    """Hedge weights across models, portfolio statistics on one book.

    main_pair is the (annuity, insurance) PVDistribution pair from the
    reference ensemble; model_pairs maps label -> pair from each comparison
    model's own ensemble.  Every model's weight is calibrated on its own
    pair, but all portfolio statistics are evaluated on the reference pair
    at that weight, so the rows differ only through the chosen mix."""
    a_main = np.asarray(main_pair[0].values, float)
    i_main = np.asarray(main_pair[1].values, float)
    rows = {}
    entries = {"main": main_pair}
    entries.update(model_pairs or {})
    for label, (ann, ins) in entries.items():
        hr = optimal_hedge(ann, ins)
        port = hr.weight * a_main + (1.0 - hr.weight) * i_main
        rows[label] = {"weight": hr.weight, "weight_raw": hr.weight_raw,
                       "portfolio": risk_measures(port)}
    return rows


# ---------------------------------------------------------------------------
# Scenario comparison report
# ---------------------------------------------------------------------------

def whatif_report(distributions, grid_points=201):
    """Risk measures plus a common-grid density sketch per scenario.

    distributions maps label -> per-path PV array (or PVDistribution).
    The densities come from a Gaussian KDE of the mean-adjusted samples so
    scenarios can be overlaid on one axis."""
    samples = {}
    for label, d in distributions.items():
        v = np.asarray(getattr(d, "values", d), float)
        if v.size < 2:
            raise SampleTooSmallError(f"scenario {label!r} has too few paths")
        samples[label] = v - v.mean()
    lo = min(s.min() for s in samples.values())
    hi = max(s.max() for s in samples.values())
    pad = 0.05 * (hi - lo if hi > lo else 1.0)
    grid = np.linspace(lo - pad, hi + pad, grid_points)
    report = {"grid": grid, "scenarios": {}}
    for label, s in samples.items():
        measures = risk_measures(s)
        if s.std(ddof=1) > 0:
            kde = gaussian_kde(s)(grid)
        else:
            kde = np.zeros_like(grid)
        report["scenarios"][label] = {"measures": measures, "kde": kde}
    return report
