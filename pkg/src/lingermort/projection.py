"""Stochastic projection of cause-level mortality with jump scenarios.

Paths evolve the fitted improvement dynamics forward from the last observed
year: two diffusion trends, continued decay of the in-sample shock, newly
arriving shocks with the fitted frequency/severity, and optional injected
scenario shocks.  Randomness is counter-based per (seed, path, purpose), so
any path can be reproduced in isolation and scenario variants share their
diffusion draws with the baseline.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from ._kernels import accumulate_paths, cohort_survival
from .errors import (
    AgeOutOfRangeError,
    HorizonExceedsPathError,
    HorizonTooShortError,
    InvalidScenarioError,
    UnknownScenarioError,
)
from .model import lingering_weight
from .panel import log_rate_interpolator

#  purpose tags for the counter-based streams
_P_ETA = 1
_P_XI = 2
_P_JUMP_TIMES = 3
_P_JUMP_SIZES = 4
_P_INJECT = 5
_P_NOISE = 6


@dataclass(frozen=True)
class InjectedShock:
    """A scenario shock applied to selected causes/ages with annual
    probability `prob`.  kind 'permanent' shifts the log level for good,
    'transitory' shifts one year and reverses, 'lingering' decays with the
    given kernel shape."""

    kind: str
    cause: int
    log_shift: float
    prob: float
    age_lo: float | None = None
    age_hi: float | None = None
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("permanent", "transitory", "lingering"):
            raise InvalidScenarioError(f"unknown shock kind {self.kind!r}")
        if not 0.0 <= self.prob <= 1.0:
            raise InvalidScenarioError("shock probability must be in [0, 1]")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    p_multiplier: float = 1.0
    severity_scale: float = 1.0
    zero_jump_prob: bool = False
    keep_insample_decay: bool = True
    shocks: tuple = ()

    def __post_init__(self):
        if self.p_multiplier < 0 or self.severity_scale < 0:
            raise InvalidScenarioError("scenario multipliers must be >= 0")


_SCENARIOS = {
    "baseline": lambda: ScenarioSpec("baseline"),
    "no_new_jumps": lambda: ScenarioSpec("no_new_jumps", zero_jump_prob=True),
    "frequent_mild": lambda: ScenarioSpec("frequent_mild", p_multiplier=4.0,
                                          severity_scale=0.5),
    "cause_reduction": lambda: ScenarioSpec(
        "cause_reduction",
        shocks=(InjectedShock("permanent", cause=1, log_shift=np.log(0.5),
                              prob=0.01),)),
    "midage_catastrophe": lambda: ScenarioSpec(
        "midage_catastrophe",
        shocks=(InjectedShock("transitory", cause=4, log_shift=np.log(10.0),
                              prob=0.01, age_lo=35.0, age_hi=65.0),)),
}

SCENARIO_NAMES = tuple(_SCENARIOS)

# short roman labels accepted as synonyms
_SCENARIO_ALIASES = {
    "I": "no_new_jumps",
    "II": "frequent_mild",
    "III": "cause_reduction",
    "IV": "midage_catastrophe",
}


def make_scenario(name, **overrides):
    """Build a named scenario, optionally overriding its fields."""
    try:
        spec = _SCENARIOS[_SCENARIO_ALIASES.get(name, name)]()
    except KeyError:
        raise UnknownScenarioError(
            f"unknown scenario {name!r}; choose from {SCENARIO_NAMES}")
    if overrides:
        spec = replace(spec, **overrides)
    return spec


@dataclass
class Ensemble:
    """Simulated log central rates, shape (n_paths, horizon, X, C)."""

    log_rates: np.ndarray
    years: np.ndarray
    age_labels: tuple
    cause_labels: tuple
    scenario: str
    seed: int
    jump_year: int

    @property
    def n_paths(self):
        return self.log_rates.shape[0]

    @property
    def horizon(self):
        return self.log_rates.shape[1]

    def all_cause_log_rates(self):
        return np.log(np.sum(np.exp(self.log_rates), axis=3))


def _stream(seed, path, purpose):
    return Generator(Philox(SeedSequence((int(seed), int(path), int(purpose)))))


def _shock_age_mask(shock, age_axis):
    if shock.age_lo is None and shock.age_hi is None:
        return np.ones(len(age_axis), dtype=bool)
    mask = np.zeros(len(age_axis), dtype=bool)
    for i, (lo, hi) in enumerate(age_axis.bounds):
        lo_ok = shock.age_lo is None or lo >= shock.age_lo
        hi_ok = shock.age_hi is None or (hi is not None and hi <= shock.age_hi)
        mask[i] = lo_ok and hi_ok
    return mask


def _kernel_increments(horizon, alpha, beta, gamma):
    """pi(tau) - pi(tau - 1) for tau = 0..horizon-1 (a shock at offset s
    contributes increment[t - s] to the year-t log-rate change)."""
    taus = np.arange(horizon, dtype=float)
    pi = lingering_weight(taus, alpha, beta, gamma)
    pim1 = lingering_weight(taus - 1.0, alpha, beta, gamma)
    return pi - pim1


def project(fit_result, n_paths, horizon, scenario=None, seed=0,
            include_noise=False, age_axis=None, cause_axis=None):
    """Project log cause-level central rates forward.

    fit_result: a FitResult from the main model fit (needs params,
    final_log_rates, final_year, jump_year).  Returns an Ensemble."""
    if horizon < 1:
        raise HorizonTooShortError("horizon must be at least one year")
    spec = scenario or make_scenario("baseline")
    if isinstance(spec, str):
        spec = make_scenario(spec)
    params = fit_result.params
    X, C = params.X, params.C
    XC = X * C
    logm0 = np.asarray(fit_result.final_log_rates, float).T.ravel()  # c*X+x
    u1 = np.tile(params.B, C)
    u2 = np.repeat(params.phi, X) * np.tile(params.b, C)
    mu_flat = params.mu_flat

    p_eff = 0.0 if spec.zero_jump_prob else min(params.p * spec.p_multiplier, 1.0)

    # continued decay of the in-sample shock (severity at the fitted mean)
    tau0 = fit_result.final_year - fit_result.jump_year
    insample = np.zeros((horizon, XC))
    if spec.keep_insample_decay and tau0 >= 0:
        for c in range(C):
            taus = tau0 + 1 + np.arange(horizon, dtype=float)
            pi = lingering_weight(taus, params.alpha[c], params.beta[c],
                                  params.gamma[c])
            pim1 = lingering_weight(taus - 1.0, params.alpha[c], params.beta[c],
                                    params.gamma[c])
            insample[:, c * X:(c + 1) * X] = np.outer(pi - pim1, params.mu[:, c])

    # per-cause kernel increment tables for new in-model shocks
    kernel_inc = np.stack([
        _kernel_increments(horizon, params.alpha[c], params.beta[c],
                           params.gamma[c]) for c in range(C)])   # (C, H)

    shock_masks = []
    shock_kernels = []
    if spec.shocks and age_axis is None:
        raise InvalidScenarioError(
            "injected shocks need the panel age axis to resolve age ranges")
    for shock in spec.shocks:
        if not 0 <= shock.cause < C:
            raise InvalidScenarioError(f"shock cause {shock.cause} out of range")
        shock_masks.append(_shock_age_mask(shock, age_axis))
        if shock.kind == "permanent":
            ker = np.zeros(horizon)
            ker[0] = 1.0
        elif shock.kind == "transitory":
            ker = np.zeros(horizon)
            ker[0] = 1.0
            if horizon > 1:
                ker[1] = -1.0
        else:
            ker = _kernel_increments(horizon, shock.alpha, shock.beta,
                                     shock.gamma)
        shock_kernels.append(ker)

    incr = np.empty((n_paths, horizon, XC))
    for i in range(n_paths):
        eta = _stream(seed, i, _P_ETA).normal(0.0, params.sigma_eta, horizon)
        xi = _stream(seed, i, _P_XI).normal(0.0, params.sigma_xi, horizon)
        path_incr = (np.outer(params.D + eta, u1)
                     + np.outer(params.d + xi, u2)
                     + insample)
        if p_eff > 0:
            u = _stream(seed, i, _P_JUMP_TIMES).random(horizon)
            sizes = _stream(seed, i, _P_JUMP_SIZES)
            for s in np.nonzero(u < p_eff)[0]:
                sev = (mu_flat * spec.severity_scale
                       + sizes.normal(0.0, params.sigma_J, XC))
                span = horizon - s
                for c in range(C):
                    path_incr[s:, c * X:(c + 1) * X] += np.outer(
                        kernel_inc[c, :span], sev[c * X:(c + 1) * X])
        if spec.shocks:
            uinj = _stream(seed, i, _P_INJECT).random((len(spec.shocks), horizon))
            for j, shock in enumerate(spec.shocks):
                mask = shock_masks[j]
                ker = shock_kernels[j]
                c = shock.cause
                for s in np.nonzero(uinj[j] < shock.prob)[0]:
                    span = horizon - s
                    path_incr[s:, c * X:(c + 1) * X] += (
                        shock.log_shift * np.outer(ker[:span], mask))
        if include_noise:
            e = _stream(seed, i, _P_NOISE).normal(0.0, params.sigma_e,
                                                  (horizon + 1, XC))
            path_incr += np.diff(e, axis=0)
        incr[i] = path_incr

    log_rates_flat = accumulate_paths(logm0, incr)          # (P, H, XC)
    log_rates = log_rates_flat.reshape(n_paths, horizon, C, X).transpose(0, 1, 3, 2)
    years = fit_result.final_year + 1 + np.arange(horizon)
    return Ensemble(log_rates=log_rates, years=years,
                    age_labels=tuple(age_axis.labels) if age_axis is not None
                    else tuple(f"x{j}" for j in range(X)),
                    cause_labels=tuple(cause_axis.causes) if cause_axis is not None
                    else tuple(f"c{j}" for j in range(C)),
                    scenario=spec.name, seed=seed,
                    jump_year=fit_result.jump_year)


# ---------------------------------------------------------------------------
# Survival along cohort diagonals
# ---------------------------------------------------------------------------

def cohort_hazards(ensemble, issue_age, midpoints, horizon=None):
    """All-cause hazards along the cohort diagonal: age issue_age + t - 1
    during projection year t.  Returns (n_paths, horizon)."""
    H = ensemble.horizon if horizon is None else horizon
    if H > ensemble.horizon:
        raise HorizonExceedsPathError(
            f"horizon {H} exceeds simulated {ensemble.horizon} years")
    ages = issue_age + np.arange(H, dtype=float)
    if ages[0] < 0:
        raise AgeOutOfRangeError("issue age must be non-negative")
    W = log_rate_interpolator(midpoints, ages)               # (H, X)
    lr = ensemble.log_rates[:, :H, :, :]
    # interpolate on the log scale per cause, then sum the cause hazards
    hz = np.zeros((ensemble.n_paths, H))
    for c in range(lr.shape[3]):
        logm_c = lr[:, :, :, c]                              # (P, H, X)
        interp = np.einsum("tx,ptx->pt", W, logm_c)
        hz += np.exp(interp)
    return hz


def survival_curves(ensemble, issue_age, midpoints, horizon=None):
    """Cohort survival probabilities S(t), t = 1..horizon, per path."""
    hz = cohort_hazards(ensemble, issue_age, midpoints, horizon)
    return cohort_survival(hz)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def export_ensemble(ensemble, path, sidecar_path=None):
    """Write an ensemble to gzip CSV (long format) plus a JSON sidecar."""
    # fixed gzip mtime so identical ensembles give identical bytes
    with open(path, "wb") as raw, \
            gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as gz, \
            io.TextIOWrapper(gz, encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "year", "age_group", "cause", "log_rate"])
        P, H, X, C = ensemble.log_rates.shape
        for p in range(P):
            for t in range(H):
                for x in range(X):
                    for c in range(C):
                        writer.writerow([
                            p, int(ensemble.years[t]),
                            ensemble.age_labels[x], ensemble.cause_labels[c],
                            repr(float(ensemble.log_rates[p, t, x, c]))])
    meta = {"format_version": 1, "scenario": ensemble.scenario,
            "seed": ensemble.seed, "n_paths": int(P), "horizon": int(H),
            "years": [int(y) for y in ensemble.years],
            "age_groups": list(ensemble.age_labels),
            "causes": list(ensemble.cause_labels),
            "jump_year": int(ensemble.jump_year)}
    if sidecar_path is None:
        sidecar_path = str(path) + ".json"
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    return sidecar_path


def load_ensemble(path, sidecar_path=None):
    if sidecar_path is None:
        sidecar_path = str(path) + ".json"
    with open(sidecar_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    P, H = meta["n_paths"], meta["horizon"]
    X, C = len(meta["age_groups"]), len(meta["causes"])
    aidx = {a: i for i, a in enumerate(meta["age_groups"])}
    cidx = {c: i for i, c in enumerate(meta["causes"])}
    yidx = {y: i for i, y in enumerate(meta["years"])}
    lr = np.empty((P, H, X, C))
    with gzip.open(path, "rt", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            p, y, a, c, v = row
            lr[int(p), yidx[int(y)], aidx[a], cidx[c]] = float(v)
    return Ensemble(log_rates=lr, years=np.asarray(meta["years"]),
                    age_labels=tuple(meta["age_groups"]),
                    cause_labels=tuple(meta["causes"]),
                    scenario=meta["scenario"], seed=meta["seed"],
                    jump_year=meta["jump_year"])
