"""Reference models for benchmarking: Lee-Carter and two jump extensions.

Both jump baselines work on all-cause mortality.  The period-index variant
puts a transitory shock on the Lee-Carter index; the age-profile variant
models age-specific improvements with a shared transitory shock whose age
loadings are free.  Estimation mirrors the main model: geometric latent
jump year, mixture likelihood, quasi-Newton ascent in transformed
coordinates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DimensionMismatchError, SingularCovarianceError,
                     WindowTooShortError)
from .estimation import bfgs_maximize, poisson_lee_carter
from .model import LOG2PI, SpectralEngine, enumerate_patterns, information_criteria

__all__ = ["LeeCarterFit", "CCFit", "J1Fit", "fit_lee_carter_poisson",
           "fit_cc", "fit_j1", "simulate_baseline", "load_baseline"]


# ---------------------------------------------------------------------------
# Lee-Carter
# ---------------------------------------------------------------------------

@dataclass
class LeeCarterFit:
    """Poisson log-bilinear fit on all-cause deaths with random-walk index."""

    model: str
    a: np.ndarray          # (X,)
    B: np.ndarray          # (X,) loadings, sum 1
    k: np.ndarray          # (T,) period index, mean 0
    drift: float
    sigma_k: float
    years: np.ndarray
    deviance: float

    def log_rates(self):
        return self.a[:, None] + np.outer(self.B, self.k)

    def to_dict(self):
        return {"format_version": 1, "model": self.model,
                "a": self.a.tolist(), "B": self.B.tolist(),
                "k": self.k.tolist(), "drift": self.drift,
                "sigma_k": self.sigma_k, "years": self.years.tolist(),
                "deviance": self.deviance}


def fit_lee_carter_poisson(panel, end_year=None):
    """Fit Lee-Carter on all-cause deaths of a panel, with the random-walk
    drift and innovation scale estimated from the fitted index."""
    years = panel.years
    mask = years <= (end_year if end_year is not None else years[-1])
    deaths = panel.aggregate_deaths()[:, mask]
    trend = poisson_lee_carter(deaths, panel.exposures[:, mask])
    dk = np.diff(trend.k)
    drift = float(dk.mean())
    sigma_k = float(dk.std(ddof=1)) if dk.size > 1 else 0.0
    return LeeCarterFit(model="lee_carter", a=trend.a, B=trend.B, k=trend.k,
                        drift=drift, sigma_k=sigma_k,
                        years=years[mask].copy(), deviance=trend.deviance)


# ---------------------------------------------------------------------------
# Transitory jump on the period index
# ---------------------------------------------------------------------------

def _transitory_signs(T):
    """Per-pattern +1/-1 mean factors on the T-1 index increments."""
    ell = np.zeros((T + 1, T - 1))
    for pidx, tj in enumerate(range(1, T + 1)):
        if tj >= 2:
            ell[pidx, tj - 2] = 1.0
        if tj + 1 <= T:
            ell[pidx, tj - 1] = -1.0
    return ell


@dataclass
class CCFit:
    """Transitory jump model on the Lee-Carter index increments."""

    model: str
    lc: LeeCarterFit
    drift: float
    sigma: float
    mu_J: float
    s_J: float
    p: float
    loglik: float
    aic: float
    bic: float
    n_params: int
    converged: bool

    def to_dict(self):
        return {"format_version": 1, "model": self.model,
                "lc": self.lc.to_dict(), "drift": self.drift,
                "sigma": self.sigma, "mu_J": self.mu_J, "s_J": self.s_J,
                "p": self.p, "loglik": self.loglik, "aic": self.aic,
                "bic": self.bic, "n_params": self.n_params,
                "converged": self.converged}


def _cc_loglik(theta, y, T):
    d0, lsig, muJ, lsJ, lgp = theta
    sig2 = math.exp(2.0 * lsig)
    sJ2 = math.exp(2.0 * lsJ)
    # stable log weights straight from the logit
    log_p = -np.logaddexp(0.0, -lgp)
    log_1mp = log_p - lgp
    ell = _transitory_signs(T)
    n = y.size
    terms = np.empty(T + 1)
    for i in range(T + 1):
        v = ell[i]
        r = y - d0 - muJ * v
        vv = float(v @ v)
        # rank-1 determinant and inverse on sigma^2 I + sJ^2 v v'
        denom = 1.0 + sJ2 * vv / sig2
        quad = float(r @ r) / sig2 - (sJ2 / sig2 ** 2) * float(v @ r) ** 2 / denom
        logdet = n * math.log(sig2) + math.log(denom)
        logf = -0.5 * (n * LOG2PI + logdet + quad)
        logw = i * log_1mp + log_p if i < T else T * log_1mp
        terms[i] = logw + logf
    m = terms.max()
    return float(m + np.log(np.exp(terms - m).sum()))


def fit_cc(panel, window=None, max_iter=500):
    """Fit the period-index transitory jump baseline."""
    if window is not None:
        panel = panel.window(*window)
    if panel.years.size < 5:
        raise WindowTooShortError("baseline fits need at least 5 years")
    lc = fit_lee_carter_poisson(panel)
    y = np.diff(lc.k)
    T = lc.k.size
    x0 = np.array([float(y.mean()), math.log(max(y.std(ddof=1), 1e-3)),
                   float(y.max() - y.mean()), math.log(max(y.std(ddof=1), 1e-3)),
                   math.log(1.0 / (T - 1.0))])
    res = bfgs_maximize(lambda th: _cc_loglik(th, y, T), x0,
                        max_iter=max_iter, fd_rel=1e-5, fd_floor=1e-6,
                        fd_central=True)
    d0, lsig, muJ, lsJ, lgp = res.x
    n_params = 5
    ic = information_criteria(res.fun, n_params, y.size)
    return CCFit(model="cc_transitory", lc=lc, drift=float(d0),
                 sigma=float(math.exp(lsig)), mu_J=float(muJ),
                 s_J=float(math.exp(lsJ)), p=float(1 / (1 + math.exp(-lgp))),
                 loglik=res.fun, aic=ic["aic"], bic=ic["bic"],
                 n_params=n_params, converged=res.converged)


# ---------------------------------------------------------------------------
# Age-profile transitory jump on age-specific improvements
# ---------------------------------------------------------------------------

@dataclass
class J1Fit:
    """Transitory jump with free age loadings on all-cause improvements."""

    model: str
    lc: LeeCarterFit
    D: float
    sigma_eta: float
    beta_J: np.ndarray     # (X,) jump age profile, sum 1
    mu_J: float
    sigma_J: float
    p: float
    sigma_e: float
    loglik: float
    aic: float
    bic: float
    n_params: int
    converged: bool

    def to_dict(self):
        return {"format_version": 1, "model": self.model,
                "lc": self.lc.to_dict(), "D": self.D,
                "sigma_eta": self.sigma_eta, "beta_J": self.beta_J.tolist(),
                "mu_J": self.mu_J, "sigma_J": self.sigma_J, "p": self.p,
                "sigma_e": self.sigma_e, "loglik": self.loglik,
                "aic": self.aic, "bic": self.bic, "n_params": self.n_params,
                "converged": self.converged}


def _j1_loglik(theta, Zb, B, engine):
    X = B.size
    T = engine.T
    D = theta[0]
    sig_eta = math.exp(theta[1])
    beta_J = theta[2:2 + X]
    muJ = theta[2 + X]
    sJ = math.exp(theta[3 + X])
    lgp = theta[4 + X]
    log_p = -np.logaddexp(0.0, -lgp)
    log_1mp = log_p - lgp
    sig_e = math.exp(theta[5 + X])

    c = (2.0 - engine.lam) * sig_e ** 2
    if np.any(c <= 0):
        raise SingularCovarianceError("measurement noise scale must be positive")
    # rank-1 cross-sectional trend: S_k = c_k I + sig_eta^2 B B'
    BB = float(B @ B)
    denom1 = c + sig_eta ** 2 * BB
    logdet_shared = float(np.sum((X - 1) * np.log(c) + np.log(denom1)))
    ell = _transitory_signs(T)                       # (T+1, T-1)
    terms = np.empty(T + 1)
    Zhat = engine.Q.T @ Zb                           # (Tp, X)
    for i in range(T + 1):
        r = Zb - np.outer(np.full(engine.Tp, D), B) - muJ * np.outer(ell[i], beta_J)
        Rhat = engine.Q.T @ r
        # S_k^{-1} x = x / c_k - sig_eta^2 (B.x) B / (c_k * denom1_k)
        bx = Rhat @ B
        Y = Rhat / c[:, None] - (sig_eta ** 2 * bx / (c * denom1))[:, None] * B[None, :]
        quad = float(np.sum(Rhat * Y))
        logdet = logdet_shared
        if sJ > 0 and i < T:
            v = np.outer(ell[i], beta_J)             # (Tp, X)
            vhat = engine.Q.T @ v
            bv = vhat @ B
            Sv = vhat / c[:, None] - (sig_eta ** 2 * bv / (c * denom1))[:, None] * B[None, :]
            vSv = float(np.sum(vhat * Sv))
            vSr = float(np.sum(vhat * Y))
            cap = 1.0 + sJ ** 2 * vSv
            if cap <= 0:
                raise SingularCovarianceError("jump update not positive definite")
            quad -= sJ ** 2 * vSr ** 2 / cap
            logdet += math.log(cap)
        if quad < 0:
            if quad < -1e-8 * (1.0 + abs(quad)):
                raise SingularCovarianceError("quadratic form lost positivity")
            quad = 0.0
        logf = -0.5 * (engine.n * LOG2PI + logdet + quad)
        logw = i * log_1mp + log_p if i < T else T * log_1mp
        terms[i] = logw + logf
    m = terms.max()
    return float(m + np.log(np.exp(terms - m).sum()))


def fit_j1(panel, window=None, max_iter=500):
    """Fit the age-profile transitory jump baseline on all-cause improvements.

    The Lee-Carter age loadings seed the jump profile; after the fit the
    profile is renormalized to sum 1 with the scale moved into the severity.
    """
    if window is not None:
        panel = panel.window(*window)
    if panel.years.size < 5:
        raise WindowTooShortError("baseline fits need at least 5 years")
    lc = fit_lee_carter_poisson(panel)
    m = panel.aggregate_deaths() / panel.exposures
    logm = np.log(m)
    Zb = np.diff(logm, axis=1).T                     # (T-1, X) year blocks
    X = logm.shape[0]
    T = logm.shape[1]
    engine = SpectralEngine(X, 1, T)
    dz = Zb.mean(axis=0)
    x0 = np.concatenate([
        [lc.drift], [math.log(max(lc.sigma_k, 1e-3))],
        lc.B, [float(np.abs(Zb - dz).max())],
        [math.log(0.05)], [math.log(1.0 / T / (1 - 1.0 / T))],
        [math.log(0.02)]])
    res = bfgs_maximize(lambda th: _j1_loglik(th, Zb, lc.B, engine), x0,
                        max_iter=max_iter, fd_rel=1e-5, fd_floor=1e-6,
                        fd_central=True)
    th = res.x
    beta_J = th[2:2 + X]
    muJ = float(th[2 + X])
    sJ = float(math.exp(th[3 + X]))
    s = float(beta_J.sum())
    if s != 0:
        beta_J = beta_J / s
        muJ *= s
        sJ *= abs(s)
    n_params = X + 6
    ic = information_criteria(res.fun, n_params, Zb.size)
    return J1Fit(model="j1_age_profile", lc=lc, D=float(th[0]),
                 sigma_eta=float(math.exp(th[1])), beta_J=beta_J, mu_J=muJ,
                 sigma_J=sJ, p=float(1 / (1 + math.exp(-th[4 + X]))),
                 sigma_e=float(math.exp(th[5 + X])), loglik=res.fun,
                 aic=ic["aic"], bic=ic["bic"], n_params=n_params,
                 converged=res.converged)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def _stream(seed, path, purpose):
    from numpy.random import Generator, Philox, SeedSequence
    return Generator(Philox(SeedSequence((seed, path, purpose))))


_PURPOSE_DIFFUSION = 11
_PURPOSE_JUMP_TIMES = 12
_PURPOSE_JUMP_SIZES = 13


def simulate_baseline(fit, n_paths, horizon, seed=0, suppress_jumps=False):
    """Simulate all-cause log central rates, shape (n_paths, horizon, X).

    Each path draws diffusion, jump timing, and jump severity from separate
    counter-based streams, so rerunning with suppress_jumps replays the same
    diffusion draws without the shocks."""
    if not isinstance(fit, (LeeCarterFit, CCFit, J1Fit)):
        raise TypeError(f"unsupported baseline fit {type(fit).__name__}")
    lc = fit if isinstance(fit, LeeCarterFit) else fit.lc
    X = lc.a.size
    out = np.empty((n_paths, horizon, X))
    base = lc.a + lc.B * lc.k[-1]
    if isinstance(fit, LeeCarterFit):
        for i in range(n_paths):
            eps = _stream(seed, i, _PURPOSE_DIFFUSION).normal(0.0, fit.sigma_k, horizon)
            k = lc.k[-1] + np.cumsum(fit.drift + eps)
            out[i] = lc.a[None, :] + np.outer(k, lc.B)
        return out
    if isinstance(fit, CCFit):
        for i in range(n_paths):
            eps = _stream(seed, i, _PURPOSE_DIFFUSION).normal(0.0, fit.sigma, horizon)
            u = _stream(seed, i, _PURPOSE_JUMP_TIMES).random(horizon)
            J = _stream(seed, i, _PURPOSE_JUMP_SIZES).normal(fit.mu_J, fit.s_J, horizon)
            # transitory: the shock lifts the index one year then withdraws
            jumps = (u < fit.p) & (not suppress_jumps)
            eff = np.where(jumps, J, 0.0)
            k_core = lc.k[-1] + np.cumsum(fit.drift + eps)
            k = k_core + eff
            out[i] = lc.a[None, :] + np.outer(k, lc.B)
        return out
    if isinstance(fit, J1Fit):
        for i in range(n_paths):
            eta = _stream(seed, i, _PURPOSE_DIFFUSION).normal(0.0, fit.sigma_eta, horizon)
            u = _stream(seed, i, _PURPOSE_JUMP_TIMES).random(horizon)
            J = _stream(seed, i, _PURPOSE_JUMP_SIZES).normal(fit.mu_J, fit.sigma_J, horizon)
            jumps = (u < fit.p) & (not suppress_jumps)
            eff = np.where(jumps, J, 0.0)
            logm = np.empty((horizon, X))
            cur = base.copy()
            prev_eff = 0.0
            for t in range(horizon):
                cur = cur + lc.B * (fit.D + eta[t]) + fit.beta_J * (eff[t] - prev_eff)
                prev_eff = eff[t]
                logm[t] = cur
            out[i] = logm
        return out
    raise TypeError(f"unsupported baseline fit {type(fit).__name__}")


def save_baseline(fit, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fit.to_dict(), fh, indent=2)


def load_baseline(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    model = data.get("model")
    def _lc(d):
        return LeeCarterFit(model=d["model"], a=np.asarray(d["a"]),
                            B=np.asarray(d["B"]), k=np.asarray(d["k"]),
                            drift=d["drift"], sigma_k=d["sigma_k"],
                            years=np.asarray(d["years"]),
                            deviance=d["deviance"])
    if model == "lee_carter":
        return _lc(data)
    if model == "cc_transitory":
        return CCFit(model=model, lc=_lc(data["lc"]), drift=data["drift"],
                     sigma=data["sigma"], mu_J=data["mu_J"], s_J=data["s_J"],
                     p=data["p"], loglik=data["loglik"], aic=data["aic"],
                     bic=data["bic"], n_params=data["n_params"],
                     converged=data["converged"])
    if model == "j1_age_profile":
        return J1Fit(model=model, lc=_lc(data["lc"]), D=data["D"],
                     sigma_eta=data["sigma_eta"],
                     beta_J=np.asarray(data["beta_J"]), mu_J=data["mu_J"],
                     sigma_J=data["sigma_J"], p=data["p"],
                     sigma_e=data["sigma_e"], loglik=data["loglik"],
                     aic=data["aic"], bic=data["bic"],
                     n_params=data["n_params"], converged=data["converged"])
    raise ValueError(f"unknown baseline model tag {model!r}")
