"""Conditional maximum likelihood estimation for the jump mixture model.

The optimizer works in transformed coordinates (log scales, logit jump
probability) so every iterate maps to a valid parameter set.  Initialization
runs a deterministic pipeline: Poisson trend fit on aggregate deaths, rank-1
ALS on cause-level residuals, then direct jump and decay-profile starts from
the post-jump years.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import (
    AlsStallWarning,
    SingularCovarianceError,
    DegenerateTrendError,
    JumpYearMissingError,
    NonFiniteObjectiveError,
    NoPostJumpDataError,
    SingularHessianError,
    WindowTooShortError,
    ZeroRateError,
)
from .model import (
    ParamSet,
    information_criteria,
    mixture_loglik,
    single_pattern_loglik,
    special_case_gradient,
    special_case_loglik,
)
from .panel import improvement_tensor

log = logging.getLogger(__name__)

#: parameter block layout in transformed coordinates
_BLOCKS = ("B", "D", "log_sigma_eta", "phi", "b", "d", "log_sigma_xi",
           "mu", "log_sigma_J", "gamma", "log_alpha", "log_beta",
           "logit_p", "log_sigma_e")


class ParamPacker:
    """Maps ParamSet <-> flat transformed vector, optionally over a subset
    of free blocks (the rest held at fixed values)."""

    def __init__(self, X, C, free=None):
        self.X, self.C = X, C
        sizes = {"B": X, "D": 1, "log_sigma_eta": 1, "phi": C, "b": X,
                 "d": 1, "log_sigma_xi": 1, "mu": X * C, "log_sigma_J": 1,
                 "gamma": C, "log_alpha": C, "log_beta": C, "logit_p": 1,
                 "log_sigma_e": 1}
        self.free = tuple(_BLOCKS) if free is None else tuple(free)
        for name in self.free:
            if name not in sizes:
                raise ValueError(f"unknown block {name!r}")
        self.sizes = sizes
        self.n = sum(sizes[name] for name in self.free)
        self.names = []
        for name in self.free:
            k = sizes[name]
            if k == 1:
                self.names.append(name)
            else:
                self.names.extend(f"{name}[{i}]" for i in range(k))

    def _block_values(self, params, name):
        if name == "B":
            return params.B
        if name == "D":
            return np.array([params.D])
        if name == "log_sigma_eta":
            return np.log([params.sigma_eta])
        if name == "phi":
            return params.phi
        if name == "b":
            return params.b
        if name == "d":
            return np.array([params.d])
        if name == "log_sigma_xi":
            return np.log([params.sigma_xi])
        if name == "mu":
            return params.mu_flat
        if name == "log_sigma_J":
            return np.log([params.sigma_J])
        if name == "gamma":
            return params.gamma
        if name == "log_alpha":
            return np.log(params.alpha)
        if name == "log_beta":
            return np.log(params.beta)
        if name == "logit_p":
            return np.array([math.log(params.p / (1.0 - params.p))])
        if name == "log_sigma_e":
            return np.log([params.sigma_e])
        raise AssertionError(name)

    def pack(self, params):
        return np.concatenate([self._block_values(params, n) for n in self.free])

    def unpack(self, vec, base):
        """Rebuild a ParamSet from a transformed vector, taking non-free
        blocks from `base`."""
        out = base.copy()
        i = 0
        X, C = self.X, self.C
        for name in self.free:
            k = self.sizes[name]
            v = np.asarray(vec[i:i + k], float)
            i += k
            if name == "B":
                out.B = v.copy()
            elif name == "D":
                out.D = float(v[0])
            elif name == "log_sigma_eta":
                out.sigma_eta = float(np.exp(v[0]))
            elif name == "phi":
                out.phi = v.copy()
            elif name == "b":
                out.b = v.copy()
            elif name == "d":
                out.d = float(v[0])
            elif name == "log_sigma_xi":
                out.sigma_xi = float(np.exp(v[0]))
            elif name == "mu":
                out.mu = v.reshape(C, X).T.copy()
            elif name == "log_sigma_J":
                out.sigma_J = float(np.exp(v[0]))
            elif name == "gamma":
                out.gamma = v.copy()
            elif name == "log_alpha":
                out.alpha = np.exp(v)
            elif name == "log_beta":
                out.beta = np.exp(v)
            elif name == "logit_p":
                out.p = float(1.0 / (1.0 + np.exp(-v[0])))
            elif name == "log_sigma_e":
                out.sigma_e = float(np.exp(v[0]))
        return out


# ---------------------------------------------------------------------------
# Quasi-Newton maximizer
# ---------------------------------------------------------------------------

@dataclass
class OptResult:
    x: np.ndarray
    fun: float                    # maximized objective value
    n_iter: int
    converged: bool
    n_eval: int
    trace: list = field(default_factory=list)


def _fd_gradient(fun, x, f0, rel=0.01, floor=1e-4, central=False):
    """Finite-difference gradient; a probe that lands in a barrier region
    (infinite objective) falls back to the one-sided difference."""
    g = np.empty(x.size)
    for i in range(x.size):
        h = max(rel * abs(x[i]), floor)
        xp = x.copy()
        xp[i] += h
        fp = fun(xp)
        if central:
            xm = x.copy()
            xm[i] -= h
            fm = fun(xm)
            if np.isfinite(fp) and np.isfinite(fm):
                g[i] = (fp - fm) / (2.0 * h)
            elif np.isfinite(fp):
                g[i] = (fp - f0) / h
            elif np.isfinite(fm):
                g[i] = (f0 - fm) / h
            else:
                g[i] = 0.0
        else:
            if np.isfinite(fp):
                g[i] = (fp - f0) / h
            else:
                xm = x.copy()
                xm[i] -= h
                fm = fun(xm)
                g[i] = (f0 - fm) / h if np.isfinite(fm) else 0.0
    return g


def bfgs_maximize(fun, x0, grad=None, max_iter=500, tol=1e-8,
                  safeguards=True, max_halvings=30, curvature_floor=1e-12,
                  fd_rel=0.01, fd_floor=1e-4, fd_central=False):
    """BFGS ascent on `fun` (internally minimizes -fun).

    The curvature matrix H approximates the Hessian of the negative
    objective and stays positive definite through the damped update.  Finite
    differences supply the gradient when `grad` is None: by default forward
    steps max(fd_rel * |x_i|, fd_floor); set fd_central for a tighter
    central-difference scheme.  With safeguards on, a worsening full step
    falls back to halving; with them off the full step is always taken.
    """
    n_eval = 0

    def nobj(x):
        nonlocal n_eval
        n_eval += 1
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                v = fun(x)
        except (OverflowError, FloatingPointError, np.linalg.LinAlgError,
                SingularCovarianceError):
            return np.inf
        if not np.isfinite(v):
            return np.inf
        return -v

    def ngrad(x, f0):
        if grad is not None:
            return -np.asarray(grad(x), float)
        return _fd_gradient(nobj, x, f0, rel=fd_rel, floor=fd_floor,
                            central=fd_central)

    x = np.asarray(x0, float).copy()
    f = nobj(x)
    if not np.isfinite(f):
        raise NonFiniteObjectiveError("objective not finite at the start point")
    g = ngrad(x, f)
    H = np.eye(x.size)
    trace = [-f]
    converged = False
    fresh_restart = False
    it = 0
    for it in range(1, max_iter + 1):
        try:
            s = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            H = np.eye(x.size)
            s = -g
        x_new = x + s
        f_new = nobj(x_new)
        if safeguards:
            halves = 0
            while f_new > f and halves < max_halvings:
                s = 0.5 * s
                x_new = x + s
                f_new = nobj(x_new)
                halves += 1
            if f_new > f:
                if fresh_restart:
                    # steepest descent failed too: a stationary point
                    trace.append(-f)
                    converged = True
                    break
                # no descent along the quasi-Newton direction; drop the
                # curvature estimate and retry along the raw gradient
                H = np.eye(x.size)
                fresh_restart = True
                trace.append(-f)
                continue
            fresh_restart = False
        if not np.isfinite(f_new):
            raise NonFiniteObjectiveError(f"objective diverged at iteration {it}")
        g_new = ngrad(x_new, f_new)
        y = g_new - g
        ys = float(y @ s)
        if ys > curvature_floor and np.all(np.isfinite(y)):
            Hs = H @ s
            H += np.outer(y, y) / ys - np.outer(Hs, Hs) / float(s @ Hs)
        rel_change = abs(f_new - f) / (1.0 + abs(f))
        x, f, g = x_new, f_new, g_new
        trace.append(-f)
        if rel_change <= tol:
            converged = True
            break
    return OptResult(x=x, fun=-f, n_iter=it, converged=converged,
                     n_eval=n_eval, trace=trace)


# ---------------------------------------------------------------------------
# Initialization pipeline
# ---------------------------------------------------------------------------

@dataclass
class TrendInit:
    a: np.ndarray        # (X,)  aggregate log level
    B: np.ndarray        # (X,)  normalized age loadings
    k: np.ndarray        # (T0,) period index, zero mean
    deviance: float
    n_sweeps: int


def poisson_lee_carter(deaths, exposures, tol=1e-8, max_sweeps=500):
    """Poisson log-bilinear fit on aggregate deaths (alternating Newton).

    deaths and exposures have shape (X, T0).  The gauge is sum(B) = 1 and
    mean(k) = 0, applied every sweep."""
    deaths = np.asarray(deaths, float)
    E = np.asarray(exposures, float)
    X, T0 = deaths.shape
    if T0 < 3:
        raise WindowTooShortError("need at least three years for the trend fit")
    with np.errstate(divide="raise"):
        try:
            a = np.log(deaths.mean(axis=1) / E.mean(axis=1))
        except FloatingPointError as exc:
            raise ZeroRateError([]) from exc
    B = np.full(X, 1.0 / X)
    k = np.zeros(T0)

    def fitted():
        return E * np.exp(a[:, None] + np.outer(B, k))

    def deviance(dhat):
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(deaths > 0, deaths * np.log(deaths / dhat), 0.0)
        return 2.0 * float(np.sum(term - (deaths - dhat)))

    dev = deviance(fitted())
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        dhat = fitted()
        a += (deaths - dhat).sum(axis=1) / dhat.sum(axis=1)
        dhat = fitted()
        num = ((deaths - dhat) * B[:, None]).sum(axis=0)
        den = (dhat * (B ** 2)[:, None]).sum(axis=0)
        k += num / den
        dhat = fitted()
        num = ((deaths - dhat) * k[None, :]).sum(axis=1)
        den = (dhat * (k ** 2)[None, :]).sum(axis=1)
        ok = den > 0
        B[ok] += num[ok] / den[ok]
        # gauge: sum(B)=1, mean(k)=0 (absorbed into a)
        k -= k.mean()
        s = B.sum()
        if s == 0:
            raise DegenerateTrendError("age loadings collapsed to zero")
        B /= s
        k *= s
        dev_new = deviance(fitted())
        if abs(dev - dev_new) <= tol * (1.0 + abs(dev)):
            dev = dev_new
            break
        dev = dev_new
    return TrendInit(a=a, B=B, k=k, deviance=dev, n_sweeps=sweeps)


def init_general_trend(panel, cutoff_year=2019):
    """Common-trend start from aggregate deaths through the cutoff year.

    Returns (B, D, sigma_eta, lc) with the drift and innovation scale taken
    from first differences of the fitted period index."""
    from .baselines import fit_lee_carter_poisson
    lc = fit_lee_carter_poisson(panel, end_year=cutoff_year)
    dk = np.diff(lc.k)
    if dk.size < 1:
        raise WindowTooShortError("need at least two years for the trend start")
    sigma_eta = float(dk.std(ddof=1)) if dk.size > 1 else 0.0
    if sigma_eta == 0.0:
        raise DegenerateTrendError("period index has no innovation variance")
    return lc.B, float(dk.mean()), sigma_eta, lc


@dataclass
class SecondTrendInit:
    phi: np.ndarray
    b: np.ndarray
    k2: np.ndarray
    sse: float
    n_sweeps: int


def parafac1_als(resid, tol=1e-10, max_sweeps=500):
    """Rank-1 three-way ALS on the cause-level residual tensor (X, T0, C).

    Gauge: sum(b) = 1 with the scale absorbed into phi.  The objective is
    monotone by construction; a stall before convergence raises a warning."""
    R = np.asarray(resid, float)
    X, T0, C = R.shape
    unf = R.transpose(0, 1, 2).reshape(X, T0 * C)
    U, s, Vt = np.linalg.svd(unf, full_matrices=False)
    b = U[:, 0] * math.sqrt(s[0])
    rest = Vt[0] * math.sqrt(s[0])
    k2 = rest.reshape(T0, C).mean(axis=1)
    phi = np.ones(C)

    def sse():
        fit = np.einsum("x,t,c->xtc", b, k2, phi)
        return float(np.sum((R - fit) ** 2))

    prev = sse()
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        denom = np.sum(k2 ** 2) * np.sum(phi ** 2)
        if denom > 0:
            b = np.einsum("xtc,t,c->x", R, k2, phi) / denom
        denom = np.sum(b ** 2) * np.sum(phi ** 2)
        if denom > 0:
            k2 = np.einsum("xtc,x,c->t", R, b, phi) / denom
        denom = np.sum(b ** 2) * np.sum(k2 ** 2)
        if denom > 0:
            phi = np.einsum("xtc,x,t->c", R, b, k2) / denom
        cur = sse()
        if prev - cur <= tol * (1.0 + prev):
            if cur > prev + 1e-12:
                warnings.warn("ALS objective stalled upward", AlsStallWarning)
            prev = cur
            break
        prev = cur
    sb = b.sum()
    if sb == 0:
        sb = 1.0
    b = b / sb
    phi = phi * sb
    k2 = k2 - k2.mean()
    return SecondTrendInit(phi=phi, b=b, k2=k2, sse=prev, n_sweeps=sweeps)


def init_cause_specific(panel, lc_fit, cutoff_year=2019):
    """Cause-tilt start: rank-1 ALS on residuals after the common trend.

    Returns (phi, b, d, sigma_xi, k2)."""
    mask = panel.years <= cutoff_year
    logm = np.log(panel.rates[:, mask, :])
    a_xc = logm.mean(axis=1)
    resid = logm - a_xc[:, None, :] - np.einsum(
        "x,t->xt", lc_fit.B, lc_fit.k)[:, :, None]
    second = parafac1_als(resid)
    dk2 = np.diff(second.k2)
    d = float(dk2.mean()) if dk2.size else 0.0
    sigma_xi = float(dk2.std(ddof=1)) if dk2.size > 1 else 0.0
    return second.phi, second.b, d, sigma_xi, second.k2


def init_sigma_defaults(T):
    """Small starting severity scale and a 1/T jump probability."""
    return math.exp(-10.0), 1.0 / T


def init_jump(panel, jump_year, B, D, phi, b, d):
    """Jump-size start from the jump-year improvement net of both trends."""
    return init_jump_means(improvement_tensor(panel), jump_year, B, D, phi, b, d)


def init_jump_means(ztensor, jump_year, B, D, phi, b, d):
    """Direct jump-size start: the jump-year improvement minus both trends."""
    years = ztensor.years
    pos = np.nonzero(years == jump_year)[0]
    if pos.size == 0:
        raise JumpYearMissingError(f"jump year {jump_year} not among improvements")
    zj = ztensor.z[:, pos[0], :]             # (X, C)
    return zj - np.outer(B, np.ones(phi.size)) * D - np.outer(b, phi) * d


def init_lingering(panel, jump_year, mu, B, D, phi, b, d):
    """Decay-profile start per cause from cumulated post-jump excess.

    The cumulated excess ln m_t - ln m_{jy-1} net of (t - jy + 1) years of
    trend should track mu * pi_c(t - jy); fit (alpha, beta, gamma) per cause
    by least squares over a small multi-start grid."""
    years = panel.years
    jy_idx = np.nonzero(years == jump_year)[0]
    if jy_idx.size == 0:
        raise JumpYearMissingError(f"jump year {jump_year} not in panel")
    j = int(jy_idx[0])
    if j == 0:
        raise JumpYearMissingError("jump year cannot be the first panel year")
    post = np.arange(j + 1, years.size)      # strictly after the jump year
    C, X = phi.size, B.size
    alpha = np.ones(C)
    beta = np.ones(C)
    gamma = np.zeros(C)
    if post.size == 0:
        raise NoPostJumpDataError("no years after the jump year")
    logm = np.log(panel.rates)
    taus = years[post] - jump_year           # >= 1
    trend = np.einsum("x,c->xc", B * D, np.ones(C)) + np.outer(b, phi) * d
    for c in range(C):
        target = []
        weight = []
        for i, t in enumerate(post):
            steps = t - (j - 1)
            excess = logm[:, t, c] - logm[:, j - 1, c] - steps * trend[:, c]
            target.append(excess)
            weight.append(np.full(X, taus[i]))
        ex = np.stack(target)                # (n_post, X)
        mu_c = mu[:, c]

        def resid(theta, ex=ex, mu_c=mu_c):
            la, lb, g = theta
            with np.errstate(over="ignore", invalid="ignore"):
                pi = (g * np.exp(lb) ** np.exp(la) * taus ** (np.exp(la) - 1.0)
                      * np.exp(-np.exp(lb) * taus))
                r = (ex - np.outer(pi, mu_c)).ravel()
            # steer the solver away from overflowing shape parameters
            return np.where(np.isfinite(r), r, 1e6)

        best = None
        for a0 in (1.0, 3.0):
            for b0 in (0.5, 2.0):
                for g0 in (-0.5, 0.5):
                    try:
                        sol = least_squares(resid, [math.log(a0), math.log(b0), g0])
                    except Exception:
                        continue
                    if best is None or sol.cost < best.cost:
                        best = sol
        if best is not None:
            alpha[c] = float(np.exp(best.x[0]))
            beta[c] = float(np.exp(best.x[1]))
            gamma[c] = float(best.x[2])
    # keep the decay shapes inside a numerically tame region; large shapes
    # put the kernel mode far outside the window and explode pi for early
    # latent jump years
    alpha = np.clip(alpha, 0.05, 5.0)
    beta = np.clip(beta, 0.05, 10.0)
    gamma = np.clip(gamma, -5.0, 5.0)
    return alpha, beta, gamma


def initialize(panel, jump_year=2020):
    """Full starting-value pipeline; returns a ParamSet."""
    years = panel.years
    cutoff = jump_year - 1
    if (years <= cutoff).sum() < 3:
        raise WindowTooShortError("need at least three pre-jump years")
    B, D, sigma_eta, lc = init_general_trend(panel, cutoff)
    sigma_eta = max(sigma_eta, 1e-4)
    phi, b, d, sigma_xi, _ = init_cause_specific(panel, lc, cutoff)
    sigma_xi = max(sigma_xi, 1e-4)

    zt = improvement_tensor(panel)
    mu = init_jump_means(zt, jump_year, B, D, phi, b, d)
    if (years > jump_year).any():
        alpha, beta, gamma = init_lingering(panel, jump_year, mu, B, D,
                                            phi, b, d)
    else:
        C = len(panel.cause_axis)
        alpha, beta, gamma = np.ones(C), np.ones(C), np.zeros(C)

    fitted = np.outer(B * D, np.ones(mu.shape[1])) + np.outer(b, phi) * d
    rz = zt.z[:, years[1:] < jump_year, :] - fitted[:, None, :]
    var = float(rz.var()) if rz.size else 1e-4
    sigma_e = math.sqrt(max(var / 2.0, 1e-8))
    sigma_J, p = init_sigma_defaults(years.size)
    return ParamSet(B=B, D=D, sigma_eta=sigma_eta, phi=phi,
                    b=b, d=d, sigma_xi=sigma_xi, mu=mu,
                    sigma_J=sigma_J, gamma=gamma, alpha=alpha,
                    beta=beta, p=p, sigma_e=sigma_e)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

_VARIANT_FREE = {
    "full": tuple(_BLOCKS),
    "special_case": ("B", "D", "log_sigma_eta", "phi", "b", "d",
                     "log_sigma_xi", "mu", "logit_p", "log_sigma_e"),
    "no_jump": ("B", "D", "log_sigma_eta", "phi", "b", "d", "log_sigma_xi",
                "log_sigma_e"),
}


@dataclass
class FitOptions:
    variant: str = "full"
    jump_year: int = 2020
    max_iter: int = 500
    tol: float = 1e-8
    window: tuple | None = None   # (start_year, end_year) restriction
    prefit: str = "auto"          # 'auto' | 'on' | 'off'
    compute_se: bool = True
    safeguards: bool = True
    diagonal_inflation: float = 0.0
    # accurate central-difference gradients by default; the coarse forward
    # scheme remains available through these knobs
    fd_rel: float = 1e-5
    fd_floor: float = 1e-6
    fd_central: bool = True

    def __post_init__(self):
        if self.variant not in _VARIANT_FREE:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.prefit not in ("auto", "on", "off"):
            raise ValueError("prefit must be 'auto', 'on', or 'off'")


@dataclass
class FitResult:
    params: ParamSet
    variant: str
    loglik: float
    aic: float
    bic: float
    n_params: int
    n_obs: int
    converged: bool
    n_iter: int
    jump_year: int
    first_year: int
    final_year: int
    final_log_rates: np.ndarray          # (X, C) log rates in the last year
    se: np.ndarray | None = None
    se_names: list | None = None
    trace: list = field(default_factory=list)
    age_labels: tuple | None = None
    cause_labels: tuple | None = None

    def to_dict(self):
        out = {"format_version": 1, "variant": self.variant,
               "loglik": self.loglik, "aic": self.aic, "bic": self.bic,
               "n_params": self.n_params, "n_obs": self.n_obs,
               "converged": self.converged, "n_iter": self.n_iter,
               "jump_year": self.jump_year, "first_year": self.first_year,
               "final_year": self.final_year,
               "final_log_rates": np.asarray(self.final_log_rates).tolist(),
               "params": self.params.to_dict(),
               "trace": list(self.trace)}
        if self.se is not None:
            out["se"] = np.asarray(self.se).tolist()
            out["se_names"] = list(self.se_names)
        if self.age_labels is not None:
            out["age_labels"] = list(self.age_labels)
        if self.cause_labels is not None:
            out["cause_labels"] = list(self.cause_labels)
        return out

    @classmethod
    def from_dict(cls, data):
        if data.get("format_version") != 1:
            raise ValueError("unsupported fit file version")
        se = np.asarray(data["se"]) if "se" in data else None
        return cls(params=ParamSet.from_dict(data["params"]),
                   variant=data["variant"], loglik=data["loglik"],
                   aic=data["aic"], bic=data["bic"],
                   n_params=data["n_params"], n_obs=data["n_obs"],
                   converged=data["converged"], n_iter=data["n_iter"],
                   jump_year=data["jump_year"], first_year=data["first_year"],
                   final_year=data["final_year"],
                   final_log_rates=np.asarray(data["final_log_rates"]),
                   se=se, se_names=data.get("se_names"),
                   trace=data.get("trace", []),
                   age_labels=tuple(data["age_labels"]) if "age_labels" in data else None,
                   cause_labels=tuple(data["cause_labels"]) if "cause_labels" in data else None)

    def to_json(self, path):
        import json
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, path):
        import json
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _objective_for(variant, z, diagonal_inflation):
    if variant == "no_jump":
        return lambda q: single_pattern_loglik(q, z)
    if variant == "special_case":
        return lambda q: special_case_loglik(q, z)
    return lambda q: mixture_loglik(q, z, diagonal_inflation=diagonal_inflation)


def _transformed_special_grad(packer, params, z):
    """Chain-rule the analytic reduced-regime gradient into the transformed
    coordinates of the special-case free set."""
    g = special_case_gradient(params, z)
    X, C = params.X, params.C
    i = 0
    gB = g[i:i + X]; i += X
    gD = g[i]; i += 1
    g_eta = g[i]; i += 1
    gphi = g[i:i + C]; i += C
    gb = g[i:i + X]; i += X
    gd = g[i]; i += 1
    g_xi = g[i]; i += 1
    gmu = g[i:i + X * C]; i += X * C
    g_e = g[i]; i += 1
    gp = g[i]
    parts = {"B": gB, "D": [gD],
             "log_sigma_eta": [g_eta * params.sigma_eta],
             "phi": gphi, "b": gb, "d": [gd],
             "log_sigma_xi": [g_xi * params.sigma_xi],
             "mu": gmu,
             "logit_p": [gp * params.p * (1.0 - params.p)],
             "log_sigma_e": [g_e * params.sigma_e]}
    return np.concatenate([np.asarray(parts[name], float)
                           for name in packer.free])


def standard_errors(objective, packer, params, step=1e-4):
    """SEs in transformed coordinates from a central-difference Hessian of
    the log likelihood at the optimum."""
    x0 = packer.pack(params)
    n = x0.size
    h = step * np.maximum(1.0, np.abs(x0))

    def f(v):
        # a failing probe (covariance loses positivity just off the optimum)
        # poisons only the coordinates it touches, via NaN
        try:
            return objective(packer.unpack(v, params))
        except (OverflowError, FloatingPointError, np.linalg.LinAlgError,
                SingularCovarianceError):
            return np.nan

    H = np.empty((n, n))
    f0 = f(x0)
    fp = np.empty(n)
    fm = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h[i]
        fp[i] = f(x0 + e)
        fm[i] = f(x0 - e)
        H[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / h[i] ** 2
    # coordinates whose own probes fail are dropped; the information matrix
    # is inverted on the clean block only
    ok = np.isfinite(np.diag(H))
    good = np.where(ok)[0]
    if good.size == 0:
        raise SingularHessianError("observed information is unusable")
    for a, i in enumerate(good):
        for j in good[a + 1:]:
            ei = np.zeros(n); ei[i] = h[i]
            ej = np.zeros(n); ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(x0 + ei + ej) - f(x0 + ei - ej)
                - f(x0 - ei + ej) + f(x0 - ei - ej)
            ) / (4.0 * h[i] * h[j])
    info = -H[np.ix_(good, good)]
    bad_rows = np.any(np.isnan(info), axis=1)
    if np.any(bad_rows):
        keep = ~bad_rows
        good = good[keep]
        info = info[np.ix_(keep, keep)]
    if good.size == 0:
        raise SingularHessianError("observed information is unusable")
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        # flat directions (e.g. a kernel shape with a negligible weight)
        # only lose their own standard errors
        cov = np.linalg.pinv(info, hermitian=True)
    diag = np.diag(cov)
    if np.all(diag <= 0):
        raise SingularHessianError("observed information is not positive definite")
    se = np.full(n, np.nan)
    se[good[diag > 0]] = np.sqrt(diag[diag > 0])
    return se


def _normalize_gauge(params):
    """Fix the scale gauges: sum(B) = 1 (rescaling D, sigma_eta) and
    sum(b) = 1 (rescaling d, sigma_xi)."""
    out = params.copy()
    sB = float(out.B.sum())
    if sB != 0 and not math.isclose(sB, 1.0):
        out.B = out.B / sB
        out.D *= sB
        out.sigma_eta *= abs(sB)
    sb = float(out.b.sum())
    if sb != 0 and not math.isclose(sb, 1.0):
        out.b = out.b / sb
        out.d *= sb
        out.sigma_xi *= abs(sb)
    return out


def fit(panel, options=None, init=None):
    """Fit a model variant to a mortality panel by conditional ML.

    Returns a FitResult.  `init` overrides the starting ParamSet."""
    options = options or FitOptions()
    if options.window is not None:
        start, end = options.window
        panel = panel.window(start, end)
        if panel.years.size < 5:
            raise WindowTooShortError(
                f"window {start}..{end} leaves {panel.years.size} years; "
                "need at least 5")
    zt = improvement_tensor(panel)
    z = zt.z
    X, Tm1, C = z.shape
    T = Tm1 + 1
    params = init.copy() if init is not None else initialize(panel, options.jump_year)

    free = _VARIANT_FREE[options.variant]
    packer = ParamPacker(X, C, free=free)
    if options.variant == "no_jump":
        params.mu = np.zeros((X, C))
        params.gamma = np.zeros(C)
        params.sigma_J = math.exp(-10.0)

    do_prefit = (options.variant == "full"
                 and (options.prefit == "on"
                      or (options.prefit == "auto" and X * C >= 36)))
    if do_prefit:
        pre_packer = ParamPacker(X, C, free=_VARIANT_FREE["special_case"])
        pre_obj = _objective_for("special_case", z, options.diagonal_inflation)
        res0 = bfgs_maximize(
            lambda v: pre_obj(pre_packer.unpack(v, params)),
            pre_packer.pack(params),
            grad=lambda v: _transformed_special_grad(
                pre_packer, pre_packer.unpack(v, params), z),
            max_iter=options.max_iter, tol=options.tol,
            safeguards=options.safeguards)
        params = pre_packer.unpack(res0.x, params)
        log.info("pre-fit loglik %.6f in %d iterations", res0.fun, res0.n_iter)

    objective = _objective_for(options.variant, z, options.diagonal_inflation)
    try:
        ll0 = objective(params)
    except (OverflowError, FloatingPointError, np.linalg.LinAlgError,
            SingularCovarianceError):
        ll0 = -np.inf
    if not np.isfinite(ll0):
        # retreat to a tame one-year-shock start if the decay-profile
        # initialization landed outside the feasible region
        params = params.copy()
        params.gamma = np.zeros(params.C)
        params.alpha = np.ones(params.C)
        params.beta = np.ones(params.C)
        params.sigma_J = math.exp(-5.0)
    res = bfgs_maximize(lambda v: objective(packer.unpack(v, params)),
                        packer.pack(params),
                        max_iter=options.max_iter, tol=options.tol,
                        safeguards=options.safeguards,
                        fd_rel=options.fd_rel, fd_floor=options.fd_floor,
                        fd_central=options.fd_central)
    fitted = _normalize_gauge(packer.unpack(res.x, params))
    # the gauge rescale leaves the likelihood unchanged; if re-evaluating at
    # the rescaled point trips a numerical guard, keep the optimizer's value
    try:
        ll = objective(fitted)
    except (OverflowError, FloatingPointError, np.linalg.LinAlgError,
            SingularCovarianceError):
        ll = res.fun
    if not np.isfinite(ll):
        ll = res.fun

    n_params = packer.n
    n_obs = X * C * Tm1
    ic = information_criteria(ll, n_params, n_obs)
    se = names = None
    if options.compute_se:
        try:
            se = standard_errors(objective, packer, fitted)
            names = list(packer.names)
        except SingularHessianError as exc:
            log.warning("standard errors unavailable: %s", exc)
    return FitResult(params=fitted, variant=options.variant, loglik=ll,
                     aic=ic["aic"], bic=ic["bic"], n_params=n_params,
                     n_obs=n_obs, converged=res.converged, n_iter=res.n_iter,
                     jump_year=options.jump_year,
                     first_year=int(panel.years[0]),
                     final_year=int(panel.years[-1]),
                     final_log_rates=np.log(panel.rates[:, -1, :]),
                     se=se, se_names=names, trace=res.trace,
                     age_labels=tuple(panel.age_axis.labels),
                     cause_labels=tuple(panel.cause_axis.causes))
