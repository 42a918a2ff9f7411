"""Three-way mortality trend model with cause-specific lingering jump effects.

Log improvement rates are modeled as a shared age-profile trend plus a
cause-tilted second trend plus, in jump years, a persistent shock whose decay
profile per cause follows a scaled gamma-density kernel.  The jump year is
latent; the likelihood is a mixture over monotone at-most-one-jump patterns,
each component a Gaussian on the stacked improvement panel.

The stacked vector ordering is age fastest, then cause, then time
(flat index = t * C * X + c * X + x).
"""

from __future__ import annotations

import json
import math

import numpy as np
from dataclasses import dataclass, field, replace

from .errors import DimensionMismatchError, SingularCovarianceError

LOG2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class ParamSet:
    """Full parameter collection.

    Shapes: B, b are (X,); phi, gamma, alpha, beta are (C,); mu is (X, C);
    the rest scalars.  The flat cross-sectional index is c * X + x, so the
    flattened jump means are ``mu.T.ravel()``.
    """

    B: np.ndarray
    D: float
    sigma_eta: float
    phi: np.ndarray
    b: np.ndarray
    d: float
    sigma_xi: float
    mu: np.ndarray
    sigma_J: float
    gamma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    p: float
    sigma_e: float
    age_labels: tuple | None = None
    cause_labels: tuple | None = None

    def __post_init__(self):
        for name in ("B", "phi", "b", "mu", "gamma", "alpha", "beta"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        X, C = self.B.size, self.phi.size
        if self.b.shape != (X,):
            raise DimensionMismatchError("b must match B in length")
        if self.mu.shape != (X, C):
            raise DimensionMismatchError(f"mu must be (X, C) = {(X, C)}")
        for name in ("gamma", "alpha", "beta"):
            if getattr(self, name).shape != (C,):
                raise DimensionMismatchError(f"{name} must have length C={C}")

    @property
    def X(self):
        return self.B.size

    @property
    def C(self):
        return self.phi.size

    @property
    def n_free_params(self):
        X, C = self.X, self.C
        return X + 1 + 1 + C + X + 1 + 1 + X * C + 1 + C + C + C + 1 + 1

    @property
    def mu_flat(self):
        return self.mu.T.ravel()

    def copy(self):
        return replace(self, B=self.B.copy(), phi=self.phi.copy(),
                       b=self.b.copy(), mu=self.mu.copy(),
                       gamma=self.gamma.copy(), alpha=self.alpha.copy(),
                       beta=self.beta.copy())

    # -- lossless serialization (hex floats survive round trips exactly) ----

    _SCALARS = ("D", "sigma_eta", "d", "sigma_xi", "sigma_J", "p", "sigma_e")
    _ARRAYS = ("B", "phi", "b", "mu", "gamma", "alpha", "beta")

    def to_dict(self):
        def hx(v):
            return float(v).hex()
        out = {"format_version": 1, "X": self.X, "C": self.C, "params": {}}
        if self.age_labels is not None:
            out["age_labels"] = list(self.age_labels)
        if self.cause_labels is not None:
            out["cause_labels"] = list(self.cause_labels)
        for name in self._SCALARS:
            out["params"][name] = hx(getattr(self, name))
        for name in self._ARRAYS:
            arr = getattr(self, name)
            out["params"][name] = np.vectorize(hx)(arr).tolist()
        return out

    @classmethod
    def from_dict(cls, data):
        if data.get("format_version") != 1:
            raise ValueError(f"unsupported format_version {data.get('format_version')!r}")
        kw = {}
        raw = data["params"]
        for name in cls._SCALARS:
            kw[name] = float.fromhex(raw[name])
        for name in cls._ARRAYS:
            arr = np.array(raw[name], dtype=object)
            kw[name] = np.vectorize(float.fromhex)(arr).astype(float)
        if "age_labels" in data:
            kw["age_labels"] = tuple(data["age_labels"])
        if "cause_labels" in data:
            kw["cause_labels"] = tuple(data["cause_labels"])
        return cls(**kw)

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Lingering kernel and jump patterns
# ---------------------------------------------------------------------------

def lingering_weight(tau, alpha, beta, gamma):
    """Decay kernel: 1 at lag 0, gamma * gamma-density shape for lags >= 1,
    zero before the jump.  gamma == 0 reproduces a pure one-year shock."""
    tau = np.asarray(tau, dtype=float)
    out = np.zeros(tau.shape)
    out[tau == 0] = 1.0
    pos = tau > 0
    if np.any(pos):
        tp = tau[pos]
        out[pos] = gamma * beta ** alpha * tp ** (alpha - 1.0) * np.exp(-beta * tp)
    return out


@dataclass(frozen=True)
class JumpPattern:
    """Monotone at-most-one-jump indicator path over T data years.

    t_jump is the 1-based first jump year, or None for no jump."""

    T: int
    t_jump: int | None

    def __post_init__(self):
        if self.t_jump is not None and not 1 <= self.t_jump <= self.T:
            raise ValueError(f"t_jump must be in 1..{self.T} or None")

    def indicators(self):
        n = np.zeros(self.T)
        if self.t_jump is not None:
            n[self.t_jump - 1:] = 1.0
        return n

    def log_weight(self, p):
        if self.t_jump is None:
            return self.T * math.log1p(-p)
        return (self.t_jump - 1) * math.log1p(-p) + math.log(p)

    def d_log_weight(self, p):
        if self.t_jump is None:
            return -self.T / (1.0 - p)
        return 1.0 / p - (self.t_jump - 1) / (1.0 - p)


def enumerate_patterns(T):
    """All patterns in the fixed mixture order: jump years ascending, then
    the no-jump pattern last."""
    return [JumpPattern(T, t) for t in range(1, T + 1)] + [JumpPattern(T, None)]


def mean_factors(pattern, params):
    """Jump contribution multipliers on the improvement scale.

    Returns L of shape (T-1, C): row t (improvement between data years t+1
    and t+2, 0-based) holds n_t * pi_c(tau) - n_{t-1} * pi_c(tau - 1)."""
    T, C = pattern.T, params.C
    L = np.zeros((T - 1, C))
    tj = pattern.t_jump
    if tj is None:
        return L
    n = pattern.indicators()
    for c in range(C):
        a, bb, g = params.alpha[c], params.beta[c], params.gamma[c]
        for t in range(2, T + 1):
            tau = t - tj
            L[t - 2, c] = (n[t - 1] * _pi_scalar(tau, a, bb, g)
                           - n[t - 2] * _pi_scalar(tau - 1, a, bb, g))
    return L


def _pi_scalar(tau, alpha, beta, gamma):
    if tau < 0:
        return 0.0
    if tau == 0:
        return 1.0
    return gamma * beta ** alpha * tau ** (alpha - 1.0) * math.exp(-beta * tau)


def _trend_vectors(params):
    """u1 = 1_C (x) B and u2 = phi (x) b in the flat c*X+x ordering."""
    u1 = np.tile(params.B, params.C)
    u2 = np.repeat(params.phi, params.X) * np.tile(params.b, params.C)
    return u1, u2


def conditional_moments_year(params, pattern, t):
    """Marginal mean and covariance of the year-t improvement block
    (t = 2..T, data-year numbering) conditional on the jump pattern.
    Both are over the length-X*C stacked age-cause vector."""
    if not 2 <= t <= pattern.T:
        raise DimensionMismatchError(f"t must be in 2..{pattern.T}")
    u1, u2 = _trend_vectors(params)
    L = mean_factors(pattern, params)
    ell = np.repeat(L[t - 2], params.X)
    zeta = params.D * u1 + params.d * u2 + ell * params.mu_flat
    cov = (params.sigma_eta ** 2 * np.outer(u1, u1)
           + params.sigma_xi ** 2 * np.outer(u2, u2)
           + np.diag(params.sigma_J ** 2 * ell ** 2)
           + 2.0 * params.sigma_e ** 2 * np.eye(params.X * params.C))
    return zeta, cov


@dataclass
class MomentAssembly:
    """Dense conditional mean and covariance of the stacked improvements."""

    pattern: JumpPattern
    mean: np.ndarray
    cov: np.ndarray


def assemble_full_moments(params, pattern):
    """Dense mean vector and covariance matrix for one jump pattern.

    Intended for small problems and cross-checks; the likelihood itself uses
    a spectral factorization instead."""
    X, C = params.X, params.C
    T = pattern.T
    Tp, XC = T - 1, X * C
    u1, u2 = _trend_vectors(params)
    L = mean_factors(pattern, params)           # (Tp, C)
    Lf = np.repeat(L, X, axis=1)                # (Tp, XC)

    mean = (params.D * u1 + params.d * u2)[None, :] + Lf * params.mu_flat[None, :]

    R = (params.sigma_eta ** 2 * np.outer(u1, u1)
         + params.sigma_xi ** 2 * np.outer(u2, u2))
    cov = np.kron(np.eye(Tp), R)
    ma1 = 2.0 * np.eye(Tp) - np.diag(np.ones(Tp - 1), 1) - np.diag(np.ones(Tp - 1), -1)
    cov += params.sigma_e ** 2 * np.kron(ma1, np.eye(XC))
    if params.sigma_J > 0 and pattern.t_jump is not None:
        #  independent severities per (age, cause): cross-cell jump covariance
        #  vanishes, cross-year covariance within a cell follows the kernel
        jump = np.einsum("ti,si->tsi", Lf, Lf) * params.sigma_J ** 2
        cov4 = cov.reshape(Tp, XC, Tp, XC)
        idx = np.arange(XC)
        cov4[:, idx, :, idx] += jump.transpose(2, 0, 1)
    return MomentAssembly(pattern, mean.ravel(), cov)


# ---------------------------------------------------------------------------
# Spectral likelihood engine
# ---------------------------------------------------------------------------

class SpectralEngine:
    """Per-shape constants for the block-tridiagonal covariance family.

    The shared covariance is I (x) R + sigma_e^2 * (2I - Teo) (x) I with Teo
    the 0/1 tridiagonal; a sine transform diagonalizes the time direction so
    every factorization reduces to rank-2 cross-sectional updates."""

    def __init__(self, X, C, T):
        if T < 2:
            raise DimensionMismatchError("need at least two data years")
        self.X, self.C, self.T = X, C, T
        self.Tp = T - 1
        self.XC = X * C
        k = np.arange(1, self.Tp + 1)
        self.lam = 2.0 * np.cos(k * np.pi / (self.Tp + 1))
        t = np.arange(1, self.Tp + 1)
        self.Q = np.sqrt(2.0 / (self.Tp + 1)) * np.sin(
            np.outer(t, k) * np.pi / (self.Tp + 1))
        self.n = self.Tp * self.XC

    def shared_factorization(self, params):
        """Inverses and log-determinant of the no-jump covariance in the
        spectral basis.  Returns (Sinv (Tp,XC,XC), logdet, c_k)."""
        u1, u2 = _trend_vectors(params)
        c = (2.0 - self.lam) * params.sigma_e ** 2
        if np.any(c <= 0):
            raise SingularCovarianceError(
                "measurement noise scale must be positive")
        U2 = np.stack([u1, u2], axis=1)                     # (XC, 2)
        D2 = np.diag([params.sigma_eta ** 2, params.sigma_xi ** 2])
        G = U2.T @ U2
        GD = G @ D2
        # (cI + U2 D2 U2')^{-1} = (I - U2 D2 (cI2 + G D2)^{-1} U2') / c
        M = c[:, None, None] * np.eye(2) + GD[None, :, :]   # (Tp, 2, 2)
        det2 = M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]
        if np.any(det2 <= 0):
            raise SingularCovarianceError("degenerate trend covariance")
        Minv = np.empty_like(M)
        Minv[:, 0, 0] = M[:, 1, 1]
        Minv[:, 1, 1] = M[:, 0, 0]
        Minv[:, 0, 1] = -M[:, 0, 1]
        Minv[:, 1, 0] = -M[:, 1, 0]
        Minv /= det2[:, None, None]
        W = np.einsum("xi,ij,kjl->kxl", U2, D2, Minv)       # (Tp, XC, 2)
        Sinv = -np.einsum("kxl,yl->kxy", W, U2)
        idx = np.arange(self.XC)
        Sinv[:, idx, idx] += 1.0
        Sinv /= c[:, None, None]
        logdet = float(np.sum((self.XC - 2) * np.log(c) + np.log(det2)))
        return Sinv, logdet, c

    def to_blocks(self, z):
        """Reshape an (X, T-1, C) improvement array into (Tp, XC) blocks."""
        X, C = self.X, self.C
        z = np.asarray(z, float)
        if z.shape != (X, self.Tp, C):
            raise DimensionMismatchError(
                f"improvements must have shape {(X, self.Tp, C)}, got {z.shape}")
        return z.transpose(1, 2, 0).reshape(self.Tp, self.XC)


def _pattern_log_density(engine, params, Zb, Sinv, logdet_shared, pattern,
                         diagonal_inflation=0.0, use_jump_cov=True):
    """Gaussian log density of the stacked improvements under one pattern."""
    X = params.X
    u1, u2 = _trend_vectors(params)
    base = params.D * u1 + params.d * u2
    L = mean_factors(pattern, params)
    Lf = np.repeat(L, X, axis=1)
    Rres = Zb - base[None, :] - Lf * params.mu_flat[None, :]
    Rhat = engine.Q.T @ Rres
    Y = np.einsum("kij,kj->ki", Sinv, Rhat)
    quad = float(np.sum(Rhat * Y))
    logdet = logdet_shared
    if use_jump_cov and params.sigma_J > 0 and pattern.t_jump is not None:
        Lhat = engine.Q.T @ Lf
        A = np.einsum("ki,kj,kij->ij", Lhat, Lhat, Sinv)
        Cp = np.eye(engine.XC) + params.sigma_J ** 2 * A
        w = params.sigma_J * np.sum(Lhat * Y, axis=0)
        try:
            cho = np.linalg.cholesky(Cp)
        except np.linalg.LinAlgError:
            if diagonal_inflation > 0:
                Cp[np.arange(engine.XC), np.arange(engine.XC)] += diagonal_inflation
                try:
                    cho = np.linalg.cholesky(Cp)
                except np.linalg.LinAlgError:
                    raise SingularCovarianceError(
                        "jump covariance update is not positive definite",
                        pattern=pattern.t_jump)
            else:
                raise SingularCovarianceError(
                    "jump covariance update is not positive definite",
                    pattern=pattern.t_jump)
        v = np.linalg.solve(cho, w)
        quad -= float(v @ v)
        logdet += 2.0 * float(np.sum(np.log(np.diag(cho))))
    # the quadratic form is nonnegative for a PD covariance; a materially
    # negative value means the low-rank update lost all precision
    if quad < 0.0:
        if quad < -1e-6 * (1.0 + abs(float(np.sum(Rhat * Y)))):
            raise SingularCovarianceError(
                "covariance quadratic form lost positivity",
                pattern=pattern.t_jump)
        quad = 0.0
    if not np.isfinite(quad) or not np.isfinite(logdet):
        raise SingularCovarianceError("non-finite covariance factorization",
                                      pattern=pattern.t_jump)
    return -0.5 * (engine.n * LOG2PI + logdet + quad)


def _mean_factors_all(params, T):
    """Mean factors for every pattern at once, shape (T+1, T-1, C).

    Patterns are ordered jump year ascending; the last (no-jump) slice is
    zero.  Equivalent to stacking mean_factors over enumerate_patterns."""
    C = params.C
    taus = np.arange(T, dtype=float)
    pivals = np.zeros((C, T))
    pivals[:, 0] = 1.0
    if T > 1:
        tp = taus[1:]
        a = params.alpha[:, None]
        bb = params.beta[:, None]
        pivals[:, 1:] = (params.gamma[:, None] * bb ** a
                         * tp[None, :] ** (a - 1.0) * np.exp(-bb * tp[None, :]))
    L = np.zeros((T + 1, T - 1, C))
    for pidx, tj in enumerate(range(1, T + 1)):
        t = np.arange(max(tj, 2), T + 1)
        if t.size == 0:
            continue
        cur = pivals[:, t - tj]
        prev = np.zeros_like(cur)
        mask = (t - 1) >= tj
        prev[:, mask] = pivals[:, (t - 1)[mask] - tj]
        L[pidx, t - 2, :] = (cur - prev).T
    return L


def _mixture_components(params, z, diagonal_inflation=0.0, use_jump_cov=True):
    """Per-pattern Gaussian log densities, batched over all patterns."""
    z = getattr(z, "z", z)
    X = params.X
    T = z.shape[1] + 1
    engine = SpectralEngine(X, params.C, T)
    Zb = engine.to_blocks(z)
    Sinv, logdet_shared, _ = engine.shared_factorization(params)
    u1, u2 = _trend_vectors(params)
    base = params.D * u1 + params.d * u2
    with np.errstate(over="ignore", invalid="ignore"):
        Lall = _mean_factors_all(params, T)
    if not np.all(np.isfinite(Lall)):
        raise SingularCovarianceError("jump decay kernel overflowed")
    Lf = np.repeat(Lall, X, axis=2)                     # (P, Tp, XC)
    RbaseHat = engine.Q.T @ (Zb - base[None, :])
    Lhat = np.einsum("tk,ptj->pkj", engine.Q, Lf)
    Rhat = RbaseHat[None] - Lhat * params.mu_flat[None, None, :]
    Y = np.einsum("kij,pkj->pki", Sinv, Rhat)
    quad = np.einsum("pki,pki->p", Rhat, Y)
    P = Lall.shape[0]
    logdets = np.full(P, logdet_shared)
    if use_jump_cov and params.sigma_J > 0:
        nj = T                                          # exclude the no-jump slice
        A = np.einsum("pki,pkj,kij->pij", Lhat[:nj], Lhat[:nj], Sinv)
        Cp = params.sigma_J ** 2 * A
        idx = np.arange(engine.XC)
        Cp[:, idx, idx] += 1.0
        w = params.sigma_J * np.einsum("pki,pki->pi", Lhat[:nj], Y[:nj])
        try:
            cho = np.linalg.cholesky(Cp)
        except np.linalg.LinAlgError:
            if diagonal_inflation <= 0:
                raise SingularCovarianceError(
                    "jump covariance update is not positive definite")
            Cp[:, idx, idx] += diagonal_inflation
            try:
                cho = np.linalg.cholesky(Cp)
            except np.linalg.LinAlgError:
                raise SingularCovarianceError(
                    "jump covariance update is not positive definite")
        v = np.linalg.solve(cho, w[:, :, None])[:, :, 0]
        quad[:nj] -= np.einsum("pi,pi->p", v, v)
        diag = np.diagonal(cho, axis1=1, axis2=2)
        logdets[:nj] += 2.0 * np.sum(np.log(diag), axis=1)
    #  the quadratic forms are nonnegative for PD covariances
    neg = quad < 0
    if np.any(neg):
        if quad.min() < -1e-6 * (1.0 + np.abs(quad).max()):
            raise SingularCovarianceError(
                "covariance quadratic form lost positivity")
        quad[neg] = 0.0
    if not (np.all(np.isfinite(quad)) and np.all(np.isfinite(logdets))):
        raise SingularCovarianceError("non-finite covariance factorization")
    logfs = -0.5 * (engine.n * LOG2PI + logdets + quad)
    return enumerate_patterns(T), logfs


def _logsumexp_ordered(vals):
    vals = np.asarray(vals)
    m = np.max(vals)
    return float(m + np.log(np.sum(np.exp(vals - m))))


def mixture_loglik(params, z, diagonal_inflation=0.0, return_parts=False):
    """Log likelihood of the improvement tensor under the full jump mixture.

    z is an (X, T-1, C) array (or anything with a ``.z`` attribute of that
    shape).  The mixture runs over jump years ascending with the no-jump
    pattern last."""
    patterns, logfs = _mixture_components(
        params, z, diagonal_inflation=diagonal_inflation)
    logws = np.array([pat.log_weight(params.p) for pat in patterns])
    terms = logws + logfs
    ll = _logsumexp_ordered(terms)
    if return_parts:
        resp = np.exp(terms - ll)
        return ll, {"patterns": patterns, "log_densities": logfs,
                    "log_weights": logws, "responsibilities": resp}
    return ll


def single_pattern_loglik(params, z):
    """Log density under the no-jump pattern alone (no mixture weight)."""
    z = getattr(z, "z", z)
    T = z.shape[1] + 1
    engine = SpectralEngine(params.X, params.C, T)
    Zb = engine.to_blocks(z)
    Sinv, logdet, _ = engine.shared_factorization(params)
    return _pattern_log_density(engine, params, Zb, Sinv, logdet,
                                JumpPattern(T, None))


def special_case_loglik(params, z, return_parts=False):
    """Likelihood in the reduced regime: degenerate severity (sigma_J = 0)
    and one-year shocks (gamma = 0).

    The covariance is then pattern independent, so one factorization serves
    every mixture component; only the means differ (a +mu block in the jump
    year and a -mu reversal the year after)."""
    reduced = params.copy()
    reduced.sigma_J = 0.0
    reduced.gamma = np.zeros(params.C)
    patterns, logfs = _mixture_components(reduced, z, use_jump_cov=False)
    logws = np.array([pat.log_weight(reduced.p) for pat in patterns])
    terms = logws + logfs
    ll = _logsumexp_ordered(terms)
    if return_parts:
        resp = np.exp(terms - ll)
        return ll, {"patterns": patterns, "log_densities": logfs,
                    "log_weights": logws, "responsibilities": resp}
    return ll


# ---------------------------------------------------------------------------
# Analytic gradient in the reduced regime
# ---------------------------------------------------------------------------

SPECIAL_GRAD_NAMES = ("B", "D", "sigma_eta", "phi", "b", "d", "sigma_xi",
                      "mu", "sigma_e", "p")


def special_case_gradient(params, z):
    """Exact gradient of special_case_loglik.

    Returns a flat array ordered [B (X), D, sigma_eta, phi (C), b (X), d,
    sigma_xi, mu (X*C, flat index c*X+x), sigma_e, p].  Pattern
    responsibilities weight the per-component score; covariance trace terms
    are pattern independent and enter once."""
    z = getattr(z, "z", z)
    X, C = params.X, params.C
    T = z.shape[1] + 1
    XC = X * C
    reduced = params.copy()
    reduced.sigma_J = 0.0
    reduced.gamma = np.zeros(C)

    engine = SpectralEngine(X, C, T)
    Zb = engine.to_blocks(z)
    Sinv, logdet, _ = engine.shared_factorization(reduced)
    u1, u2 = _trend_vectors(reduced)
    base = reduced.D * u1 + reduced.d * u2
    patterns = enumerate_patterns(T)

    logfs = np.empty(len(patterns))
    s_list = []
    L_list = []
    quad_e = np.empty(len(patterns))     # sum_k (2-lam_k) |Y_k|^2 per pattern
    two_minus_lam = 2.0 - engine.lam
    for i, pat in enumerate(patterns):
        L = mean_factors(pat, reduced)
        Lf = np.repeat(L, X, axis=1)
        Rres = Zb - base[None, :] - Lf * reduced.mu_flat[None, :]
        Rhat = engine.Q.T @ Rres
        Y = np.einsum("kij,kj->ki", Sinv, Rhat)
        logfs[i] = -0.5 * (engine.n * LOG2PI + logdet + float(np.sum(Rhat * Y)))
        s_list.append(engine.Q @ Y)      # time-domain whitened residuals
        L_list.append(Lf)
        quad_e[i] = float(np.sum(two_minus_lam[:, None] * Y * Y))
    logws = np.array([pat.log_weight(reduced.p) for pat in patterns])
    terms = logws + logfs
    ll = _logsumexp_ordered(terms)
    resp = np.exp(terms - ll)

    # pattern-independent covariance trace terms
    P = Sinv.sum(axis=0)                 # sum over diagonal year blocks
    Pu1, Pu2 = P @ u1, P @ u2
    tr_sig_eta = float(u1 @ Pu1)
    tr_sig_xi = float(u2 @ Pu2)
    tr_sig_e = float(np.sum(two_minus_lam * np.trace(Sinv, axis1=1, axis2=2)))
    Pu1C = Pu1.reshape(C, X)
    Pu2C = Pu2.reshape(C, X)

    gB = np.zeros(X)
    gD = 0.0
    g_eta = 0.0
    gphi = np.zeros(C)
    gb = np.zeros(X)
    gd = 0.0
    g_xi = 0.0
    gmu = np.zeros(XC)
    g_e = 0.0
    gp = 0.0
    se2_eta = reduced.sigma_eta ** 2
    se2_xi = reduced.sigma_xi ** 2
    for i, pat in enumerate(patterns):
        w = resp[i]
        s = s_list[i]                    # (Tp, XC)
        sC = s.reshape(engine.Tp, C, X)
        Sbar = s.sum(axis=0)
        SbarC = Sbar.reshape(C, X)
        a1 = s @ u1                      # (Tp,)
        a2 = s @ u2
        # mean terms
        gD += w * float(u1 @ Sbar)
        gd += w * float(u2 @ Sbar)
        gB += w * reduced.D * SbarC.sum(axis=0)
        gphi += w * reduced.d * (SbarC @ reduced.b)
        gb += w * reduced.d * (reduced.phi @ SbarC)
        gmu += w * np.sum(L_list[i] * s, axis=0)
        # covariance quadratic terms
        g_eta += w * reduced.sigma_eta * float(a1 @ a1)
        g_xi += w * reduced.sigma_xi * float(a2 @ a2)
        gB += w * se2_eta * (a1 @ sC.sum(axis=1))
        gphi += w * se2_xi * ((sC @ reduced.b).T @ a2)
        gb += w * se2_xi * (np.einsum("c,tcx->tx", reduced.phi, sC).T @ a2)
        g_e += w * reduced.sigma_e * quad_e[i]
        gp += w * pat.d_log_weight(reduced.p)
    g_eta -= reduced.sigma_eta * tr_sig_eta
    g_xi -= reduced.sigma_xi * tr_sig_xi
    g_e -= reduced.sigma_e * tr_sig_e
    gB -= se2_eta * Pu1C.sum(axis=0)
    gphi -= se2_xi * (Pu2C @ reduced.b)
    gb -= se2_xi * (reduced.phi @ Pu2C)
    return np.concatenate([gB, [gD, g_eta], gphi, gb, [gd, g_xi],
                           gmu, [g_e, gp]])


def information_criteria(loglik, n_params, n_obs):
    """AIC and BIC from a maximized log likelihood."""
    return {"loglik": float(loglik),
            "n_params": int(n_params),
            "n_obs": int(n_obs),
            "aic": float(-2.0 * loglik + 2.0 * n_params),
            "bic": float(-2.0 * loglik + n_params * math.log(n_obs))}
