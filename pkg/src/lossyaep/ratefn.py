"""Rate functions by convex duality.

All rates are in nats internally; ``*_bits`` values are converted at the
boundary with ``LOG2E``. The log-moment generating function of the
distortion under the codebook marginal is

    Λ_x(λ) = log Σ_y Q(y) exp(λ ρ(x, y)),   Λ(λ) = Σ_x P(x) Λ_x(λ),

and the rate function is its Legendre transform on λ ≤ 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .model import (
    DistortionMeasure,
    FiniteDistribution,
    Gaussian,
    IIDSource,
    MarkovSource,
    distortion_stats,
)

LOG2E = 1.0 / math.log(2.0)
ROOT_RTOL = 1e-10
BOUNDARY_ATOL = 1e-12


class RateStatus(str, Enum):
    INTERIOR = "interior"
    ZERO_RATE = "zero-rate"
    BOUNDARY_MIN = "boundary-min"
    INFEASIBLE_LOW = "infeasible-low"


class InfeasibleDistortion(ValueError):
    """Requested distortion lies below D_min; the ball is empty."""


class DegenerateDistortion(ValueError):
    """rho(x, .) is Q-a.s. constant, so Λ is linear and R₁ is undefined."""


@dataclass(frozen=True)
class RatePoint:
    distortion: float
    lambda_star: float
    big_lambda: float
    r1_nats: float
    r1_bits: float
    status: RateStatus = RateStatus.INTERIOR


@dataclass(frozen=True)
class PerLetterTerms:
    g: dict
    h: dict
    sigma2_coding: float
    lambda_star: float = 0.0

    def g_array(self) -> np.ndarray:
        return np.array(list(self.g.values()))

    def h_array(self) -> np.ndarray:
        return np.array(list(self.h.values()))


@dataclass(frozen=True)
class RDSolution:
    rate_bits: float
    q_star: FiniteDistribution
    iterations: int
    gap_bound: float
    slope: float = 0.0

    @property
    def rate_nats(self) -> float:
        return self.rate_bits / LOG2E


class LogMGF(NamedTuple):
    value: float
    d1: float
    d2: float


# ---------------------------------------------------------------------------
# finite-alphabet core; weights may be an unnormalized measure


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(a, dtype=float))


def _lse(t: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(t, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(m, axis) + np.log(np.exp(t - m).sum(axis=axis))


def _tilted(logw: np.ndarray, rho: np.ndarray, lam: float):
    """Per-row Λ_x, tilted mean and tilted variance of ρ(x, ·)."""
    t = logw[None, :] + lam * rho
    m = t.max(axis=1, keepdims=True)
    e = np.exp(t - m)
    z = e.sum(axis=1)
    w = e / z[:, None]
    mean = (w * rho).sum(axis=1)
    var = (w * (rho - mean[:, None]) ** 2).sum(axis=1)
    return m[:, 0] + np.log(z), mean, var


class _FiniteDual:
    """Λ and its derivatives for a fixed (P, weights, ρ) with P restricted to its support."""

    def __init__(self, p: np.ndarray, logw: np.ndarray, rho: np.ndarray):
        keep = p > 0
        self.p = p[keep]
        self.rho = rho[keep]
        self.logw = logw
        cols = np.isfinite(logw)
        if not cols.any():
            raise ValueError("codebook measure has empty support")
        sub = self.rho[:, cols]
        self.d_min = float(self.p @ sub.min(axis=1))
        self.d_mean0 = self.d1(0.0)

    def terms(self, lam: float):
        return _tilted(self.logw, self.rho, lam)

    def value(self, lam: float) -> float:
        return float(self.p @ self.terms(lam)[0])

    def d1(self, lam: float) -> float:
        return float(self.p @ self.terms(lam)[1])

    def d2(self, lam: float) -> float:
        return float(self.p @ self.terms(lam)[2])

    def boundary_value(self) -> float:
        """lim_{λ→-∞} [λ D_min − Λ(λ)] = −Σ_x P(x) log w(argmin set of x)."""
        cols = np.isfinite(self.logw)
        sub = np.where(cols[None, :], self.rho, np.inf)
        at_min = np.abs(sub - sub.min(axis=1, keepdims=True)) <= BOUNDARY_ATOL
        lw = np.where(at_min, self.logw[None, :], -np.inf)
        return float(-(self.p @ _lse(lw, axis=1)))


def _solve_root(fprime, D: float, d_at_zero: float, hi: float = 0.0) -> float:
    """Unique λ<0 with Λ'(λ) = D given Λ'(0) = d_at_zero > D (Λ' increasing)."""
    lo = -1.0
    for _ in range(1100):
        if fprime(lo) < D:
            break
        hi, lo = lo, 2.0 * lo
    else:
        raise InfeasibleDistortion(f"no root of Λ'(λ) = {D!r} found")
    lam = brentq(lambda t: fprime(t) - D, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                 maxiter=500)
    return float(lam)


def _check_finite(P, Q, rho):
    if not isinstance(P, FiniteDistribution) or not isinstance(Q, FiniteDistribution):
        raise TypeError("expected FiniteDistribution marginals")
    if rho.shape != (len(P), len(Q)):
        raise ValueError(f"rho has shape {rho.shape}, expected {(len(P), len(Q))}")


def _finite_dual(P, Q, rho) -> _FiniteDual:
    _check_finite(P, Q, rho)
    return _FiniteDual(P.probs, _log(Q.probs), rho.matrix)


def _dual_point(dual: _FiniteDual, D: float) -> RatePoint:
    """Legendre transform of a finite dual at D (weights may be unnormalized)."""
    if D < dual.d_min - BOUNDARY_ATOL:
        return RatePoint(D, -math.inf, -math.inf, math.inf, math.inf, RateStatus.INFEASIBLE_LOW)
    if D <= dual.d_min + BOUNDARY_ATOL and dual.d_mean0 > dual.d_min + BOUNDARY_ATOL:
        r = dual.boundary_value()
        return RatePoint(D, -math.inf, math.nan, r, r * LOG2E, RateStatus.BOUNDARY_MIN)
    if D >= dual.d_mean0:
        big = dual.value(0.0)
        return RatePoint(D, 0.0, big, -big, -big * LOG2E, RateStatus.ZERO_RATE)
    lam = _solve_root(dual.d1, D, dual.d_mean0)
    big = dual.value(lam)
    r = lam * D - big
    return RatePoint(D, lam, big, r, r * LOG2E, RateStatus.INTERIOR)


# ---------------------------------------------------------------------------
# Gaussian marginals, squared error


def _gauss_params(P: Gaussian, Q: Gaussian):
    # Λ depends on P only through E(X - μ_Q)^2
    return P.variance + (P.mean - Q.mean) ** 2, Q.variance


def _gauss_lmgf(s: float, tau2: float, lam: float) -> LogMGF:
    a = 1.0 - 2.0 * lam * tau2
    return LogMGF(
        -0.5 * math.log(a) + lam * s / a,
        tau2 / a + s / a ** 2,
        2.0 * tau2 ** 2 / a ** 2 + 4.0 * tau2 * s / a ** 3,
    )


def gaussian_rate_closed_form(sigma2: float, tau2: float, D: float) -> float:
    """R₁ in nats for an N(0, σ²) source against an N(0, τ²) codebook.

    Returns ``inf`` at D = 0 and 0 for D ≥ σ² + τ².
    """
    if D <= 0:
        return math.inf
    if D >= sigma2 + tau2:
        return 0.0
    v = 0.5 * (tau2 + math.sqrt(tau2 ** 2 + 4.0 * D * sigma2))
    return 0.5 * math.log(v / D) - (v - D) * (v - sigma2) / (2.0 * v * tau2)


def _gaussian_point(P: Gaussian, Q: Gaussian, D: float) -> RatePoint:
    s, tau2 = _gauss_params(P, Q)
    if D < 0:
        return RatePoint(D, -math.inf, -math.inf, math.inf, math.inf, RateStatus.INFEASIBLE_LOW)
    if D == 0:
        return RatePoint(D, -math.inf, math.nan, math.inf, math.inf, RateStatus.BOUNDARY_MIN)
    if D >= s + tau2:
        return RatePoint(D, 0.0, 0.0, 0.0, 0.0, RateStatus.ZERO_RATE)
    lam = _solve_root(lambda t: _gauss_lmgf(s, tau2, t).d1, D, s + tau2)
    big = _gauss_lmgf(s, tau2, lam).value
    r = lam * D - big
    return RatePoint(D, lam, big, r, r * LOG2E, RateStatus.INTERIOR)


# ---------------------------------------------------------------------------
# public operations


def logmgf(Q, rho, x, lam: float) -> LogMGF:
    """Λ_x(λ) with its first two derivatives.

    ``x`` is the row index of a source letter in ``rho``, or a real number
    when ``Q`` is a :class:`Gaussian` (``rho`` is then ignored and squared
    error used). :func:`logmgf_table` evaluates every row at once.
    """
    if lam > 0:
        raise ValueError("λ must be ≤ 0")
    if isinstance(Q, Gaussian):
        return _gauss_lmgf((float(x) - Q.mean) ** 2, Q.variance, lam)
    row = rho.matrix[int(x)][None, :]
    L, m, v = _tilted(_log(Q.probs), row, lam)
    return LogMGF(float(L[0]), float(m[0]), max(float(v[0]), 0.0))


def logmgf_table(Q: FiniteDistribution, rho: DistortionMeasure, lam: float):
    """(Λ_x, Λ_x′, Λ_x″) as arrays over every source letter x."""
    if lam > 0:
        raise ValueError("λ must be ≤ 0")
    return _tilted(_log(Q.probs), rho.matrix, lam)


def big_lambda(P, Q, rho, lam: float) -> LogMGF:
    """Λ(λ) = E_P Λ_X(λ) and its derivatives."""
    if lam > 0:
        raise ValueError("λ must be ≤ 0")
    if isinstance(P, Gaussian):
        s, tau2 = _gauss_params(P, Q)
        return _gauss_lmgf(s, tau2, lam)
    dual = _finite_dual(P, Q, rho)
    L, m, v = dual.terms(lam)
    return LogMGF(float(dual.p @ L), float(dual.p @ m), float(dual.p @ v))


def _reject_degenerate(P, Q, rho):
    if isinstance(P, Gaussian):
        return
    if distortion_stats(P, Q, rho).degenerate:
        raise DegenerateDistortion("distortion is constant under P x Q")


def lambda_star(P, Q, rho, D: float) -> float:
    """Root λ* < 0 of Λ′(λ) = D; 0 when D ≥ D_av.

    Raises :class:`InfeasibleDistortion` for D ≤ D_min, where the supremum
    defining the rate is approached only as λ → −∞.
    """
    pt = rate_r1(P, Q, rho, D)
    if pt.status in (RateStatus.INFEASIBLE_LOW, RateStatus.BOUNDARY_MIN):
        raise InfeasibleDistortion(f"D={D!r} is not above D_min ({pt.status.value})")
    return pt.lambda_star


def rate_r1(P, Q, rho, D: float) -> RatePoint:
    """R₁(P, Q, D) = sup_{λ≤0} [λD − Λ(λ)].

    Outside the open interval (D_min, D_av) a tagged point is returned:
    ``zero-rate`` above D_av, ``boundary-min`` exactly at D_min (finite
    limit value, λ* = −∞) and ``infeasible-low`` below it (rate ``inf``).
    """
    _reject_degenerate(P, Q, rho)
    if isinstance(P, Gaussian):
        return _gaussian_point(P, Q, D)
    pt = _dual_point(_finite_dual(P, Q, rho), D)
    if pt.status is RateStatus.ZERO_RATE:
        # Λ(0) = log ΣQ = 0 for a probability vector; drop the rounding
        return RatePoint(D, 0.0, 0.0, 0.0, 0.0, RateStatus.ZERO_RATE)
    return pt


def r1_curve(P, Q, rho, Ds) -> np.ndarray:
    """R₁ in nats over an array of distortion levels."""
    return np.array([rate_r1(P, Q, rho, float(D)).r1_nats for D in Ds])


def per_letter_terms(P: FiniteDistribution, Q: FiniteDistribution, rho: DistortionMeasure,
                     D: float) -> PerLetterTerms:
    """g(x) = Λ(λ*) − Λ_x(λ*), h = g·log₂e, and the coding variance Var_P[h]."""
    pt = rate_r1(P, Q, rho, D)
    if pt.status in (RateStatus.INFEASIBLE_LOW, RateStatus.BOUNDARY_MIN):
        raise InfeasibleDistortion(f"D={D!r} is not above D_min")
    Lx = _tilted(_log(Q.probs), rho.matrix, pt.lambda_star)[0]
    big = float(P.probs @ Lx)
    g = big - Lx
    h = g * LOG2E
    var = float(P.probs @ h ** 2 - (P.probs @ h) ** 2)
    return PerLetterTerms(
        g=dict(zip(P.symbols, g.tolist())),
        h=dict(zip(P.symbols, h.tolist())),
        sigma2_coding=max(var, 0.0),
        lambda_star=pt.lambda_star,
    )


# ---------------------------------------------------------------------------
# waiting-time variance


@dataclass(frozen=True)
class WaitingVariance:
    sigma2: float
    truncated: float
    tail_bound: float
    truncation: int


def markov_series_variance(chain: MarkovSource, g_symbol, K: int = 200) -> WaitingVariance:
    """σ² = E g(X₀)² + 2 Σ_{k≥1} E g(X₀) g(X_k) for a stationary chain.

    ``g_symbol`` gives g per source letter and must have stationary mean 0.
    The exact value uses the fundamental matrix; the truncated sum to lag
    ``K`` comes with a bound on the neglected tail.
    """
    T = chain.lifted_matrix()
    pi = chain.stationary_contexts
    g = np.asarray(g_symbol, dtype=float)[chain.context_symbol()]
    if abs(pi @ g) > 1e-9 * max(1.0, np.abs(g).max()):
        raise ValueError("g must have zero stationary mean")
    S = T.shape[0]
    one_pi = np.outer(np.ones(S), pi)
    Z = np.linalg.inv(np.eye(S) - T + one_pi)
    sigma2 = float(pi @ g ** 2 + 2.0 * pi @ (g * ((Z - np.eye(S)) @ g)))

    E = T - one_pi
    Ek = np.eye(S)
    v = g.copy()
    total = float(pi @ g ** 2)
    for _ in range(K):
        v = T @ v
        Ek = Ek @ E
        total += 2.0 * float(pi @ (g * v))
    # ‖E^{K+j+tm}‖ ≤ ‖E^{K+j}‖ β^t with β = ‖E^m‖ < 1
    tail = math.inf
    Em = np.eye(S)
    for m in range(1, 4 * S + 64):
        Em = Em @ E
        beta = np.abs(Em).sum(axis=1).max()
        if beta < 1.0:
            block = 0.0
            P_ = Ek.copy()
            for _ in range(m):
                P_ = P_ @ E
                block += np.abs(P_).sum(axis=1).max()
            tail = 2.0 * np.abs(g).max() ** 2 * block / (1.0 - beta)
            break
    return WaitingVariance(max(sigma2, 0.0), total, float(tail), K)


def waiting_variance(src, Q: FiniteDistribution, rho: DistortionMeasure, D: float,
                     K: int = 200) -> WaitingVariance:
    """Asymptotic variance of −log Q(B(X₁ⁿ, D)) − n R₁ for an i.i.d. or Markov source."""
    if isinstance(src, IIDSource):
        terms = per_letter_terms(src.marginal, Q, rho, D)
        g = terms.g_array()
        var = float(src.marginal.probs @ g ** 2)
        return WaitingVariance(var, var, 0.0, 0)
    if isinstance(src, MarkovSource):
        terms = per_letter_terms(src.marginal, Q, rho, D)
        return markov_series_variance(src, terms.g_array(), K)
    raise TypeError("waiting_variance needs an IIDSource or MarkovSource")


# ---------------------------------------------------------------------------
# Blahut–Arimoto for R(D) and the weighted rate r(D; P, M)


def _ba_sweep(logp, logK, logq, tol, max_iter):
    """Multiplicative updates at fixed slope until max_y log c(y) < tol.

    Rows of the kernel are rescaled by their maximum, which leaves the
    updates unchanged, so the sweep can run on plain probabilities.
    """
    shift = logK.max(axis=1)
    with np.errstate(under="ignore"):
        K = np.exp(logK - shift[:, None])
    p = np.exp(logp)
    q = np.exp(logq)
    it = 0
    while True:
        Z = K @ q
        c = (p / Z) @ K
        gap = float(np.log(c.max()))
        if gap < tol or it >= max_iter:
            with np.errstate(divide="ignore"):
                return np.log(q), np.log(Z) + shift, gap, it
        q = q * c
        q /= q.sum()
        it += 1


class _WeightedBA:
    def __init__(self, P: FiniteDistribution, logM: np.ndarray, rho: DistortionMeasure):
        keep = P.probs > 0
        self.p = P.probs[keep]
        self.logp = np.log(self.p)
        self.rho = rho.matrix[keep]
        self.logM = logM
        self.logq = np.full(rho.shape[1], -math.log(rho.shape[1]))
        self.iterations = 0

    def kernel(self, s):
        if s == -math.inf:
            at_min = np.abs(self.rho - self.rho.min(axis=1, keepdims=True)) <= BOUNDARY_ATOL
            logA = np.where(at_min, 0.0, -np.inf)
        else:
            logA = s * self.rho
        return logA - self.logM[None, :]

    def solve_slope(self, s, tol, max_iter=200_000):
        logK = self.kernel(s)
        self.logq, logZ, gap, it = _ba_sweep(self.logp, logK, self.logq, tol, max_iter)
        self.iterations += it
        return logK, logZ, gap

    def achieved(self, s, tol):
        logK, logZ, _ = self.solve_slope(s, tol)
        W = np.exp(self.logq[None, :] + logK - logZ[:, None])
        return float(self.p @ (W * self.rho).sum(axis=1))

    def bounds(self, s, D, tol):
        logK, logZ, gap = self.solve_slope(s, tol)
        sD = 0.0 if s == -math.inf else s * D
        lower = sD - float(self.p @ logZ) - gap
        dual = _FiniteDual(self.p, self.logq - self.logM, self.rho)
        upper = _dual_point(dual, D).r1_nats
        return lower, upper


def _weighted_solution(P: FiniteDistribution, M: np.ndarray, rho: DistortionMeasure, D: float,
                       tol_bits: float) -> RDSolution:
    if rho.shape[0] != len(P):
        raise ValueError("rho rows must match the source alphabet")
    M = np.asarray(M, dtype=float)
    if M.shape != (rho.shape[1],):
        raise ValueError("M must have one entry per reproduction letter")
    if np.any(~(M > 0)) or not np.all(np.isfinite(M)):
        raise ValueError("M must be strictly positive")
    logM = np.log(M)
    repro = tuple(range(rho.shape[1]))
    col_cost = P.probs @ rho.matrix
    lightest = np.flatnonzero(logM <= logM.min() + 1e-15)
    j = lightest[np.argmin(col_cost[lightest])]
    d_min = float(P.probs @ rho.matrix.min(axis=1))

    if D < d_min - BOUNDARY_ATOL:
        raise InfeasibleDistortion(f"D={D!r} is below D_min={d_min!r}")
    if D >= col_cost[j]:
        return RDSolution(float(logM[j]) * LOG2E, FiniteDistribution.point_mass(repro, j), 0, 0.0, 0.0)

    tol = tol_bits / LOG2E
    ba = _WeightedBA(P, logM, rho)
    if D <= d_min + BOUNDARY_ATOL:
        s = -math.inf
    else:
        inner = tol * 1e-3

        def f(t):
            return ba.achieved(t, inner) - D

        lo = -1.0
        if f(lo) < 0:
            hi = lo / 2.0
            while f(hi) < 0:
                lo, hi = hi, hi / 2.0
                if hi > -1e-300:
                    raise InfeasibleDistortion("slope search did not bracket D")
        else:
            hi = lo
            lo = 2.0 * lo
            while f(lo) >= 0:
                hi, lo = lo, 2.0 * lo
                if lo < -1e300:
                    raise InfeasibleDistortion("slope search diverged")
        s = brentq(f, lo, hi, xtol=1e-13, rtol=1e-13, maxiter=500)

    inner = tol * 1e-3
    for _ in range(20):
        lower, upper = ba.bounds(s, D, inner)
        if upper - lower < tol:
            break
        inner *= 1e-2
    gap = max(upper - lower, 0.0)
    q = np.exp(ba.logq)
    q_star = FiniteDistribution(repro, q / q.sum())
    return RDSolution(float(upper) * LOG2E, q_star, ba.iterations, gap * LOG2E, float(s))


def blahut_arimoto(P: FiniteDistribution, rho: DistortionMeasure, D: float,
                   tol: float = 1e-9) -> RDSolution:
    """R(D) = min_Q R₁(P, Q, D) and its minimizer Q*, certified by a duality gap.

    A slope s < 0 is found by root-finding so that the Blahut–Arimoto fixed
    point at s has distortion D. ``rate_bits`` is the dual value
    R₁(P, Q*, D), an upper bound on R(D); ``gap_bound`` bounds its excess.
    For D ≥ D̄ the rate is 0 and Q* is the point mass at the column
    minimizing E_P ρ(X, y).
    """
    sol = _weighted_solution(P, np.ones(rho.shape[1]), rho, D, tol)
    return sol


def weighted_rate(P: FiniteDistribution, M, rho: DistortionMeasure, D: float,
                  tol: float = 1e-9) -> float:
    """r(D; P, M) in nats.

    ``M`` is a positive mass function on the reproduction alphabet (an
    array or a FiniteDistribution). Equivalent to
    min over joint laws with E ρ ≤ D of I(X;Y) + E log M(Y).
    """
    if isinstance(M, FiniteDistribution):
        M = M.probs
    return _weighted_solution(P, M, rho, D, tol).rate_nats


def rd_binary_hamming(p: float, D: float) -> float:
    """Classical R(D) = h(p) − h(D) in nats for a Bernoulli(p) source, D < min(p, 1−p)."""
    def h(t):
        return 0.0 if t in (0.0, 1.0) else -(t * math.log(t) + (1 - t) * math.log(1 - t))
    return max(h(p) - h(D), 0.0) if D < min(p, 1 - p) else 0.0
