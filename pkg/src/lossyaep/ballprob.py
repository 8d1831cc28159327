"""Distortion-ball probabilities Qⁿ(B(x, D)) and the second-order AEP split.

The ball is closed: B(x, D) = {y : Σ ρ(xᵢ, yᵢ) ≤ nD}. Exact values come
from a dynamic program over integer total costs, which needs a distortion
matrix on a common grid Δ. Sequences are index arrays into the row (source)
and column (reproduction) alphabets of ``rho``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import (
    GRID_ATOL,
    DistortionMeasure,
    FiniteDistribution,
    LatticeBlock,
    MarkovSource,
    substream,
)
from .ratefn import per_letter_terms, rate_r1

MAX_DP_STATES = 10_000_000
MAX_BRUTE = 10_000_000


@dataclass(frozen=True, eq=False)
class BallQuery:
    x: np.ndarray
    Q: FiniteDistribution
    rho: DistortionMeasure
    D: float

    def __init__(self, x, Q, rho, D):
        if isinstance(x, LatticeBlock):
            x = x.values
        x = np.asarray(x, dtype=np.intp).reshape(-1)
        if x.size == 0:
            raise ValueError("ball query needs a nonempty sequence")
        if not math.isfinite(D) or D < 0:
            raise ValueError("D must be finite and nonnegative")
        if rho.shape[1] != len(Q):
            raise ValueError("rho columns must match the codebook alphabet")
        if x.min() < 0 or x.max() >= rho.shape[0]:
            raise ValueError("sequence symbol outside the source alphabet")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "D", float(D))

    @property
    def n(self) -> int:
        return self.x.size


class BallProb(NamedTuple):
    prob: float
    log_prob: float


class MCEstimate(NamedTuple):
    estimate: float
    std_error: float


@dataclass(frozen=True)
class AepDecomposition:
    """−log Qⁿ(B) = n R₁(P̂ₙ, Q, D) + ½ log n + residual, all in nats.

    When a model marginal is supplied the alternative split
    −log Qⁿ(B) = n R₁(P, Q, D) + Σ g(xᵢ) + ½ log n + residual_model
    is filled in as well.
    """

    n: int
    neg_log_ball: float
    n_r1_empirical: float
    half_log_n: float
    residual: float
    n_r1_model: float | None = None
    sum_g: float | None = None
    residual_model: float | None = None


def _query(x, Q, rho, D) -> BallQuery:
    return x if isinstance(x, BallQuery) else BallQuery(x, Q, rho, D)


def _require_grid(rho: DistortionMeasure):
    if rho.value_grid is None:
        raise ValueError("exact ball probability needs a distortion value_grid; "
                         "use ball_prob_mc for off-grid measures")


def _shift_add(f: np.ndarray, costs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Σ_b w_b · f shifted right by costs[b], truncated to len(f)."""
    T1 = f.shape[-1]
    out = np.zeros_like(f)
    for c, w in zip(costs, weights):
        if w == 0 or c >= T1:
            continue
        if c == 0:
            out += w * f
        else:
            out[..., c:] += w * f[..., :T1 - c]
    return out


def ball_prob_exact_dp(x, Q=None, rho=None, D=None) -> BallProb:
    """Exact Qⁿ(B(x, D)) by a convolution DP over total cost.

    Accepts a :class:`BallQuery` or ``(x, Q, rho, D)``. The running vector
    is rescaled by its maximum at each step and the scale accumulated in
    logs, so ``log_prob`` stays accurate where ``prob`` underflows.
    """
    q = _query(x, Q, rho, D)
    _require_grid(q.rho)
    C = q.rho.integer_costs()
    T = q.rho.threshold(q.n, q.D)
    if T < 0:
        return BallProb(0.0, -math.inf)
    if T + 1 > MAX_DP_STATES:
        raise OverflowError(f"{T + 1} cost states exceed the DP limit")
    qy = q.Q.probs
    sup = qy > 0
    worst = int(C[q.x][:, sup].max(axis=1).sum())
    if worst <= T:
        return BallProb(1.0, 0.0)
    f = np.zeros(T + 1)
    f[0] = 1.0
    log_scale = 0.0
    for a in q.x:
        f = _shift_add(f, C[a], qy)
        top = f.max()
        if top == 0.0:
            return BallProb(0.0, -math.inf)
        f /= top
        log_scale += math.log(top)
    log_p = log_scale + math.log(f.sum())
    log_p = min(log_p, 0.0)
    return BallProb(math.exp(log_p), log_p)


def ball_prob_bruteforce(x, Q=None, rho=None, D=None) -> float:
    """Sum of Qⁿ(y) over every y with ρₙ(x, y) ≤ D (small instances only)."""
    q = _query(x, Q, rho, D)
    k, n = len(q.Q), q.n
    total_count = k ** n
    if total_count > MAX_BRUTE:
        raise ValueError(f"{k}^{n} strings exceed the brute-force limit")
    rows = q.rho.matrix[q.x]                  # (n, k)
    logq = np.log(np.where(q.Q.probs > 0, q.Q.probs, 1.0))
    zero = q.Q.probs == 0
    limit = n * q.D + GRID_ATOL * max(1.0, n * q.D)
    place = k ** np.arange(n - 1, -1, -1)
    acc = 0.0
    chunk = 1 << 18
    for start in range(0, total_count, chunk):
        codes = np.arange(start, min(start + chunk, total_count))
        digits = (codes[:, None] // place[None, :]) % k          # (m, n)
        dist = rows[np.arange(n)[None, :], digits].sum(axis=1)
        ok = (dist <= limit) & ~zero[digits].any(axis=1)
        acc += float(np.exp(logq[digits[ok]].sum(axis=1)).sum())
    return acc


def ball_prob_mc(x, Q=None, rho=None, D=None, *, replicas: int = 10_000,
                 seed: int = 0) -> MCEstimate:
    """Frequency estimate of Qⁿ(B(x, D)) from i.i.d. draws of Y ~ Qⁿ."""
    q = _query(x, Q, rho, D)
    if replicas < 100:
        raise ValueError("at least 100 replicas required")
    rows = q.rho.matrix[q.x]
    n = q.n
    limit = n * q.D + GRID_ATOL * max(1.0, n * q.D)
    if rows[:, q.Q.probs > 0].max(axis=1).sum() <= limit:
        return MCEstimate(1.0, 0.0)
    rng = substream(seed, 0)
    cdf = np.cumsum(q.Q.probs)
    hits = 0
    per = max(1, 2_000_000 // n)
    done = 0
    while done < replicas:
        r = min(per, replicas - done)
        y = np.minimum(np.searchsorted(cdf, rng.random((r, n)), side="right"), len(cdf) - 1)
        dist = rows[np.arange(n)[None, :], y].sum(axis=1)
        hits += int((dist <= limit).sum())
        done += r
    p = hits / replicas
    return MCEstimate(p, math.sqrt(p * (1.0 - p) / replicas))


def ball_prob_markov(x, chain: MarkovSource, rho: DistortionMeasure, D: float) -> BallProb:
    """Exact probability that a stationary Markov Y lands in B(x, D).

    The DP runs over (context, total cost); the first ``order`` letters of Y
    are read off the stationary initial context.
    """
    _require_grid(rho)
    x = np.asarray(x.values if isinstance(x, LatticeBlock) else x, dtype=np.intp)
    n = x.size
    k, o = chain.alphabet_size, chain.order
    if rho.shape[1] != k:
        raise ValueError("rho columns must match the chain alphabet")
    if n < o:
        raise ValueError("sequence shorter than the chain order")
    C = rho.integer_costs()
    T = rho.threshold(n, D)
    if T < 0:
        return BallProb(0.0, -math.inf)
    S = k ** o
    if S * (T + 1) > MAX_DP_STATES:
        raise OverflowError("state count exceeds the DP limit")
    f = np.zeros((S, T + 1))
    for c in range(S):
        digits = [(c // k ** (o - 1 - j)) % k for j in range(o)]
        cost = sum(int(C[x[j], digits[j]]) for j in range(o))
        if cost <= T:
            f[c, cost] += chain.stationary_contexts[c]
    M = chain.lifted_matrix()
    last = chain.context_symbol()
    log_scale = 0.0
    for a in x[o:]:
        g = M.T @ f                       # mass entering each new context
        out = np.zeros_like(g)
        for c in range(S):
            cst = int(C[a, last[c]])
            if cst <= T:
                out[c, cst:] = g[c, :T + 1 - cst]
        top = out.max()
        if top == 0.0:
            return BallProb(0.0, -math.inf)
        f = out / top
        log_scale += math.log(top)
    log_p = min(log_scale + math.log(f.sum()), 0.0)
    return BallProb(math.exp(log_p), log_p)


def aep_decompose(x, Q: FiniteDistribution, rho: DistortionMeasure, D: float,
                  P: FiniteDistribution | None = None) -> AepDecomposition:
    """Split −log Qⁿ(B(x, D)) into its first- and second-order terms.

    A zero ball probability gives ``neg_log_ball = inf`` (and an infinite
    residual) rather than an exception.
    """
    q = BallQuery(x, Q, rho, D)
    n = q.n
    bp = ball_prob_exact_dp(q)
    neg_log = -bp.log_prob
    symbols = P.symbols if P is not None else tuple(range(rho.shape[0]))
    P_hat = FiniteDistribution(symbols, np.bincount(q.x, minlength=len(symbols)) / n)
    pt = rate_r1(P_hat, Q, rho, D)
    n_r1 = n * pt.r1_nats
    half = 0.5 * math.log(n)
    residual = neg_log - n_r1 - half
    if P is None:
        return AepDecomposition(n, neg_log, n_r1, half, residual)
    terms = per_letter_terms(P, Q, rho, D)
    g = terms.g_array()
    n_r1_model = n * rate_r1(P, Q, rho, D).r1_nats
    sum_g = float(g[q.x].sum())
    residual_model = neg_log - n_r1_model - sum_g - half
    return AepDecomposition(n, neg_log, n_r1, half, residual, n_r1_model, sum_g, residual_model)


def densities_vs_balls(x, P, Q: FiniteDistribution, rho: DistortionMeasure,
                       D: float) -> float:
    """(1/n) log[Pₙ(B(x, D)) / Qⁿ(B(x, D))] with both balls computed exactly.

    ``P`` is a FiniteDistribution (i.i.d.) or a MarkovSource on the
    reproduction alphabet. As n grows and D shrinks this tracks H(P ‖ Q).
    """
    x = np.asarray(x, dtype=np.intp)
    n = x.size
    if isinstance(P, MarkovSource):
        lp = ball_prob_markov(x, P, rho, D).log_prob
    else:
        lp = ball_prob_exact_dp(x, P, rho, D).log_prob
    lq = ball_prob_exact_dp(x, Q, rho, D).log_prob
    return (lp - lq) / n

