import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize
from scipy.special import logsumexp

from lossyaep.model import (
    SQUARED_ERROR,
    DistortionMeasure,
    FiniteDistribution,
    Gaussian,
    IIDSource,
    MarkovSource,
)
from lossyaep.ratefn import (
    LOG2E,
    DegenerateDistortion,
    InfeasibleDistortion,
    RateStatus,
    big_lambda,
    blahut_arimoto,
    gaussian_rate_closed_form,
    lambda_star,
    logmgf,
    markov_series_variance,
    per_letter_terms,
    rate_r1,
    rd_binary_hamming,
    waiting_variance,
    weighted_rate,
)

U2 = FiniteDistribution.uniform((0, 1))
HAM = DistortionMeasure.hamming(2)


def h2(t):
    return -(t * math.log2(t) + (1 - t) * math.log2(1 - t))


def legendre_oracle(P, Q, rho, D):
    """sup over λ ≤ 0 of λD − Σ P log Σ Q e^{λρ}, by bounded scalar search."""
    p, q, m = P.probs, Q.probs, rho.matrix

    def neg(lam):
        return -(lam * D - p @ logsumexp(lam * m, b=q[None, :], axis=1))

    vals = []
    for lo in (-5.0, -50.0, -400.0):
        r = optimize.minimize_scalar(neg, bounds=(lo, 0.0), method="bounded",
                                     options={"xatol": 1e-12})
        vals.append(-r.fun)
    return max(vals)


# -- Λ and λ* ---------------------------------------------------------------


def test_logmgf_uniform_hamming():
    for lam in (0.0, -0.3, -2.0):
        for x in (0, 1):
            v = logmgf(U2, HAM, x, lam).value
            assert v == pytest.approx(math.log(0.5 + 0.5 * math.exp(lam)), abs=1e-15)
    assert logmgf(U2, HAM, 0, 0.0).value == 0.0


def test_tilted_mean_by_hand():
    assert logmgf(U2, HAM, 1, -math.log(3)).d1 == pytest.approx(0.25, abs=1e-15)


def test_gaussian_logmgf_by_hand():
    assert logmgf(Gaussian(1.0), None, 0.0, -0.5).value == pytest.approx(-0.5 * math.log(2), abs=1e-15)


def test_gaussian_logmgf_vs_quadrature():
    # E_P log E_Q exp(λ(X−Y)²) for X ~ N(0, 2), Y ~ N(0, 1), by numerical integration
    lam = -0.4

    def inner(x):
        f = lambda y: math.exp(lam * (x - y) ** 2 - y * y / 2) / math.sqrt(2 * math.pi)
        return math.log(integrate.quad(f, -np.inf, np.inf)[0])

    def outer(x):
        return inner(x) * math.exp(-x * x / 4) / math.sqrt(4 * math.pi)

    val = integrate.quad(outer, -30, 30, limit=200)[0]
    assert big_lambda(Gaussian(2.0), Gaussian(1.0), None, lam).value == pytest.approx(val, abs=1e-9)


def test_lambda_star_binary():
    assert lambda_star(U2, U2, HAM, 0.25) == pytest.approx(math.log(1 / 3), abs=1e-9)


def test_lambda_star_tends_to_zero_at_d_av():
    lams = [lambda_star(U2, U2, HAM, 0.5 - eps) for eps in (1e-2, 1e-4, 1e-6)]
    assert all(b > a for a, b in zip(lams, lams[1:]))
    assert abs(lams[-1]) < 1e-4
    assert lambda_star(U2, U2, HAM, 0.5) == 0.0


def test_lambda_star_rejects_d_min():
    with pytest.raises(InfeasibleDistortion):
        lambda_star(U2, U2, HAM, 0.0)


def test_gaussian_lambda_star_consistent_with_closed_form():
    P, Q = Gaussian(2.0), Gaussian(1.0)
    lam = lambda_star(P, Q, SQUARED_ERROR, 1.0)
    big = big_lambda(P, Q, SQUARED_ERROR, lam).value
    assert lam * 1.0 - big == pytest.approx(gaussian_rate_closed_form(2.0, 1.0, 1.0), abs=1e-9)


# -- R₁ ---------------------------------------------------------------------


def test_r1_binary_uniform():
    pt = rate_r1(U2, U2, HAM, 0.25)
    assert pt.status is RateStatus.INTERIOR
    assert pt.r1_bits == pytest.approx(1 - h2(0.25), abs=1e-9)
    assert pt.r1_nats == pytest.approx(0.130812, abs=1e-6)
    assert pt.r1_bits == pytest.approx(0.188722, abs=1e-6)


def test_r1_zero_at_and_above_d_av():
    assert rate_r1(U2, U2, HAM, 0.5).r1_nats == 0.0
    assert rate_r1(U2, U2, HAM, 0.9).status is RateStatus.ZERO_RATE


def test_r1_boundary_and_infeasible():
    P = FiniteDistribution.bernoulli(0.3)
    pt = rate_r1(P, U2, HAM, 0.0)
    assert pt.status is RateStatus.BOUNDARY_MIN
    # D = 0 under Hamming: −Σ P(x) log Q(x)
    assert pt.r1_nats == pytest.approx(math.log(2), abs=1e-12)
    rho = DistortionMeasure([[0.5, 1.0], [1.0, 0.5]])
    assert rate_r1(P, U2, rho, 0.4).status is RateStatus.INFEASIBLE_LOW
    assert rate_r1(P, U2, rho, 0.4).r1_nats == math.inf


def test_r1_degenerate_rejected():
    with pytest.raises(DegenerateDistortion):
        rate_r1(U2, U2, DistortionMeasure(np.ones((2, 2))), 1.0)


@st.composite
def finite_instances(draw):
    k = draw(st.integers(2, 4))
    j = draw(st.integers(2, 4))
    w = st.floats(0.05, 1.0)
    p = np.array(draw(st.lists(w, min_size=k, max_size=k)))
    q = np.array(draw(st.lists(w, min_size=j, max_size=j)))
    m = np.array(draw(st.lists(st.lists(st.integers(0, 4), min_size=j, max_size=j),
                               min_size=k, max_size=k)), dtype=float)
    t = draw(st.floats(0.05, 0.95))
    P = FiniteDistribution(range(k), p / p.sum())
    Q = FiniteDistribution(range(j), q / q.sum())
    return P, Q, DistortionMeasure(m), t


@settings(max_examples=60, deadline=None)
@given(finite_instances())
def test_r1_matches_scalar_search(inst):
    P, Q, rho, t = inst
    d_min = P.probs @ rho.matrix.min(axis=1)
    d_av = P.probs @ rho.matrix @ Q.probs
    assume(d_av - d_min > 1e-3)
    D = d_min + t * (d_av - d_min)
    assert rate_r1(P, Q, rho, D).r1_nats == pytest.approx(legendre_oracle(P, Q, rho, D), abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(finite_instances())
def test_r1_convex_nonincreasing(inst):
    P, Q, rho, _ = inst
    d_min = P.probs @ rho.matrix.min(axis=1)
    d_av = P.probs @ rho.matrix @ Q.probs
    assume(d_av - d_min > 1e-2)
    Ds = np.linspace(d_min, d_av, 12)[1:]
    r = np.array([rate_r1(P, Q, rho, D).r1_nats for D in Ds])
    assert np.all(np.diff(r) <= 1e-10)
    assert np.all(np.diff(r, 2) >= -1e-8)


# -- Gaussian closed form -----------------------------------------------------


def test_gaussian_closed_form_values():
    assert gaussian_rate_closed_form(2.0, 1.0, 1.0) == pytest.approx(0.5 * math.log(2), abs=1e-15)
    assert gaussian_rate_closed_form(2.0, 1.0, 3.0) == 0.0
    assert gaussian_rate_closed_form(1.0, 1.0, 0.5) == pytest.approx(
        rate_r1(Gaussian(1.0), Gaussian(1.0), SQUARED_ERROR, 0.5).r1_nats, abs=1e-9)


# -- per-letter terms ---------------------------------------------------------


def test_uniform_q_hamming_g_vanishes():
    t = per_letter_terms(FiniteDistribution.bernoulli(0.3), U2, HAM, 0.2)
    assert np.allclose(t.g_array(), 0.0, atol=1e-15)
    assert t.sigma2_coding == pytest.approx(0.0, abs=1e-30)


def test_lossless_limit_of_h():
    P = FiniteDistribution.bernoulli(0.3)
    t = per_letter_terms(P, P, HAM, 1e-9)
    H = h2(0.3)
    assert t.h[0] == pytest.approx(-math.log2(0.7) - H, abs=1e-6)
    assert t.h[1] == pytest.approx(-math.log2(0.3) - H, abs=1e-6)
    assert t.h[0] == pytest.approx(-0.36672, abs=1e-5)
    assert t.h[1] == pytest.approx(0.85568, abs=1e-5)


@settings(max_examples=40, deadline=None)
@given(finite_instances())
def test_g_is_centred(inst):
    P, Q, rho, t = inst
    d_min = P.probs @ rho.matrix.min(axis=1)
    d_av = P.probs @ rho.matrix @ Q.probs
    assume(d_av - d_min > 1e-3)
    terms = per_letter_terms(P, Q, rho, d_min + t * (d_av - d_min))
    assert abs(P.probs @ terms.g_array()) < 1e-10


# -- waiting-time variance -----------------------------------------------------


def test_iid_variance_is_var_g():
    P = FiniteDistribution.bernoulli(0.3)
    Q = FiniteDistribution.bernoulli(0.4)
    g = per_letter_terms(P, Q, HAM, 0.15).g_array()
    wv = waiting_variance(IIDSource(P), Q, HAM, 0.15)
    assert wv.sigma2 == pytest.approx(P.probs @ g ** 2, abs=1e-15)


def test_uniform_hamming_variance_zero():
    assert waiting_variance(MarkovSource.two_state(0.8), U2, HAM, 0.25).sigma2 == pytest.approx(0.0, abs=1e-24)


def test_markov_series_geometric_oracle():
    # lag-k covariance of ±1 under p_stay=0.9 is 0.8^k, so σ² = 1 + 2·0.8/0.2 = 9
    chain = MarkovSource.two_state(0.9)
    wv = markov_series_variance(chain, [1.0, -1.0], K=40)
    assert wv.sigma2 == pytest.approx(9.0, abs=1e-10)
    exact_tail = 2 * 0.8 ** 41 / 0.2
    assert abs(wv.sigma2 - wv.truncated) == pytest.approx(exact_tail, rel=1e-6)
    assert abs(wv.sigma2 - wv.truncated) <= wv.tail_bound


def test_markov_series_vs_simulation():
    chain = MarkovSource((0, 1, 2), [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.3, 0.1, 0.6]])
    pi = chain.marginal.probs
    g = np.array([1.0, -0.5, 0.2])
    g = g - pi @ g
    wv = markov_series_variance(chain, g)
    n, reps = 400, 2000
    sums = np.array([g[chain.stream(5, r).take(n)].sum() for r in range(reps)])
    # finite-n variance differs from σ²n by O(1); 2000 replicas give ~3% sd
    assert sums.var() / n == pytest.approx(wv.sigma2, rel=0.12)


# -- Blahut–Arimoto and weighted rates --------------------------------------


def test_ba_binary():
    sol = blahut_arimoto(FiniteDistribution.bernoulli(0.3), HAM, 0.1)
    assert sol.q_star.probs[1] == pytest.approx((0.3 - 0.1) / (1 - 0.2), abs=1e-6)
    assert sol.rate_bits == pytest.approx(h2(0.3) - h2(0.1), abs=1e-6)
    assert sol.rate_bits == pytest.approx(0.412295, abs=1e-6)
    assert rd_binary_hamming(0.3, 0.1) * LOG2E == pytest.approx(0.412295, abs=1e-6)


def test_ba_zero_at_d_bar():
    sol = blahut_arimoto(FiniteDistribution.bernoulli(0.3), HAM, 0.3)
    assert sol.rate_bits == 0.0
    assert sol.q_star.probs.tolist() == [1.0, 0.0]


def _min_over_q(P, rho, D, grid=201):
    def r1(q):
        Q = FiniteDistribution((0, 1), [1 - q, q])
        try:
            return rate_r1(P, Q, rho, D).r1_nats
        except DegenerateDistortion:
            # point-mass codebook: rate 0 if its column already meets D
            col = P.probs @ rho.matrix[:, int(q > 0.5)]
            return 0.0 if D >= col else math.inf

    best = min(r1(q) for q in np.linspace(0.0, 1.0, grid))
    r = optimize.minimize_scalar(r1, bounds=(1e-9, 1 - 1e-9), method="bounded",
                                 options={"xatol": 1e-10})
    return min(best, r.fun)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 0.9), st.lists(st.integers(0, 3), min_size=4, max_size=4), st.floats(0.1, 0.8))
def test_ba_equals_min_over_q(p, ents, t):
    rho = DistortionMeasure(np.array(ents, dtype=float).reshape(2, 2))
    P = FiniteDistribution.bernoulli(p)
    d_min = P.probs @ rho.matrix.min(axis=1)
    d_bar = (P.probs @ rho.matrix).min()
    assume(d_bar - d_min > 1e-2)
    D = d_min + t * (d_bar - d_min)
    sol = blahut_arimoto(P, rho, D)
    assert sol.rate_nats == pytest.approx(_min_over_q(P, rho, D), abs=1e-6)


def _weighted_grid(P, M, D, steps=801):
    # min over W(y|x) on {0,1}² with E ρ ≤ D of I(X;Y) + E log M(Y), Hamming ρ
    a = np.linspace(0, 1, steps)[:, None]   # W(1|0)
    b = np.linspace(0, 1, steps)[None, :]   # W(0|1)
    p0, p1 = P.probs
    ok = p0 * a + p1 * b <= D + 1e-12
    joint = [p0 * (1 - a), p0 * a, p1 * b, p1 * (1 - b)]   # (0,0), (0,1), (1,0), (1,1)
    qy0 = joint[0] + joint[2]
    qy1 = joint[1] + joint[3]
    px = [p0, p0, p1, p1]
    qy = [qy0, qy1, qy0, qy1]
    info = np.zeros(np.broadcast(a, b).shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        for w, x, y in zip(joint, px, qy):
            info += np.where(w > 0, w * np.log(w / (x * y)), 0.0)
    obj = info + qy0 * math.log(M[0]) + qy1 * math.log(M[1])
    return float(np.where(ok, obj, np.inf).min())


def test_weighted_rate_unit_weights_is_rd():
    P = FiniteDistribution.bernoulli(0.3)
    assert weighted_rate(P, [1.0, 1.0], HAM, 0.1) == pytest.approx(
        blahut_arimoto(P, HAM, 0.1).rate_nats, abs=1e-9)


def test_weighted_rate_shift_by_log_c():
    P = FiniteDistribution.bernoulli(0.3)
    M = np.array([0.6, 0.4])
    base = weighted_rate(P, M, HAM, 0.1)
    assert weighted_rate(P, 3.5 * M, HAM, 0.1) == pytest.approx(base + math.log(3.5), abs=1e-8)


@pytest.mark.parametrize("D", [0.0, 0.02, 0.1])
def test_weighted_rate_vs_joint_grid(D):
    P = FiniteDistribution.bernoulli(0.3)
    Q = FiniteDistribution.bernoulli(0.6)
    got = weighted_rate(P, Q, HAM, D)
    assert got == pytest.approx(_weighted_grid(P, Q.probs, D), abs=2e-3)
    assert got <= _weighted_grid(P, Q.probs, D) + 1e-9
    if D == 0.0:
        assert got == pytest.approx(-P.relative_entropy(Q), abs=1e-9)
