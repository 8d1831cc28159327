"""End-to-end acceptance suite: twelve criteria at their stated tolerances.

Each test records one PASS/FAIL line (printed in the terminal summary and
to stdout) and then asserts it, so a red criterion stays red.
"""

import math
import time
from pathlib import Path

import numpy as np
from conftest import ACCEPTANCE_LINES

from lossyaep import experiments
from lossyaep.ballprob import ball_prob_bruteforce, ball_prob_exact_dp
from lossyaep.codec import CodebookSpec, first_match_index
from lossyaep.model import (
    SQUARED_ERROR,
    DistortionMeasure,
    FieldSource,
    FiniteDistribution,
    Gaussian,
    LatticeBlock,
)
from lossyaep.matching import waiting_time_field
from lossyaep.ratefn import (
    blahut_arimoto,
    gaussian_rate_closed_form,
    per_letter_terms,
    rate_r1,
    waiting_variance,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
U2 = FiniteDistribution.uniform((0, 1))
HAM = DistortionMeasure.hamming(2)


def h2(t):
    return -(t * math.log2(t) + (1 - t) * math.log2(1 - t))


def record(k, title, ok, detail, elapsed, limit):
    in_time = elapsed < limit
    passed = bool(ok and in_time)
    line = (f"criterion {k:>2} [{'PASS' if passed else 'FAIL'}] {title}: {detail}; "
            f"{elapsed:.1f}s (limit {limit:g}s)")
    ACCEPTANCE_LINES[k] = line
    print(line)
    return passed


def load(name, **over):
    return experiments.load_config(str(CONFIGS / name), **over)


def band(report, check_id):
    return next(b for b in report.bands if b.check_id == check_id)


def test_criterion_01_gaussian_closed_form():
    t0 = time.perf_counter()
    worst = 0.0
    grid = np.linspace(0.2, 3.0, 10)
    for s2 in grid:
        for t2 in grid:
            for frac in np.linspace(0.05, 0.95, 10):
                D = frac * (s2 + t2)
                num = rate_r1(Gaussian(s2), Gaussian(t2), SQUARED_ERROR, D).r1_nats
                worst = max(worst, abs(num - gaussian_rate_closed_form(s2, t2, D)))
    anchor = rate_r1(Gaussian(2.0), Gaussian(1.0), SQUARED_ERROR, 1.0)
    ok = (worst <= 1e-9 and abs(anchor.r1_nats - 0.5 * math.log(2)) <= 1e-9
          and abs(anchor.r1_bits - 0.5) <= 1e-9)
    detail = (f"max |numeric − closed| = {worst:.2e} nats over 1000 points; "
              f"R1(2,1,1) = {anchor.r1_bits:.12f} bits")
    assert record(1, "Gaussian closed form", ok, detail, time.perf_counter() - t0, 5)


def test_criterion_02_mismatch_curve():
    t0 = time.perf_counter()
    rep = experiments.run(load("mismatch.conf"))
    rates = np.array([r[2] for r in rep.rows])
    i0 = int(np.argmin(rates))
    ok = rep.passed
    detail = (f"min {rates[i0]:.12f} bits at e = {rep.rows[i0][0]:+.2f}; "
              f"rate(−0.5) = {rates[0]:.4f}, rate(+0.5) = {rates[-1]:.4f}; "
              f"slope difference (+ side minus − side) {band(rep, 'mismatch-asymmetry').value:.4f}")
    assert record(2, "mismatch curve", ok, detail, time.perf_counter() - t0, 5)


def test_criterion_03_binary_hamming():
    t0 = time.perf_counter()
    r1 = rate_r1(U2, U2, HAM, 0.25).r1_bits
    sol = blahut_arimoto(FiniteDistribution.bernoulli(0.3), HAM, 0.1)
    q = sol.q_star.probs[1]
    ok = (abs(r1 - 0.188722) <= 1e-6 and abs(r1 - (1 - h2(0.25))) <= 1e-9
          and abs(q - 0.25) <= 1e-6 and abs(sol.rate_bits - 0.412295) <= 1e-6
          and abs(sol.rate_bits - (h2(0.3) - h2(0.1))) <= 1e-6)
    detail = f"R1 = {r1:.7f} bits, Q*(1) = {q:.8f}, R(D) = {sol.rate_bits:.7f} bits"
    assert record(3, "binary-Hamming rate identity", ok, detail, time.perf_counter() - t0, 2)


def test_criterion_04_dp_vs_bruteforce():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, count = 0.0, 0
    for _ in range(1000):
        k = int(rng.integers(1, 5))
        j = int(rng.integers(1, 5))
        n = int(rng.integers(1, 9))
        m = rng.integers(0, 4, (k, j))
        q = rng.dirichlet(np.ones(j))
        x = rng.integers(0, k, n)
        D = int(rng.integers(0, 3 * n + 1)) / n
        Q = FiniteDistribution(range(j), q)
        rho = DistortionMeasure(m, value_grid=1.0)
        diff = abs(ball_prob_exact_dp(x, Q, rho, D).prob - ball_prob_bruteforce(x, Q, rho, D))
        worst = max(worst, diff)
        count += 1
    ok = worst <= 1e-12 and count >= 1000
    detail = f"max |DP − brute force| = {worst:.2e} over {count} instances"
    assert record(4, "ball-probability oracle equivalence", ok, detail, time.perf_counter() - t0, 30)


def test_criterion_05_generalized_aep():
    t0 = time.perf_counter()
    rep = experiments.run(load("aep.conf"))
    worst = band(rep, "aep-residual").value
    paths = len({r[5] for r in rep.rows})
    ns = sorted({r[0] for r in rep.rows})
    ok = rep.passed and paths == 20 and ns == [2 ** k for k in range(6, 13)]
    detail = f"max n·|excess| = {worst:.4f} (need ≤ 3) over {paths} paths, n = 2^6..2^12"
    assert record(5, "generalized AEP", ok, detail, time.perf_counter() - t0, 60)


def test_criterion_06_geometric_index_law():
    t0 = time.perf_counter()
    n, D = 16, 0.25
    x = np.array([0, 1, 1, 0, 1, 0, 0, 0, 1, 1, 0, 1, 0, 1, 1, 0])
    p = ball_prob_exact_dp(x, U2, HAM, D).prob
    idx = np.array([first_match_index(x, CodebookSpec(n, U2, s), HAM, D) for s in range(10_000)])
    parts, ok = [], True
    for k in (1, 2, 5, 10):
        th = (1 - p) ** k
        se = math.sqrt(th * (1 - th) / idx.size)
        emp = float(np.mean(idx > k))
        ok &= abs(emp - th) <= 3 * se
        parts.append(f"k={k}: {emp:.4f} vs {th:.4f}")
    detail = f"p = {p:.6f}; " + ", ".join(parts)
    assert record(6, "geometric law of the codebook index", ok, detail, time.perf_counter() - t0, 60)


def test_criterion_07_redundancy_bands():
    t0 = time.perf_counter()
    rep = experiments.run(load("redundancy.conf"))
    frac = band(rep, "redundancy-band").value
    med = float(np.median([r[2] / r[1] for r in rep.rows]))
    ok = frac >= 0.95
    detail = (f"inside fraction {frac:.3f} over {len(rep.rows)} blocks at n=512, slack 40 bits; "
              f"median rate {med:.4f} bits")
    assert record(7, "redundancy bands", ok, detail, time.perf_counter() - t0, 300)


def test_criterion_08_waiting_time_slln_band():
    t0 = time.perf_counter()
    rep = experiments.run(load("wait.conf"))
    frac = band(rep, "wait-strong-approx").value
    diff = band(rep, "wait-slln").value
    counts = {c.cell: c.count for c in rep.cells}
    ok = frac >= 0.9 and diff <= 0.05 and counts["(1/n)log W n=32"] == 300
    detail = f"inside fraction at n=32: {frac:.3f}; |mean (1/n)log W − R1| at n=24: {diff:.4f} nats"
    assert record(8, "waiting-time SLLN and strong approximation", ok, detail,
                  time.perf_counter() - t0, 300)


def test_criterion_09_waiting_time_clt():
    t0 = time.perf_counter()
    cfg = load("wait_markov.conf")
    src, Q, rho = cfg.model.source, cfg.model.Q, cfg.model.rho
    sigma2 = waiting_variance(src, Q, rho, 0.25).sigma2
    rep = experiments.run(cfg)
    ks = band(rep, "wait-clt-ks")
    ok = ks.passed
    if sigma2 > 1e-12:
        detail = f"KS p-value {ks.value:.3g} at n=48 (sigma^2 = {sigma2:.4g})"
    else:
        detail = (f"sigma^2 = {sigma2:.3g}: with a uniform codebook under Hamming distortion "
                  "g vanishes, so (log W − nR1)/(sigma sqrt n) is undefined")
    assert record(9, "waiting-time CLT", ok, detail, time.perf_counter() - t0, 600)


def test_criterion_10_match_length_and_duality():
    t0 = time.perf_counter()
    dual = experiments.run(load("duality.conf"))
    violations = {b.check_id: int(b.value) for b in dual.bands}
    lln = experiments.run(load("match.conf"))
    rel = band(lln, "match-lln").value
    med = next(c.median for c in lln.cells)
    r1 = rate_r1(U2, U2, HAM, 0.25).r1_nats
    ok = dual.passed and lln.passed and len(dual.rows) == 400 and len(lln.rows) == 200
    detail = (f"violations {violations}; median L/log m = {med:.4f} vs 1/R1 = {1 / r1:.4f} "
              f"(rel {rel:.3f}, need ≤ 0.15)")
    assert record(10, "match length LLN and duality", ok, detail, time.perf_counter() - t0, 600)


def test_criterion_11_random_fields():
    t0 = time.perf_counter()
    rep = experiments.run(load("field.conf"))
    frac = band(rep, "field-strong-approx").value
    fy = FieldSource(U2, 2)
    xb = LatticeBlock(2, 1, np.array([0]))
    W = np.array([waiting_time_field(xb, fy, s, HAM, 0.0).W for s in range(10_000)])
    ok = frac >= 0.9
    parts = []
    for i in (1, 2, 3):
        th = 2.0 ** (-i * i)
        emp = float(np.mean(W > i))
        ok &= abs(emp - th) <= 3 * math.sqrt(th * (1 - th) / W.size)
        parts.append(f"P(W>{i}) {emp:.4f} vs {th:.4f}")
    detail = f"inside fraction at n=4: {frac:.3f}; " + ", ".join(parts)
    assert record(11, "random fields", ok, detail, time.perf_counter() - t0, 600)


def random_permutation_measure(rng, group):
    """ρ(i, j) = f(i ⊕ j) on Z₂² or f(i − j mod 4) with f(1) = f(3), then relabelled."""
    idx = np.arange(4)
    if group == "xor":
        f = np.concatenate([[0], rng.integers(1, 5, 3)])
        m = f[idx[:, None] ^ idx[None, :]]
    else:
        a, b = rng.integers(1, 5, 2)
        f = np.array([0, a, b, a])
        m = f[(idx[:, None] - idx[None, :]) % 4]
    perm = rng.permutation(4)
    return DistortionMeasure(m[np.ix_(perm, perm)])


def _grid(P, rho):
    d_min = float(P.probs @ rho.matrix.min(axis=1))
    d_bar = float((P.probs @ rho.matrix).min())
    return np.linspace(d_min, d_bar, 12)[1:-1]


def test_criterion_12_variance_characterization():
    t0 = time.perf_counter()
    rng = np.random.default_rng(12)
    P = FiniteDistribution.uniform(range(4))
    worst_perm = 0.0
    for r in range(5):
        rho = random_permutation_measure(rng, group="xor" if r % 2 == 0 else "cyclic")
        assert rho.is_permutation_measure()
        for D in _grid(P, rho):
            q_star = blahut_arimoto(P, rho, D).q_star
            worst_perm = max(worst_perm, per_letter_terms(P, q_star, rho, D).sigma2_coding)
    rho = DistortionMeasure([[0, 1, 2, 3], [1, 0, 1, 2], [2, 1, 0, 1], [4, 4, 4, 0]])
    best_other = max(per_letter_terms(P, blahut_arimoto(P, rho, D).q_star, rho, D).sigma2_coding
                     for D in _grid(P, rho))
    ok = worst_perm <= 1e-12 and best_other > 1e-6
    detail = (f"max coding variance over 5 permutation measures = {worst_perm:.2e}; "
              f"non-permutation max = {best_other:.4g}")
    assert record(12, "variance characterization", ok, detail, time.perf_counter() - t0, 10)
