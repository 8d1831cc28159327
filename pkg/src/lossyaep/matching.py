"""Waiting times, match-lengths and their duality, in one and d dimensions.

Both statistics compare a prefix of X with overlapping windows of an
independent realization Y. Window distortions are accumulated one letter
of the pattern at a time over a whole chunk of start positions, which
costs O(n) vector operations per chunk of shifts.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .model import GRID_ATOL, DistortionMeasure, FieldSource, LatticeBlock

DEFAULT_HORIZON = 1 << 32


@dataclass(frozen=True)
class MatchSample:
    """One waiting time (``kind='wait'``) or match length (``kind='match'``).

    ``value`` is None when no match turned up within the search horizon;
    for match lengths ``capped`` marks a search that reached ℓ_max.
    """

    kind: str
    n: int
    value: int | None
    ball_log_prob: float | None = None
    x_seed: int | None = None
    y_seed: int | None = None
    capped: bool = False
    d: int = 1

    @property
    def found(self) -> bool:
        return self.value is not None


@dataclass(frozen=True)
class FieldMatchSample:
    d: int
    n: int
    W: int | None
    horizon: int

    @property
    def found(self) -> bool:
        return self.W is not None


def _costs(rho: DistortionMeasure):
    """Cost matrix and a per-length threshold function for ρ_ℓ ≤ D."""
    if rho.value_grid is not None:
        return rho.integer_costs(), lambda ell, D: rho.threshold(ell, D)
    return rho.matrix, lambda ell, D: ell * D + GRID_ATOL * max(1.0, ell * D)


def window_distortions(x, y, rho: DistortionMeasure) -> np.ndarray:
    """Total cost of x against every full window of y (in grid units if gridded)."""
    C, _ = _costs(rho)
    x = np.asarray(x, dtype=np.intp)
    y = np.asarray(y, dtype=np.intp)
    n, shifts = x.size, y.size - x.size + 1
    if shifts < 1:
        return np.zeros(0, dtype=C.dtype)
    acc = np.zeros(shifts, dtype=C.dtype)
    for j in range(n):
        acc += C[x[j], y[j:j + shifts]]
    return acc


class _Lazy:
    """Growing prefix of a y-stream."""

    def __init__(self, stream):
        self.stream = stream
        self.buf = np.zeros(0, dtype=np.intp)

    def upto(self, k: int) -> np.ndarray:
        if k > self.buf.size:
            self.buf = np.concatenate([self.buf, self.stream.take(k - self.buf.size)])
        return self.buf[:k]


def waiting_time(x, y_stream, rho: DistortionMeasure, D: float, horizon: int = DEFAULT_HORIZON,
                 *, chunk: int = 1024, x_seed=None, y_seed=None) -> MatchSample:
    """First start position i ≥ 1 with ρₙ(x, y_i^{i+n−1}) ≤ D.

    ``y_stream`` is a source stream (anything with ``take(k)``) or an
    already drawn array; an array shorter than the horizon caps the search.
    """
    x = np.asarray(x, dtype=np.intp)
    n = x.size
    C, thr = _costs(rho)
    limit = thr(n, D)
    is_array = isinstance(y_stream, (np.ndarray, list, tuple))
    lazy = None if is_array else _Lazy(y_stream)
    yarr = None if lazy else np.asarray(y_stream, dtype=np.intp)
    if yarr is not None:
        horizon = min(horizon, yarr.size - n + 1)
    start = 0
    while start < horizon:
        stop = min(start + chunk, horizon)
        y = lazy.upto(stop + n - 1) if lazy else yarr[:stop + n - 1]
        seg = y[start:stop + n - 1]
        d = window_distortions(x, seg, rho)
        hit = np.flatnonzero(d <= limit)
        if hit.size:
            return MatchSample("wait", n, start + int(hit[0]) + 1, x_seed=x_seed, y_seed=y_seed)
        start = stop
        chunk = min(chunk * 2, 1 << 20)
    return MatchSample("wait", n, None, x_seed=x_seed, y_seed=y_seed)


def match_length(x, y, rho: DistortionMeasure, D: float, ell_max: int, m: int | None = None,
                 *, x_seed=None, y_seed=None) -> MatchSample:
    """Largest ℓ ≤ ℓ_max with ρ_ℓ(x_1^ℓ, y_j^{j+ℓ−1}) ≤ D for some j ≤ m.

    D-closeness is not monotone in ℓ under average distortion, so every
    ℓ up to the cap is checked. ``x`` needs at least ℓ_max letters and
    ``y`` at least m + ℓ_max − 1 (windows may run past position m).
    Returns 0 when not even a single letter matches.
    """
    x = np.asarray(x, dtype=np.intp)
    y = np.asarray(y, dtype=np.intp)
    if m is None:
        m = y.size - ell_max + 1
    if m < 1:
        raise ValueError("database length m must be at least 1")
    if x.size < ell_max or y.size < m + ell_max - 1:
        raise ValueError("x or y too short for the requested ℓ_max")
    C, thr = _costs(rho)
    acc = np.zeros(m, dtype=C.dtype)
    best = 0
    for ell in range(1, ell_max + 1):
        acc += C[x[ell - 1], y[ell - 1:ell - 1 + m]]
        if acc.min() <= thr(ell, D):
            best = ell
    return MatchSample("match", m, best, x_seed=x_seed, y_seed=y_seed, capped=best == ell_max)


def default_ell_max(m: int, r1_nats: float, floor: int = 1) -> int:
    """⌈4 log m / R₁⌉, about four times the typical match length."""
    if r1_nats <= 0:
        return max(floor, 4 * max(1, math.ceil(math.log(m))))
    return max(floor, math.ceil(4.0 * math.log(m) / r1_nats))


# ---------------------------------------------------------------------------
# duality


@dataclass
class DualityReport:
    D: float
    m: int
    n_max: int
    match_length: int
    waits: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def duality_audit(x, y, rho: DistortionMeasure, D: float, n_max: int, m: int,
                  ell_max: int) -> DualityReport:
    """Check Wₙ ≤ m against Lₘ ≥ n on one realization pair.

    Waiting times come from :func:`waiting_time` with horizon m and the
    match length from :func:`match_length`, two separate scans of the same
    data. For D = 0 the equivalence Wₙ ≤ m ⇔ Lₘ ≥ n is checked for all
    n ≤ n_max; otherwise the implications Wₙ ≤ m ⇒ Lₘ ≥ n and
    Lₘ ≥ n ⇒ min_{n ≤ k ≤ ℓ_max} W_k ≤ m.
    """
    x = np.asarray(x, dtype=np.intp)
    y = np.asarray(y, dtype=np.intp)
    L = match_length(x, y, rho, D, ell_max, m).value
    rep = DualityReport(D, m, n_max, L)
    ylim = y[:m + ell_max - 1]

    def W(k):
        if k not in rep.waits:
            rep.waits[k] = waiting_time(x[:k], ylim, rho, D, horizon=m).value
        return rep.waits[k]

    exact = D == 0
    for n in range(1, n_max + 1):
        w_ok = W(n) is not None
        if w_ok and not L >= n:
            rep.violations.append((n, "W<=m but L<n"))
        if exact and L >= n and not w_ok:
            rep.violations.append((n, "L>=n but W>m"))
    if not exact:
        for n in range(1, min(L, n_max) + 1):
            # W_L is tried first; it settles every n ≤ L when it is ≤ m
            if not any(W(k) is not None for k in itertools.chain([L], range(n, ell_max + 1))):
                rep.violations.append((n, "L>=n but inf_k W_k > m"))
    return rep


# ---------------------------------------------------------------------------
# strong approximation band


@dataclass(frozen=True)
class BandRow:
    n: int
    count: int
    inside: int
    below: int
    above: int

    @property
    def inside_fraction(self) -> float:
        return self.inside / self.count if self.count else math.nan


@dataclass
class BandReport:
    epsilon: float
    d: int
    rows: list

    def row(self, n: int) -> BandRow:
        return next(r for r in self.rows if r.n == n)

    @property
    def nondecreasing(self) -> bool:
        fr = [r.inside_fraction for r in self.rows]
        return all(b >= a for a, b in zip(fr, fr[1:]))


def band_edges(n: int, epsilon: float, d: int = 1) -> tuple[float, float]:
    """[−(1+ε) log n, (d+1+ε) log n] for log[W^d · Q(B)]."""
    ln = math.log(n)
    return -(1.0 + epsilon) * ln, (d + 1.0 + epsilon) * ln


def strong_approx_audit(samples, epsilon: float = 1.0, d: int | None = None) -> BandReport:
    """Fraction of samples with log[Wᵈ Q(B)] inside the band, per n.

    Unfound samples count as above the band.
    """
    if d is None:
        d = samples[0].d if samples else 1
    by_n: dict[int, list] = {}
    for s in samples:
        if s.ball_log_prob is None:
            raise ValueError("samples need ball_log_prob")
        by_n.setdefault(s.n, []).append(s)
    rows = []
    for n in sorted(by_n):
        lo, hi = band_edges(n, epsilon, d)
        inside = below = above = 0
        for s in by_n[n]:
            if s.value is None:
                above += 1
                continue
            v = d * math.log(s.value) + s.ball_log_prob
            if v < lo - 1e-12:
                below += 1
            elif v > hi + 1e-12:
                above += 1
            else:
                inside += 1
        rows.append(BandRow(n, len(by_n[n]), inside, below, above))
    return BandReport(epsilon, d, rows)


# ---------------------------------------------------------------------------
# random fields


def field_window_distortions(xb: np.ndarray, yw: np.ndarray, rho: DistortionMeasure) -> np.ndarray:
    """Total cost of the n^d pattern against every full window of yw."""
    C, _ = _costs(rho)
    n = xb.shape[0]
    shifts = tuple(s - n + 1 for s in yw.shape)
    acc = np.zeros(shifts, dtype=C.dtype)
    for off in np.ndindex(*xb.shape):
        sl = tuple(slice(o, o + k) for o, k in zip(off, shifts))
        acc += C[xb[off], yw[sl]]
    return acc


def waiting_time_field(x_block: LatticeBlock, y_field: FieldSource, y_seed: int,
                       rho: DistortionMeasure, D: float, horizon: int = 1 << 12) -> FieldMatchSample:
    """Smallest i with a D-match at some u ∈ [0, i−1]^d.

    Searches cubes [0, s)^d of doubling side s. Within a cube the answer is
    1 + min over matching u of max_j u_j, so it does not depend on the scan
    order.
    """
    xb = x_block.array
    n, d = x_block.side, x_block.dimension
    _, thr = _costs(rho)
    limit = thr(n ** d, D)
    s = 1
    while True:
        s = min(s, horizon)
        yw = y_field.window(y_seed, s + n - 1)
        acc = field_window_distortions(xb, yw, rho)
        hit = np.argwhere(acc <= limit)
        if hit.size:
            return FieldMatchSample(d, n, int(hit.max(axis=1).min()) + 1, horizon)
        if s >= horizon:
            return FieldMatchSample(d, n, None, horizon)
        s *= 2
