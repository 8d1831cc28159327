"""Alphabets, distributions, distortion measures and seeded sources.

Sequences are handled internally as integer index arrays into an ordered
alphabet. Every random quantity is drawn from a generator derived from a
64-bit seed plus a tuple of integer keys, so any replica can be regenerated
in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, Sequence

import numpy as np

PROB_ATOL = 1e-12
GRID_ATOL = 1e-9


# ---------------------------------------------------------------------------
# seeds


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``.

    Keys act as a counter-style split of the seed namespace: the stream for
    replica ``r`` of cell ``c`` is ``substream(seed, c, r)`` and does not
    depend on how many other replicas were drawn.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """64-bit integer seed for ``(seed, *keys)``; recorded in CSV rows."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# distributions


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """Probability vector over an ordered finite alphabet."""

    symbols: tuple
    probs: np.ndarray

    def __init__(self, symbols: Iterable[Hashable], probs: Sequence[float]):
        symbols = tuple(symbols)
        p = np.array(probs, dtype=float)
        if p.ndim != 1 or len(p) != len(symbols):
            raise ValueError("symbols and probs must have the same length")
        if len(symbols) == 0:
            raise ValueError("empty alphabet")
        if len(set(symbols)) != len(symbols):
            raise ValueError("symbol labels must be unique")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > PROB_ATOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        p.flags.writeable = False
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, symbols) -> "FiniteDistribution":
        symbols = tuple(symbols)
        k = len(symbols)
        return cls(symbols, [1.0 / k] * k)

    @classmethod
    def bernoulli(cls, p: float) -> "FiniteDistribution":
        return cls((0, 1), [1.0 - p, p])

    @classmethod
    def point_mass(cls, symbols, index: int) -> "FiniteDistribution":
        p = np.zeros(len(tuple(symbols)))
        p[index] = 1.0
        return cls(symbols, p)

    def __len__(self) -> int:
        return len(self.symbols)

    def __repr__(self) -> str:
        body = ", ".join(f"{s!r}: {p:.6g}" for s, p in zip(self.symbols, self.probs))
        return f"FiniteDistribution({{{body}}})"

    @property
    def support(self) -> np.ndarray:
        return self.probs > 0

    def index(self, symbol) -> int:
        return self.symbols.index(symbol)

    def encode(self, labels: Iterable[Hashable]) -> np.ndarray:
        """Map a label sequence to an index array over this alphabet."""
        lookup = {s: i for i, s in enumerate(self.symbols)}
        try:
            return np.fromiter((lookup[s] for s in labels), dtype=np.intp)
        except KeyError as exc:
            raise ValueError(f"symbol {exc.args[0]!r} not in alphabet") from None

    def as_dict(self) -> dict:
        return dict(zip(self.symbols, self.probs.tolist()))

    def entropy(self) -> float:
        """Shannon entropy in nats."""
        p = self.probs[self.probs > 0]
        return float(-(p * np.log(p)).sum())

    def relative_entropy(self, other: "FiniteDistribution") -> float:
        """H(self || other) in nats; ``inf`` without absolute continuity."""
        p, q = self.probs, other.probs
        mask = p > 0
        if np.any(q[mask] == 0):
            return math.inf
        return float((p[mask] * np.log(p[mask] / q[mask])).sum())


def empirical_measure(x, symbols: Sequence[Hashable] | None = None) -> FiniteDistribution:
    """Empirical distribution of a label sequence.

    The alphabet defaults to the sorted set of labels occurring in ``x``;
    pass ``symbols`` to keep zero-count letters.
    """
    if isinstance(x, LatticeBlock):
        x = x.values
    labels = x.tolist() if isinstance(x, np.ndarray) else list(x)
    if not labels:
        raise ValueError("empirical measure of an empty sequence")
    symbols = tuple(sorted(set(labels))) if symbols is None else tuple(symbols)
    idx = FiniteDistribution.uniform(symbols).encode(labels)
    counts = np.bincount(idx, minlength=len(symbols))
    return FiniteDistribution(symbols, counts / len(labels))


# ---------------------------------------------------------------------------
# Gaussian marginals (squared-error distortion only)


@dataclass(frozen=True)
class Gaussian:
    """Real-valued marginal N(mean, variance)."""

    variance: float
    mean: float = 0.0

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("gaussian variance must be positive")

    @property
    def second_moment(self) -> float:
        return self.variance + self.mean ** 2


class SquaredError:
    """Marker for rho(x, y) = (x - y)^2 on the real line."""

    def __repr__(self):
        return "SquaredError()"


SQUARED_ERROR = SquaredError()


# ---------------------------------------------------------------------------
# distortion


def _infer_grid(matrix: np.ndarray, max_denominator: int = 10_000) -> float | None:
    fracs = []
    for v in matrix.ravel():
        f = Fraction(float(v)).limit_denominator(max_denominator)
        if abs(float(f) - v) > GRID_ATOL:
            return None
        fracs.append(f)
    nonzero = [f for f in fracs if f != 0]
    if not nonzero:
        return 1.0
    den = math.lcm(*(f.denominator for f in nonzero))
    num = math.gcd(*(int(f * den) for f in nonzero))
    return num / den


@dataclass(frozen=True, eq=False)
class DistortionMeasure:
    """Single-letter distortion matrix ``rho[x, y]`` on A x Â.

    ``value_grid`` is a step Δ such that every entry is an integer multiple
    of Δ; it enables the exact ball-probability DP and integer threshold
    comparisons. Pass ``value_grid="auto"`` to infer it from the entries.
    """

    matrix: np.ndarray
    value_grid: float | None = None

    def __init__(self, matrix, value_grid=None):
        m = np.array(matrix, dtype=float)
        if m.ndim != 2 or m.size == 0:
            raise ValueError("distortion matrix must be a nonempty 2-D array")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValueError("distortion entries must be finite and nonnegative")
        if isinstance(value_grid, str):
            if value_grid != "auto":
                raise ValueError(f"unknown value_grid {value_grid!r}")
            value_grid = _infer_grid(m)
        if value_grid is not None:
            value_grid = float(value_grid)
            if not value_grid > 0:
                raise ValueError("value_grid must be positive")
            ratio = m / value_grid
            if np.any(np.abs(ratio - np.round(ratio)) > GRID_ATOL):
                raise ValueError("distortion entries are not multiples of value_grid")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "value_grid", value_grid)

    @classmethod
    def hamming(cls, k: int = 2) -> "DistortionMeasure":
        return cls(1.0 - np.eye(k), value_grid=1.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def integer_costs(self) -> np.ndarray:
        if self.value_grid is None:
            raise ValueError("distortion measure has no value_grid")
        return np.round(self.matrix / self.value_grid).astype(np.int64)

    def threshold(self, n: int, D: float) -> int:
        """Largest integer total cost (in grid units) allowed for a block of n."""
        if self.value_grid is None:
            raise ValueError("distortion measure has no value_grid")
        return math.floor(n * D / self.value_grid + GRID_ATOL)

    def is_permutation_measure(self) -> bool:
        """Symmetric, zero exactly on the diagonal, rows permutations of one another."""
        m = self.matrix
        if m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-12):
            return False
        if not np.array_equal(m == 0, np.eye(m.shape[0], dtype=bool)):
            return False
        first = np.sort(m[0])
        return all(np.allclose(np.sort(row), first, atol=1e-12) for row in m)


@dataclass(frozen=True)
class DistortionStats:
    d_min: float
    d_av: float
    d_max: float
    d_bar: float

    @property
    def degenerate(self) -> bool:
        """rho essentially constant in y, so no rate function exists."""
        return self.d_av - self.d_min <= 1e-15 * max(1.0, self.d_av)


def _check_conformable(P: FiniteDistribution, Q: FiniteDistribution, rho: DistortionMeasure):
    if rho.shape != (len(P), len(Q)):
        raise ValueError(f"rho has shape {rho.shape}, expected {(len(P), len(Q))}")


def distortion_stats(P, Q, rho) -> DistortionStats:
    """D_min, D_av, D_max and D̄ for a source marginal P and codebook marginal Q.

    For Gaussian marginals under squared error the values are analytic:
    D_min = 0, D_av = E(X - Y)^2, D_max = inf, and D̄ = Var(X).
    """
    if isinstance(P, Gaussian) or isinstance(Q, Gaussian):
        if not (isinstance(P, Gaussian) and isinstance(Q, Gaussian)):
            raise ValueError("gaussian marginals must be paired with each other")
        d_av = P.variance + Q.variance + (P.mean - Q.mean) ** 2
        return DistortionStats(0.0, d_av, math.inf, P.variance)
    _check_conformable(P, Q, rho)
    m = rho.matrix
    px, qy = P.support, Q.support
    if not px.any() or not qy.any():
        raise ValueError("empty support")
    row_min = m[:, qy].min(axis=1)
    d_min = float(P.probs @ row_min)
    d_av = float(P.probs @ m @ Q.probs)
    d_max = float(m[np.ix_(px, qy)].max())
    d_bar = float((P.probs @ m).min())
    return DistortionStats(d_min, d_av, d_max, d_bar)


# ---------------------------------------------------------------------------
# lattice blocks


@dataclass(frozen=True, eq=False)
class LatticeBlock:
    """n^d symbols on the cube C(n), stored row-major."""

    dimension: int
    side: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 1:
            v = v.reshape(-1)
        if v.size != self.side ** self.dimension:
            raise ValueError(f"expected {self.side ** self.dimension} values, got {v.size}")
        object.__setattr__(self, "values", v)

    @property
    def array(self) -> np.ndarray:
        return self.values.reshape((self.side,) * self.dimension)

    def __len__(self):
        return self.values.size


# ---------------------------------------------------------------------------
# sources


class _Stream:
    """Incremental draws from a source; chunking does not change the output."""

    def __init__(self, source, seed: int, keys=()):
        self.source = source
        self.rng = substream(seed, *keys)
        self.state = None

    def take(self, k: int) -> np.ndarray:
        out, self.state = self.source._draw(self.rng, k, self.state)
        return out


@dataclass(frozen=True, eq=False)
class IIDSource:
    marginal: FiniteDistribution

    @property
    def alphabet_size(self) -> int:
        return len(self.marginal)

    def _draw(self, rng, k, state):
        cdf = np.cumsum(self.marginal.probs)
        u = rng.random(k)
        return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1), state

    def stream(self, seed: int, *keys: int) -> _Stream:
        return _Stream(self, seed, keys)


@dataclass(frozen=True, eq=False)
class MarkovSource:
    """Finite-order Markov chain started from its stationary law.

    ``transitions[c, b]`` is the probability of symbol ``b`` after context
    ``c``, where a context ``(a_1, ..., a_k)`` (oldest first) has index
    ``sum a_j * |A|**(k - j)``.
    """

    symbols: tuple
    order: int
    transitions: np.ndarray

    def __init__(self, symbols, transitions, order: int = 1):
        symbols = tuple(symbols)
        t = np.array(transitions, dtype=float)
        k = len(symbols)
        if not 1 <= order <= 4:
            raise ValueError("markov order must be between 1 and 4")
        if t.shape != (k ** order, k):
            raise ValueError(f"transition table must have shape {(k ** order, k)}")
        if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > PROB_ATOL):
            raise ValueError("transition rows must be probability vectors")
        t.flags.writeable = False
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "transitions", t)
        # fail early on chains without a unique stationary law
        object.__setattr__(self, "_stationary", _stationary(self.lifted_matrix()))

    @classmethod
    def two_state(cls, p_stay: float, q_stay: float | None = None) -> "MarkovSource":
        q_stay = p_stay if q_stay is None else q_stay
        return cls((0, 1), [[p_stay, 1 - p_stay], [1 - q_stay, q_stay]])

    @property
    def alphabet_size(self) -> int:
        return len(self.symbols)

    def lifted_matrix(self) -> np.ndarray:
        """Transition matrix of the chain on contexts (order-1 lift)."""
        k, o = len(self.symbols), self.order
        S = k ** o
        M = np.zeros((S, S))
        for c in range(S):
            shifted = (c * k) % S
            for b in range(k):
                M[c, shifted + b] += self.transitions[c, b]
        return M

    def context_symbol(self) -> np.ndarray:
        """Most recent symbol of each context."""
        return np.arange(len(self.symbols) ** self.order) % len(self.symbols)

    @property
    def stationary_contexts(self) -> np.ndarray:
        return self._stationary

    @property
    def marginal(self) -> FiniteDistribution:
        k = len(self.symbols)
        p = np.bincount(self.context_symbol(), weights=self._stationary, minlength=k)
        return FiniteDistribution(self.symbols, p / p.sum())

    def _draw(self, rng, k, state):
        a = len(self.symbols)
        S = a ** self.order
        out = np.empty(k, dtype=np.intp)
        if state is None:
            c = int(np.searchsorted(np.cumsum(self._stationary), rng.random(), side="right"))
            c = min(c, S - 1)
            digits = [(c // a ** (self.order - 1 - j)) % a for j in range(self.order)]
            state = (c, digits)
        c, pending = state
        # one uniform per transition, so chunking never changes the path
        u = rng.random(max(k - len(pending), 0))
        pos = 0
        cdf = np.cumsum(self.transitions, axis=1)
        i = 0
        # the stationary context supplies the first `order` symbols
        while pending and i < k:
            out[i] = pending[0]
            pending = pending[1:]
            i += 1
        while i < k:
            b = int(np.searchsorted(cdf[c], u[pos], side="right"))
            b = min(b, a - 1)
            pos += 1
            out[i] = b
            c = (c * a) % S + b
            i += 1
        return out, (c, pending)

    def stream(self, seed: int, *keys: int) -> _Stream:
        return _Stream(self, seed, keys)


def _stationary(M: np.ndarray) -> np.ndarray:
    S = M.shape[0]
    A = np.eye(S) - M.T
    if np.linalg.matrix_rank(A, tol=1e-10) != S - 1:
        raise ValueError("markov chain does not have a unique stationary distribution")
    A = np.vstack([A, np.ones(S)])
    b = np.zeros(S + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass(frozen=True)
class GaussianSource:
    marginal: Gaussian

    def _draw(self, rng, k, state):
        return rng.normal(self.marginal.mean, math.sqrt(self.marginal.variance), k), state

    def stream(self, seed: int, *keys: int) -> _Stream:
        return _Stream(self, seed, keys)


@dataclass(frozen=True, eq=False)
class FieldSource:
    """I.i.d. random field on the nonnegative orthant of Z^d.

    Values are generated tile by tile, each tile from its own substream, so
    the symbol at any site is a fixed function of the seed.
    """

    marginal: FiniteDistribution
    dimension: int = 2
    tile: int = 32

    def __post_init__(self):
        if self.dimension < 2:
            raise ValueError("field dimension must be at least 2")

    @property
    def alphabet_size(self) -> int:
        return len(self.marginal)

    def _tile(self, seed, coords):
        rng = substream(seed, *coords)
        cdf = np.cumsum(self.marginal.probs)
        u = rng.random((self.tile,) * self.dimension)
        return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)

    def window(self, seed: int, side: int) -> np.ndarray:
        """Field values on [0, side)^d."""
        t = self.tile
        ntiles = -(-side // t)
        out = np.empty((ntiles * t,) * self.dimension, dtype=np.intp)
        for coords in np.ndindex(*(ntiles,) * self.dimension):
            sl = tuple(slice(c * t, (c + 1) * t) for c in coords)
            out[sl] = self._tile(seed, coords)
        return out[(slice(0, side),) * self.dimension]

    def block(self, seed: int, side: int) -> LatticeBlock:
        return LatticeBlock(self.dimension, side, self.window(seed, side).reshape(-1))


SourceModel = IIDSource | MarkovSource | GaussianSource | FieldSource


def sample_path(src, n: int, seed: int, *keys: int):
    """n symbols from ``src`` (a LatticeBlock of side n for field sources)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if isinstance(src, FieldSource):
        return src.block(derive_seed(seed, *keys) if keys else seed, n)
    return src.stream(seed, *keys).take(n)


def marginal_of(src):
    return src.marginal


# ---------------------------------------------------------------------------
# config files


def read_kv(path_or_text: str, *, is_text: bool = False) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    if is_text:
        text = path_or_text
    else:
        with open(path_or_text, encoding="utf-8") as fh:
            text = fh.read()
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_number(text: str) -> float:
    """Real number, accepting ``p/q`` rationals."""
    return float(Fraction(text.strip()))


def parse_fraction(text: str) -> Fraction:
    return Fraction(text.strip())


def _vector(text: str) -> list[float]:
    return [parse_number(t) for t in text.replace(",", " ").split()]


def _rows(text: str) -> list[list[float]]:
    return [_vector(r) for r in text.split(";") if r.strip()]


def _label(tok: str):
    try:
        return int(tok)
    except ValueError:
        return tok


@dataclass
class ModelConfig:
    """Source, codebook marginal and distortion measure read from a config.

    Recognised keys::

        alphabet     = 0 1                 # labels of A (and of Â unless
        repro        = 0 1                 #   'repro' is given)
        source       = iid | markov | gaussian | field
        p            = 0.7 0.3             # iid / field marginal
        order        = 1                   # markov
        transitions  = 0.8 0.2; 0.2 0.8    # markov rows, ';'-separated
        dimension    = 2                   # field
        variance     = 2                   # gaussian source
        mean         = 0
        q            = 1/2 1/2             # codebook marginal on Â
        q_variance   = 1                   # gaussian codebook
        rho          = hamming | rows      # e.g. '0 1; 1 0'
        value_grid   = 1 | auto
    """

    source: object
    Q: object
    rho: object
    raw: dict = field(default_factory=dict)

    @property
    def P(self):
        return self.source.marginal


def model_from_kv(kv: dict[str, str]) -> ModelConfig:
    kind = kv.get("source", "iid")
    if kind == "gaussian":
        P = Gaussian(parse_number(kv.get("variance", "1")), parse_number(kv.get("mean", "0")))
        Q = Gaussian(parse_number(kv.get("q_variance", "1")), parse_number(kv.get("q_mean", "0")))
        return ModelConfig(GaussianSource(P), Q, SQUARED_ERROR, dict(kv))
    alphabet = tuple(_label(t) for t in kv.get("alphabet", "0 1").split())
    repro = tuple(_label(t) for t in kv["repro"].split()) if "repro" in kv else alphabet
    if kind == "iid":
        source = IIDSource(FiniteDistribution(alphabet, _vector(kv["p"])))
    elif kind == "markov":
        source = MarkovSource(alphabet, _rows(kv["transitions"]), int(kv.get("order", "1")))
    elif kind == "field":
        source = FieldSource(FiniteDistribution(alphabet, _vector(kv["p"])),
                             int(kv.get("dimension", "2")))
    else:
        raise ValueError(f"unknown source kind {kind!r}")
    Q = FiniteDistribution(repro, _vector(kv["q"])) if "q" in kv else FiniteDistribution.uniform(repro)
    grid = kv.get("value_grid", "auto")
    rho_text = kv.get("rho", "hamming")
    if rho_text == "hamming":
        if alphabet != repro:
            raise ValueError("hamming distortion needs identical alphabets")
        rho = DistortionMeasure(1.0 - np.eye(len(alphabet)), value_grid=grid)
    else:
        rho = DistortionMeasure(_rows(rho_text), value_grid=grid)
    return ModelConfig(source, Q, rho, dict(kv))


def load_model_config(path: str) -> ModelConfig:
    return model_from_kv(read_kv(path))


def read_rho_file(path: str, value_grid="auto") -> DistortionMeasure:
    """Distortion matrix from a whitespace table, one row per line."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append(_vector(line))
    return DistortionMeasure(rows, value_grid=value_grid)
