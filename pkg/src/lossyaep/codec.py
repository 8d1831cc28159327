"""Lossy block coding with virtual random codebooks.

Bits are kept as Python strings of '0'/'1'. That keeps the Elias code and
the container logic readable, and block payloads are at most a few
thousand bits.

A codebook is never stored. Codeword i lives in block (i-1)//CODEBOOK_BLOCK
of a seeded stream, so encoder and decoder regenerate the same codeword from
(seed, i).
"""

from __future__ import annotations

import hashlib
import itertools
import math
import struct
import zlib
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .ballprob import ball_prob_exact_dp
from .model import GRID_ATOL, DistortionMeasure, FiniteDistribution, substream
from .ratefn import LOG2E

CODEBOOK_BLOCK = 256
MAX_INDEX_CAP = 1 << 30
MAGIC = b"AEPK1"
MODE_SHANNON = 0
MODE_UNIVERSAL = 1
_HEADER = struct.Struct(">IIIQIB")


# ---------------------------------------------------------------------------
# Elias delta


def elias_encode(n: int) -> str:
    """Elias delta codeword of a positive integer."""
    if n < 1:
        raise ValueError("Elias code is defined for n >= 1")
    L = n.bit_length() - 1
    LL = (L + 1).bit_length() - 1
    return "0" * LL + format(L + 1, "b") + format(n, "b")[1:]


def elias_length(n: int) -> int:
    """Length of :func:`elias_encode` (n) without building the string."""
    if n < 1:
        raise ValueError("Elias code is defined for n >= 1")
    L = n.bit_length() - 1
    return L + 2 * ((L + 1).bit_length() - 1) + 1


def elias_read(bits: str, pos: int = 0) -> tuple[int, int]:
    """Decode one codeword starting at ``pos``; returns (value, next position)."""
    LL = 0
    while pos + LL < len(bits) and bits[pos + LL] == "0":
        LL += 1
    pos += LL
    if pos + LL + 1 > len(bits):
        raise ValueError("truncated Elias codeword")
    L = int(bits[pos:pos + LL + 1], 2) - 1
    pos += LL + 1
    if pos + L > len(bits):
        raise ValueError("truncated Elias codeword")
    n = int("1" + bits[pos:pos + L], 2)
    return n, pos + L


def elias_decode(bits: str) -> int:
    """Decode a single complete codeword."""
    n, end = elias_read(bits)
    if end != len(bits):
        raise ValueError("trailing bits after Elias codeword")
    return n


class EliasBitstream:
    """Append-only bit buffer with a read cursor."""

    def __init__(self, bits: str = ""):
        self.bits = bits
        self.cursor = 0

    def __len__(self):
        return len(self.bits)

    def write(self, n: int) -> None:
        self.bits += elias_encode(n)

    def write_raw(self, bits: str) -> None:
        self.bits += bits

    def read(self) -> int:
        n, self.cursor = elias_read(self.bits, self.cursor)
        return n

    def read_raw(self, k: int) -> str:
        if self.cursor + k > len(self.bits):
            raise ValueError("truncated bitstream")
        out = self.bits[self.cursor:self.cursor + k]
        self.cursor += k
        return out

    def exhausted(self) -> bool:
        # zero padding can never hold a complete block
        return "1" not in self.bits[self.cursor:]


# ---------------------------------------------------------------------------
# codebooks


def default_max_index(n: int, rate_bits: float) -> int:
    exponent = n * (rate_bits + 0.25)
    if exponent >= 30:
        return MAX_INDEX_CAP
    return min(MAX_INDEX_CAP, max(1, math.ceil(2.0 ** exponent)))


@dataclass(frozen=True, eq=False)
class CodebookSpec:
    n: int
    distribution: FiniteDistribution
    seed: int
    max_index: int = MAX_INDEX_CAP

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("block length must be positive")
        if self.max_index < 1:
            raise ValueError("max_index must be at least 1")

    def codeword_block(self, k: int) -> np.ndarray:
        """Codewords k*B+1 .. (k+1)*B as a (B, n) index array."""
        rng = substream(self.seed, k)
        cdf = np.cumsum(self.distribution.probs)
        u = rng.random((CODEBOOK_BLOCK, self.n))
        return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)

    def codeword(self, i: int) -> np.ndarray:
        if i < 1:
            raise ValueError("codeword indices start at 1")
        k, r = divmod(i - 1, CODEBOOK_BLOCK)
        return self.codeword_block(k)[r]


def _cost_table(rho: DistortionMeasure, x: np.ndarray, D: float):
    """Per-position cost rows and the total-cost limit for ρₙ ≤ D."""
    n = x.size
    if rho.value_grid is not None:
        return rho.integer_costs()[x], rho.threshold(n, D)
    return rho.matrix[x], n * D + GRID_ATOL * max(1.0, n * D)


def _distortions(rows, Y):
    return rows[np.arange(Y.shape[1])[None, :], Y].sum(axis=1)


def first_match_index(x, spec: CodebookSpec, rho: DistortionMeasure, D: float,
                      limit: int | None = None) -> int | None:
    """Smallest i ≤ max_index with ρₙ(x, Y(i)) ≤ D, or None."""
    x = np.asarray(x, dtype=np.intp)
    if x.size != spec.n:
        raise ValueError(f"block has length {x.size}, codebook expects {spec.n}")
    rows, lim = _cost_table(rho, x, D)
    cap = spec.max_index if limit is None else min(limit, spec.max_index)
    for k in range(-(-cap // CODEBOOK_BLOCK)):
        ok = np.flatnonzero(_distortions(rows, spec.codeword_block(k)) <= lim)
        if ok.size:
            i = k * CODEBOOK_BLOCK + int(ok[0]) + 1
            return i if i <= cap else None
    return None


# ---------------------------------------------------------------------------
# encoding


@dataclass(frozen=True)
class EncodedBlock:
    match_index: int | None
    type_index: int | None
    payload_bits: int
    fallback_used: bool


def _symbol_bits(k: int) -> int:
    return max(1, math.ceil(math.log2(k))) if k > 1 else 0


def fallback_quantizer(rho: DistortionMeasure) -> np.ndarray:
    """Column minimizer of each row of ρ."""
    return rho.matrix.argmin(axis=1)


def _fallback_bits(x: np.ndarray, rho: DistortionMeasure, D: float) -> str:
    y = fallback_quantizer(rho)[x]
    dist = rho.matrix[x, y].mean()
    if dist > D + GRID_ATOL:
        raise ValueError("fallback quantizer cannot meet D: rho violates sup_x min_y rho = 0")
    w = _symbol_bits(rho.shape[1])
    return "1" + "".join(format(int(s), f"0{w}b") for s in y) if w else "1"


def encode_block(x, spec: CodebookSpec, rho: DistortionMeasure, D: float):
    """Encode one block; returns (EncodedBlock, bits).

    Layout: flag bit 0 then Elias(iₙ), or flag bit 1 then the fixed-rate
    fallback description when no match exists within ``max_index``.
    """
    x = np.asarray(x, dtype=np.intp)
    i = first_match_index(x, spec, rho, D)
    if i is None:
        bits = _fallback_bits(x, rho, D)
        return EncodedBlock(None, None, len(bits), True), bits
    bits = "0" + elias_encode(i)
    return EncodedBlock(i, None, len(bits), False), bits


def _read_block(stream: EliasBitstream, n: int, rho_cols: int, codeword) -> np.ndarray:
    flag = stream.read_raw(1)
    if flag == "1":
        w = _symbol_bits(rho_cols)
        if w == 0:
            return np.zeros(n, dtype=np.intp)
        raw = stream.read_raw(n * w)
        return np.array([int(raw[j:j + w], 2) for j in range(0, n * w, w)], dtype=np.intp)
    return codeword(stream.read())


def decode_block(bits: str, spec: CodebookSpec, rho: DistortionMeasure | None = None) -> np.ndarray:
    """Reproduction sequence for one block produced by :func:`encode_block`."""
    k = rho.shape[1] if rho is not None else len(spec.distribution)
    return _read_block(EliasBitstream(bits), spec.n, k, spec.codeword)


# ---------------------------------------------------------------------------
# universal codebooks over n-types


MAX_UNIVERSAL_ALPHABET = 6
MAX_UNIVERSAL_N = 4096


def n_types(k: int, n: int) -> list[tuple[int, ...]]:
    """All count vectors of length k summing to n, in lexicographic order."""
    if k < 1 or n < 1:
        raise ValueError("k and n must be positive")
    out = []
    for bars in itertools.combinations(range(n + k - 1), k - 1):
        prev, counts = -1, []
        for b in bars:
            counts.append(b - prev - 1)
            prev = b
        counts.append(n + k - 2 - prev)
        out.append(tuple(counts))
    return out


def n_type_count(k: int, n: int) -> int:
    return math.comb(n + k - 1, k - 1)


def _check_universal(k: int, n: int):
    if k > MAX_UNIVERSAL_ALPHABET or n > MAX_UNIVERSAL_N:
        raise ValueError(f"universal coding supports |Â| ≤ {MAX_UNIVERSAL_ALPHABET}, "
                         f"n ≤ {MAX_UNIVERSAL_N}")


def type_spec(counts, n: int, seed: int, type_index: int, max_index: int = MAX_INDEX_CAP):
    k = len(counts)
    dist = FiniteDistribution(tuple(range(k)), np.asarray(counts, dtype=float) / n)
    # each type gets its own codebook stream
    sub_seed = int(np.random.SeedSequence(seed, spawn_key=(1, type_index)).generate_state(1, np.uint64)[0])
    return CodebookSpec(n, dist, sub_seed, max_index)


def type_index_bits(k: int, n: int) -> int:
    c = n_type_count(k, n)
    return math.ceil(math.log2(c)) if c > 1 else 0


def universal_encode(x, n: int, rho: DistortionMeasure, D: float, seed: int,
                     max_index: int = 1 << 20):
    """Search one codebook per n-type and keep the earliest match.

    Ties go to the lowest type index. Later codebooks are only searched up
    to the best index found so far, and types whose ball probability is
    exactly zero are skipped.
    """
    x = np.asarray(x, dtype=np.intp)
    if x.size != n:
        raise ValueError("block length mismatch")
    k = rho.shape[1]
    _check_universal(k, n)
    types = n_types(k, n)
    best_i, best_t = None, None
    for t, counts in enumerate(types):
        cap = max_index if best_i is None else best_i - 1
        if cap < 1:
            break
        spec = type_spec(counts, n, seed, t, max_index)
        if ball_prob_exact_dp(x, spec.distribution, rho, D).prob == 0.0:
            continue
        i = first_match_index(x, spec, rho, D, limit=cap)
        if i is not None:
            best_i, best_t = i, t
    w = type_index_bits(k, n)
    if best_i is None:
        bits = _fallback_bits(x, rho, D)
        return EncodedBlock(None, None, len(bits), True), bits
    bits = "0" + (format(best_t, f"0{w}b") if w else "") + elias_encode(best_i)
    return EncodedBlock(best_i, best_t, len(bits), False), bits


def universal_decode(bits: str, n: int, rho: DistortionMeasure, seed: int) -> np.ndarray:
    k = rho.shape[1]
    stream = EliasBitstream(bits)
    return _read_universal(stream, n, k, seed)


def _read_universal(stream: EliasBitstream, n: int, k: int, seed: int) -> np.ndarray:
    if stream.bits[stream.cursor:stream.cursor + 1] == "1":
        return _read_block(stream, n, k, None)
    stream.read_raw(1)
    w = type_index_bits(k, n)
    t = int(stream.read_raw(w), 2) if w else 0
    return type_spec(n_types(k, n)[t], n, seed, t).codeword(stream.read())


# ---------------------------------------------------------------------------
# exact-law simulation of the match index


def geometric_index(log_p: float, rng: np.random.Generator) -> int:
    """Draw iₙ ~ Geometric(p) given log p, exactly as a Python int.

    Uses i = ⌈E / −log(1−p)⌉ with E ~ Exp(1), evaluated in logs so that
    p far below the double range still works.
    """
    if log_p > 0 or math.isnan(log_p):
        raise ValueError("log_p must be ≤ 0")
    if log_p == 0.0:
        return 1
    if log_p == -math.inf:
        raise ValueError("zero match probability")
    e = rng.standard_exponential()
    p = math.exp(log_p)
    if p > 1e-8:
        log_rate = math.log(-math.log1p(-p))
    else:
        log_rate = log_p + math.log1p(p / 2.0)
    log2_i = (math.log(e) - log_rate) * LOG2E
    if log2_i < 52:
        return max(1, math.ceil(2.0 ** log2_i))
    whole = math.floor(log2_i)
    mant = int(2.0 ** (log2_i - whole + 52))
    return (mant << (whole - 52)) + 1


def simulate_encode(x, Q: FiniteDistribution, rho: DistortionMeasure, D: float,
                    rng: np.random.Generator):
    """Rate accounting for a Shannon codebook without searching it.

    Given x, the first-match index of an i.i.d. codebook is exactly
    Geometric(Qⁿ(B(x, D))); it is sampled from that law with p from the
    ball DP. The payload layout matches :func:`encode_block`. Blocks made
    this way are for rate statistics only: the index does not point at a
    searched codeword.
    """
    lp = ball_prob_exact_dp(x, Q, rho, D).log_prob
    i = geometric_index(lp, rng)
    return EncodedBlock(i, None, 1 + elias_length(i), False), lp


def simulate_universal(x, rho: DistortionMeasure, D: float, rng: np.random.Generator):
    """Universal-code rate accounting with exact per-type geometric laws."""
    x = np.asarray(x, dtype=np.intp)
    n, k = x.size, rho.shape[1]
    _check_universal(k, n)
    best_i, best_t = None, None
    for t, counts in enumerate(n_types(k, n)):
        Qt = FiniteDistribution(tuple(range(k)), np.asarray(counts, dtype=float) / n)
        lp = ball_prob_exact_dp(x, Qt, rho, D).log_prob
        if lp == -math.inf:
            continue
        i = geometric_index(lp, rng)
        if best_i is None or i < best_i:
            best_i, best_t = i, t
    if best_i is None:
        raise ValueError("no n-type codebook can match this block")
    bits = 1 + type_index_bits(k, n) + elias_length(best_i)
    return EncodedBlock(best_i, best_t, bits, False)


# ---------------------------------------------------------------------------
# conditioned measures


class ConditioningError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConditionedSample:
    sequences: np.ndarray
    acceptance_rate: float
    drawn: int


def in_conditioned_set(y, Q_star: FiniteDistribution, delta: float) -> bool:
    """P̂_y(b) ≤ Q*(b) + δ for every letter b."""
    y = np.asarray(y)
    freq = np.bincount(y, minlength=len(Q_star)) / y.size
    return bool(np.all(freq <= Q_star.probs + delta + 1e-15))


def conditioned_sampler(Q_star: FiniteDistribution, delta: float, n: int, seed: int,
                        samples: int = 1, batch: int = 1024,
                        probe: int = 1_000_000) -> ConditionedSample:
    """Rejection sampler for (Q*)ⁿ conditioned on the type constraint.

    Aborts when no draw among the first ``probe`` is accepted, i.e. the
    acceptance rate is below 1/probe.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    rng = substream(seed, 0)
    cdf = np.cumsum(Q_star.probs)
    k = len(Q_star)
    bound = (Q_star.probs + delta) * n + 1e-9
    kept, drawn, accepted = [], 0, 0
    while accepted < samples:
        if accepted == 0 and drawn >= probe:
            raise ConditioningError(
                f"acceptance rate below {1 / probe:.1e}: delta={delta} is too small for n={n}")
        y = np.minimum(np.searchsorted(cdf, rng.random((batch, n)), side="right"), k - 1)
        counts = np.stack([(y == b).sum(axis=1) for b in range(k)], axis=1)
        ok = np.all(counts <= bound, axis=1)
        drawn += batch
        good = y[ok]
        accepted += good.shape[0]
        kept.append(good)
    seqs = np.concatenate(kept)[:samples]
    return ConditionedSample(seqs, accepted / drawn, drawn)


# ---------------------------------------------------------------------------
# container


class SpecMismatch(ValueError):
    pass


def _rational(D) -> Fraction:
    f = D if isinstance(D, Fraction) else Fraction(str(D)) if isinstance(D, float) else Fraction(D)
    if f < 0 or f.numerator >= 1 << 32 or f.denominator >= 1 << 32:
        raise ValueError("D must be a nonnegative rational with 32-bit numerator and denominator")
    return f


def distribution_hash(dist: FiniteDistribution | None, k: int | None = None) -> bytes:
    h = hashlib.sha256()
    if dist is None:
        h.update(f"universal:{k}".encode())
    else:
        h.update(repr(dist.symbols).encode())
        h.update(np.ascontiguousarray(dist.probs, dtype=">f8").tobytes())
    return h.digest()


def spec_checksum(n: int, D, seed: int, dist_hash: bytes) -> int:
    f = _rational(D)
    blob = struct.pack(">IIIQ", n, f.numerator, f.denominator, seed & (2 ** 64 - 1)) + dist_hash
    return zlib.crc32(blob)


def pack_container(bits: str, n: int, D, seed: int, dist_hash: bytes, mode: int) -> bytes:
    f = _rational(D)
    head = MAGIC + _HEADER.pack(n, f.numerator, f.denominator, seed & (2 ** 64 - 1),
                                spec_checksum(n, f, seed, dist_hash), mode)
    pad = (-len(bits)) % 8
    padded = bits + "0" * pad
    body = int(padded, 2).to_bytes(len(padded) // 8, "big") if padded else b""
    return head + body


@dataclass(frozen=True)
class ContainerHeader:
    n: int
    D: Fraction
    seed: int
    checksum: int
    mode: int


def unpack_container(data: bytes) -> tuple[ContainerHeader, str]:
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError("not an AEPK1 stream")
    off = len(MAGIC)
    n, num, den, seed, checksum, mode = _HEADER.unpack_from(data, off)
    body = data[off + _HEADER.size:]
    bits = "".join(format(b, "08b") for b in body)
    return ContainerHeader(n, Fraction(num, den), seed, checksum, mode), bits


def encode_stream(blocks, spec: CodebookSpec, rho: DistortionMeasure, D) -> tuple[bytes, list]:
    """Encode several blocks of length spec.n into one container."""
    bits, info = "", []
    for x in blocks:
        enc, b = encode_block(x, spec, rho, float(_rational(D)))
        bits += b
        info.append(enc)
    data = pack_container(bits, spec.n, D, spec.seed, distribution_hash(spec.distribution),
                          MODE_SHANNON)
    return data, info


def decode_stream(data: bytes, spec: CodebookSpec, rho: DistortionMeasure, D) -> list[np.ndarray]:
    """Decode every block of a container, checking it matches the decoder's spec."""
    head, bits = unpack_container(data)
    if head.mode != MODE_SHANNON:
        raise SpecMismatch("container was written in universal mode")
    want = spec_checksum(spec.n, D, spec.seed, distribution_hash(spec.distribution))
    if head.checksum != want or head.n != spec.n:
        raise SpecMismatch("codebook spec does not match the stream header")
    stream = EliasBitstream(bits)
    out = []
    while not stream.exhausted():
        out.append(_read_block(stream, spec.n, rho.shape[1], spec.codeword))
    return out


def encode_universal_stream(blocks, n: int, rho: DistortionMeasure, D, seed: int,
                            max_index: int = 1 << 20) -> tuple[bytes, list]:
    bits, info = "", []
    for x in blocks:
        enc, b = universal_encode(x, n, rho, float(_rational(D)), seed, max_index)
        bits += b
        info.append(enc)
    data = pack_container(bits, n, D, seed, distribution_hash(None, rho.shape[1]), MODE_UNIVERSAL)
    return data, info


def decode_universal_stream(data: bytes, n: int, rho: DistortionMeasure, D, seed: int):
    head, bits = unpack_container(data)
    if head.mode != MODE_UNIVERSAL:
        raise SpecMismatch("container was not written in universal mode")
    if head.checksum != spec_checksum(n, D, seed, distribution_hash(None, rho.shape[1])):
        raise SpecMismatch("universal spec does not match the stream header")
    stream = EliasBitstream(bits)
    out = []
    while not stream.exhausted():
        out.append(_read_universal(stream, n, rho.shape[1], seed))
    return out
