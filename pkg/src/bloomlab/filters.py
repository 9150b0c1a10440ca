"""Bloom filters over dense integer universes.

Three hashing modes share one filter implementation:

* ``public``: unkeyed blake2b, computable by anyone. The classic filter.
* ``keyed-prf``: blake2b keyed with a secret; index i of element x is the
  64-bit value of the pair (i, x) reduced mod m. The modulo bias is below
  2**-50 for any m of interest and is accepted.
* ``true-random``: a lazily memoized table of uniform index draws, giving an
  exact truly random function at the scales studied here.

``NyFilter`` wraps an inner filter with a keyed permutation so that the bit
array seen by an adversary carries no usable structure about the elements.
It is static: inserts are refused.

Snapshots use a versioned binary layout, little-endian throughout:

    magic ``b"BFLT"`` | version u8 | m u32 | k u16 | kind u8 |
    key-length u16 | key bytes | bit array, bit j at byte j>>3, bit 1<<(j&7)

The key field holds the PRF key (``keyed-prf``), the permutation key
(``ny-prp-wrapped``), or is empty. The layout does not record the universe
size, so restoring an ``ny-prp-wrapped`` snapshot requires passing the
universe explicitly.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import struct
from dataclasses import dataclass, field

from .errors import DomainError, ParameterError, UnsupportedOperationError
from .feistel import FeistelPermutation
from .stats import mix_seed, wilson_interval

MAGIC = b"BFLT"
FORMAT_VERSION = 1
# Offset of the key bytes inside a snapshot: magic + version + m + k + kind + key-length.
KEY_OFFSET = 4 + 1 + 4 + 2 + 1 + 2

PUBLIC = "public"
KEYED_PRF = "keyed-prf"
TRUE_RANDOM = "true-random"
_MODES = (PUBLIC, KEYED_PRF, TRUE_RANDOM)

KIND_STANDARD = "standard"
KIND_PRF = "prf-backed"
KIND_NY = "ny-prp-wrapped"
_KIND_CODES = {KIND_STANDARD: 0, KIND_PRF: 1, KIND_NY: 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}

_PAIR = struct.Struct("<QQ")
_LN2 = math.log(2.0)


@dataclass(frozen=True)
class FilterParams:
    """Size parameters: m bits, k hash functions, n expected insertions."""

    m: int
    k: int
    n: int
    epsilon: float | None = None

    def __post_init__(self):
        if self.m < 1:
            raise ParameterError("m must be >= 1")
        if self.k < 1:
            raise ParameterError("k must be >= 1")
        if self.n < 0:
            raise ParameterError("n must be >= 0")
        if self.epsilon is not None and not 0.0 < self.epsilon < 1.0:
            raise ParameterError("epsilon must lie in (0, 1)")

    @classmethod
    def from_target(cls, n: int, epsilon: float) -> "FilterParams":
        """Choose m and k for n elements and target false-positive rate."""
        if n < 1:
            raise ParameterError("n must be >= 1")
        if not 0.0 < epsilon < 1.0:
            raise ParameterError("epsilon must lie in (0, 1)")
        m = math.ceil(-n * math.log(epsilon) / (_LN2 * _LN2))
        return cls(m=m, k=optimal_k(m, n), n=n, epsilon=epsilon)


def optimal_k(m: int, n: int) -> int:
    """(m/n)·ln 2 rounded to the nearest integer, clamped to at least 1."""
    if m < 1 or n < 1:
        raise ParameterError("m and n must be >= 1")
    return max(1, round((m / n) * _LN2))


@dataclass(frozen=True)
class Universe:
    """Dense integer universe [0, size)."""

    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ParameterError("universe size must be >= 1")

    def contains(self, x) -> bool:
        return isinstance(x, int) and 0 <= x < self.size

    def require(self, x) -> int:
        if not self.contains(x):
            raise DomainError(f"element {x!r} outside universe [0, {self.size})")
        return x

    def sample(self, rng: random.Random) -> int:
        return rng.randrange(self.size)

    def sample_outside(self, rng: random.Random, excluded) -> int:
        """Uniform element not in ``excluded``, found by resampling."""
        if len(excluded) >= self.size:
            raise ParameterError("excluded set covers the whole universe")
        while True:
            x = rng.randrange(self.size)
            if x not in excluded:
                return x


@dataclass
class HashFamily:
    """Index derivation in one of the three modes.

    For ``true-random`` the key seeds an internal generator and the table
    ``memo`` holds the draws, so repeated derivation for the same element is
    stable. The first derivation fixes (m, k); reusing the family with other
    filter shapes is refused because the memoized draws would be meaningless.
    """

    mode: str
    key: bytes = b""
    memo: dict[int, tuple[int, ...]] = field(default_factory=dict, repr=False)
    _rng: random.Random | None = field(default=None, repr=False)
    _shape: tuple[int, int] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ParameterError(f"unknown hash mode {self.mode!r}")
        self.key = bytes(self.key)
        if self.mode == TRUE_RANDOM and self._rng is None:
            self._rng = random.Random(self.key)

    @classmethod
    def public(cls) -> "HashFamily":
        return cls(mode=PUBLIC, key=b"")

    @classmethod
    def keyed(cls, key: bytes | None = None, rng: random.Random | None = None) -> "HashFamily":
        if key is None:
            key = rng.randbytes(16) if rng is not None else random.SystemRandom().randbytes(16)
        return cls(mode=KEYED_PRF, key=key)

    @classmethod
    def true_random(cls, seed: bytes | int | None = None, rng: random.Random | None = None) -> "HashFamily":
        if seed is None:
            seed = rng.randbytes(16) if rng is not None else random.SystemRandom().randbytes(16)
        if isinstance(seed, int):
            seed = seed.to_bytes(8, "little", signed=False)
        return cls(mode=TRUE_RANDOM, key=bytes(seed))

    def indices(self, x: int, m: int, k: int) -> tuple[int, ...]:
        if self.mode == TRUE_RANDOM:
            if self._shape is None:
                self._shape = (m, k)
            elif self._shape != (m, k):
                raise ParameterError("true-random family already bound to another (m, k)")
            got = self.memo.get(x)
            if got is None:
                got = tuple(self._rng.randrange(m) for _ in range(k))
                self.memo[x] = got
            return got
        key = self.key
        return tuple(
            int.from_bytes(
                hashlib.blake2b(_PAIR.pack(i, x), key=key, digest_size=8).digest(),
                "little",
            )
            % m
            for i in range(k)
        )


def fresh_family(mode: str, rng: random.Random) -> HashFamily:
    """New family of the given mode with key material drawn from ``rng``."""
    if mode == PUBLIC:
        return HashFamily.public()
    if mode == KEYED_PRF:
        return HashFamily.keyed(rng=rng)
    if mode == TRUE_RANDOM:
        return HashFamily.true_random(rng=rng)
    raise ParameterError(f"unknown hash mode {mode!r}")


def derive_indices(family: HashFamily, params: FilterParams, x: int) -> tuple[int, ...]:
    """The k bit positions for element x under this family and shape."""
    return family.indices(x, params.m, params.k)


class BloomFilter:
    """Bit-array filter; ``standard`` kind is insertable, others are static."""

    __slots__ = ("params", "family", "kind", "universe", "_bits", "_ones")

    def __init__(self, params: FilterParams, family: HashFamily, universe: Universe, kind: str | None = None):
        self.params = params
        self.family = family
        self.universe = universe
        self.kind = kind if kind is not None else (
            KIND_STANDARD if family.mode == PUBLIC else KIND_PRF
        )
        if self.kind not in _KIND_CODES:
            raise ParameterError(f"unknown filter kind {self.kind!r}")
        self._bits = bytearray((params.m + 7) // 8)
        self._ones = 0

    @classmethod
    def build(cls, members, params: FilterParams, family: HashFamily, universe: Universe) -> "BloomFilter":
        """Construct the filter for a member set.

        Members are processed in sorted order so that identical
        (key, members, params) always yield bit-identical filters, including
        in true-random mode where derivation order matters.
        """
        filt = cls(params, family, universe)
        for x in sorted(set(members)):
            universe.require(x)
            filt._set_indices(x)
        return filt

    def _set_indices(self, x: int) -> None:
        m, k = self.params.m, self.params.k
        for j in self.family.indices(x, m, k):
            byte, bit = j >> 3, 1 << (j & 7)
            if not self._bits[byte] & bit:
                self._bits[byte] |= bit
                self._ones += 1

    def insert(self, x: int) -> None:
        """Add one element; only the ``standard`` kind supports this."""
        if self.kind != KIND_STANDARD:
            raise UnsupportedOperationError(f"{self.kind} filters are static; insert is not supported")
        self.universe.require(x)
        self._set_indices(x)

    def query(self, x: int) -> int:
        """1 if every derived bit is set, else 0. Never mutates the bits."""
        self.universe.require(x)
        bits = self._bits
        for j in self.family.indices(x, self.params.m, self.params.k):
            if not bits[j >> 3] & (1 << (j & 7)):
                return 0
        return 1

    def bit(self, j: int) -> int:
        if not 0 <= j < self.params.m:
            raise ParameterError(f"bit index {j} outside [0, {self.params.m})")
        return 1 if self._bits[j >> 3] & (1 << (j & 7)) else 0

    def popcount(self) -> int:
        return self._ones

    def fill_ratio(self) -> float:
        """Fraction of set bits."""
        return self._ones / self.params.m

    def is_saturated(self) -> bool:
        """True when every bit is set, so every query answers 1."""
        return self._ones == self.params.m

    def bit_bytes(self) -> bytes:
        """The packed bit array alone, the filter's in-memory state."""
        return bytes(self._bits)

    def reveal(self) -> bytes:
        """Internal representation exposed to a reveal oracle: the bit array."""
        return self.bit_bytes()

    def to_bytes(self) -> bytes:
        key = self.family.key if self.family.mode == KEYED_PRF else b""
        return _pack_snapshot(self.params.m, self.params.k, self.kind, key, bytes(self._bits))

    @classmethod
    def from_bytes(cls, blob: bytes, universe: Universe | None = None) -> "BloomFilter":
        """Restore a snapshot.

        ``ny-prp-wrapped`` snapshots must go through :meth:`NyFilter.from_bytes`
        because the permutation needs the universe size.
        """
        m, k, kind, key, bits = _unpack_snapshot(blob)
        if kind == KIND_NY:
            raise ParameterError("ny-prp-wrapped snapshot: use NyFilter.from_bytes with a universe")
        family = HashFamily.public() if kind == KIND_STANDARD else HashFamily.keyed(key)
        params = FilterParams(m=m, k=k, n=0)
        filt = cls(params, family, universe if universe is not None else Universe(1 << 62), kind=kind)
        filt._bits = bytearray(bits)
        filt._ones = sum(bin(b).count("1") for b in bits)
        return filt

    def to_debug_json(self) -> str:
        """Human-readable JSON dump of the snapshot fields."""
        return json.dumps(
            {
                "format_version": FORMAT_VERSION,
                "kind": self.kind,
                "mode": self.family.mode,
                "m": self.params.m,
                "k": self.params.k,
                "n": self.params.n,
                "popcount": self._ones,
                "fill_ratio": self.fill_ratio(),
                "key_hex": (self.family.key.hex() if self.family.mode == KEYED_PRF else ""),
                "bits_hex": bytes(self._bits).hex(),
            },
            sort_keys=True,
        )


def _pack_snapshot(m: int, k: int, kind: str, key: bytes, bits: bytes) -> bytes:
    head = MAGIC + struct.pack("<BIHBH", FORMAT_VERSION, m, k, _KIND_CODES[kind], len(key))
    return head + key + bits


def _unpack_snapshot(blob: bytes):
    if len(blob) < KEY_OFFSET or blob[:4] != MAGIC:
        raise ParameterError("not a filter snapshot (bad magic)")
    version, m, k, kind_code, key_len = struct.unpack("<BIHBH", blob[4:KEY_OFFSET])
    if version != FORMAT_VERSION:
        raise ParameterError(f"unsupported snapshot version {version}")
    if kind_code not in _KIND_NAMES:
        raise ParameterError(f"unknown filter kind code {kind_code}")
    key = bytes(blob[KEY_OFFSET:KEY_OFFSET + key_len])
    bits = bytes(blob[KEY_OFFSET + key_len:])
    if len(bits) != (m + 7) // 8:
        raise ParameterError("snapshot bit array has the wrong length")
    return m, k, _KIND_NAMES[kind_code], key, bits


class NyFilter:
    """Static filter that routes elements through a keyed permutation.

    Queries permute the element and consult the inner filter, so membership
    behaves exactly like the inner filter on permuted elements. Without the
    key the bit positions reveal nothing about which elements were encoded.
    """

    __slots__ = ("inner", "prp", "universe")

    kind = KIND_NY

    def __init__(self, inner: BloomFilter, prp: FeistelPermutation, universe: Universe):
        self.inner = inner
        self.prp = prp
        self.universe = universe

    @classmethod
    def build(cls, members, params: FilterParams, prp_key: bytes, universe: Universe,
              family: HashFamily | None = None) -> "NyFilter":
        prp = FeistelPermutation(prp_key, universe.size)
        permuted = {prp.encrypt(universe.require(x)) for x in set(members)}
        inner = BloomFilter.build(permuted, params, family or HashFamily.public(), universe)
        return cls(inner, prp, universe)

    @property
    def params(self) -> FilterParams:
        return self.inner.params

    def query(self, x: int) -> int:
        self.universe.require(x)
        return self.inner.query(self.prp.encrypt(x))

    def insert(self, x: int) -> None:
        raise UnsupportedOperationError("ny-prp-wrapped filters are static; insert is not supported")

    def fill_ratio(self) -> float:
        return self.inner.fill_ratio()

    def is_saturated(self) -> bool:
        return self.inner.is_saturated()

    def to_bytes(self) -> bytes:
        return _pack_snapshot(
            self.inner.params.m, self.inner.params.k, KIND_NY, self.prp.key, self.inner.bit_bytes()
        )

    @classmethod
    def from_bytes(cls, blob: bytes, universe: Universe) -> "NyFilter":
        m, k, kind, key, bits = _unpack_snapshot(blob)
        if kind != KIND_NY:
            raise ParameterError(f"snapshot holds a {kind} filter, not ny-prp-wrapped")
        params = FilterParams(m=m, k=k, n=0)
        inner = BloomFilter(params, HashFamily.public(), universe, kind=KIND_STANDARD)
        inner._bits = bytearray(bits)
        inner._ones = sum(bin(b).count("1") for b in bits)
        return cls(inner, FeistelPermutation(key, universe.size), universe)


def ny_wrap(inner_factory, prp_key: bytes, universe: Universe):
    """Builder that permutes a member set before handing it to ``inner_factory``.

    ``inner_factory`` takes the permuted member set and returns the inner
    filter. The returned callable builds the wrapped filter from a plain set.
    """
    prp = FeistelPermutation(prp_key, universe.size)

    def build(members) -> NyFilter:
        permuted = {prp.encrypt(universe.require(x)) for x in set(members)}
        return NyFilter(inner_factory(permuted), prp, universe)

    return build


@dataclass(frozen=True)
class FprEstimate:
    """Monte Carlo false-positive rate averaged over independent builds."""

    rate: float
    ci_lo: float
    ci_hi: float
    expected: float
    builds: int
    queries: int


def expected_fpr(params: FilterParams, n_effective: float | None = None) -> float:
    """Classic approximation (1 - e^{-kn/m})^k."""
    n = params.n if n_effective is None else n_effective
    if n < 0:
        raise ParameterError("effective cardinality must be >= 0")
    return (1.0 - math.exp(-params.k * n / params.m)) ** params.k


def estimate_fpr(params: FilterParams, universe: Universe, mode: str,
                 builds: int, queries: int, seed: int) -> FprEstimate:
    """Estimate the non-member positive rate over several fresh builds.

    The total query budget is spread evenly across builds because a single
    build's realized rate fluctuates with its fill; the closed form is an
    expectation over builds.
    """
    if builds < 1 or queries < builds:
        raise ParameterError("need builds >= 1 and queries >= builds")
    if params.n + 1 > universe.size:
        raise ParameterError("universe too small for n members plus a non-member")
    per_build = queries // builds
    hits = 0
    total = 0
    for b in range(builds):
        rng = random.Random(mix_seed(seed, "fpr-build", b))
        members = set(rng.sample(range(universe.size), params.n))
        filt = BloomFilter.build(members, params, fresh_family(mode, rng), universe)
        for _ in range(per_build):
            x = universe.sample_outside(rng, members)
            hits += filt.query(x)
            total += 1
    lo, hi = wilson_interval(hits, total)
    return FprEstimate(
        rate=hits / total, ci_lo=lo, ci_hi=hi,
        expected=expected_fpr(params), builds=builds, queries=total,
    )
