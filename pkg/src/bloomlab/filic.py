"""Real-versus-ideal indistinguishability experiments with a reveal oracle.

The ideal world replaces the filter by a stateful simulator: a bit array M,
a lazily sampled truly random index function f used only for inserts, an
append-only list of inserted elements, an append-only list of elements that
became sticky false positives, and an insert counter. A query for an
element on neither list samples k fresh uniform indices, disregarding the
element itself; if all sampled bits are set the element joins the
false-positive list. A reveal simply returns M.

The real world runs the same adversary against an actual insertable filter
whose reveal returns its internal representation. The distinguisher sees
only the adversary's output; the advantage is the gap between its
acceptance rates in the two worlds.

Oracle budgets cover inserts, membership queries and reveals separately.
An over-budget call gets the ``REFUSED`` sentinel instead of an answer, and
any violation replaces the adversary's output by ``REFUSED`` before it
reaches the distinguisher.

The package's key-leaking construction demonstrates why resilience against
betting adversaries does not compose with a reveal oracle: it stores its
permutation key inside the revealed representation (at ``KEY_OFFSET``), so
an adversary can read the key, predict a false positive offline and verify
it with a single query. Against the simulator the same adversary's
prediction is uncorrelated with the fresh sampling and only succeeds at the
density-driven rate.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import ParameterError
from .feistel import FeistelPermutation
from .filters import (
    KIND_NY,
    BloomFilter,
    FilterParams,
    HashFamily,
    Universe,
    _pack_snapshot,
    _unpack_snapshot,
)
from .games import Adversary, GameConfig
from .stats import mix_seed, wilson_interval

REFUSED = "refused"


@dataclass(frozen=True)
class OracleBudget:
    """Call allowances: inserts (updates), queries (membership tests),
    reveals (representation dumps)."""

    inserts: int
    queries: int
    reveals: int

    def __post_init__(self):
        if min(self.inserts, self.queries, self.reveals) < 0:
            raise ParameterError("budgets must be >= 0")


class OracleSet:
    """Budget-enforcing wrapper around the three oracles of one world."""

    def __init__(self, query, insert, reveal, budget: OracleBudget):
        self._query = query
        self._insert = insert
        self._reveal = reveal
        self.remaining_inserts = budget.inserts
        self.remaining_queries = budget.queries
        self.remaining_reveals = budget.reveals
        self.violated = False

    def query(self, x):
        if self.remaining_queries <= 0:
            self.violated = True
            return REFUSED
        self.remaining_queries -= 1
        return self._query(x)

    def insert(self, x):
        if self.remaining_inserts <= 0:
            self.violated = True
            return REFUSED
        self.remaining_inserts -= 1
        self._insert(x)
        return None

    def reveal(self):
        if self.remaining_reveals <= 0:
            self.violated = True
            return REFUSED
        self.remaining_reveals -= 1
        return self._reveal()


class SimulatorState:
    """Ideal-world state machine.

    Index draws come from the provided generator in strict call order: k
    draws per first-time insert, k draws per query of an unlisted element,
    none otherwise. Replaying the same operation sequence against the same
    generator therefore reproduces every answer, regardless of which
    element labels appear.
    """

    __slots__ = ("m", "k", "rng", "bits", "f", "inserted", "fp_list", "ctr",
                 "_inserted_set", "_fp_set", "_ones")

    def __init__(self, m: int, k: int, rng: random.Random):
        if m < 1 or k < 1:
            raise ParameterError("need m >= 1 and k >= 1")
        self.m = m
        self.k = k
        self.rng = rng
        self.bits = bytearray((m + 7) // 8)
        self.f: dict[int, tuple[int, ...]] = {}
        self.inserted: list[int] = []
        self.fp_list: list[int] = []
        self.ctr = 0
        self._inserted_set: set[int] = set()
        self._fp_set: set[int] = set()
        self._ones = 0

    def _draw(self) -> tuple[int, ...]:
        return tuple(self.rng.randrange(self.m) for _ in range(self.k))

    def _set_bits(self, indices) -> None:
        for j in indices:
            byte, bit = j >> 3, 1 << (j & 7)
            if not self.bits[byte] & bit:
                self.bits[byte] |= bit
                self._ones += 1

    def _all_set(self, indices) -> bool:
        return all(self.bits[j >> 3] & (1 << (j & 7)) for j in indices)

    def insert(self, x) -> None:
        """First-time inserts set the bits of f(x); repeats do nothing."""
        if x in self._inserted_set:
            return
        indices = self.f.get(x)
        if indices is None:
            indices = self._draw()
            self.f[x] = indices
        self._set_bits(indices)
        self.inserted.append(x)
        self._inserted_set.add(x)
        self.ctr += 1

    def build(self, members) -> None:
        """Insert the initial members in the order given."""
        for x in members:
            self.insert(x)

    def query(self, x) -> int:
        """1 for listed elements; otherwise k fresh uniform draws decide,
        and a hit makes the element a permanent false positive."""
        if x in self._inserted_set or x in self._fp_set:
            return 1
        indices = self._draw()
        if self._all_set(indices):
            self.fp_list.append(x)
            self._fp_set.add(x)
            return 1
        return 0

    def reveal(self) -> bytes:
        return bytes(self.bits)

    def popcount(self) -> int:
        return self._ones

    def fill_ratio(self) -> float:
        return self._ones / self.m


class FilicAdversary:
    """Interface for reveal-oracle adversaries."""

    def begin(self, rng: random.Random) -> None:
        self.rng = rng

    def choose_set(self) -> set[int]:
        raise NotImplementedError

    def interact(self, oracles: OracleSet):
        raise NotImplementedError


def identity_distinguisher(out) -> int:
    """Pass the adversary's bit through; anything else counts as 0."""
    return 1 if out == 1 else 0


def run_real(adversary: FilicAdversary, filter_factory, distinguisher, budget: OracleBudget, seed: int) -> int:
    """One real-world experiment; returns the distinguisher's bit."""
    adversary.begin(random.Random(mix_seed(seed, "filic-adv", 0)))
    members = frozenset(adversary.choose_set())
    world_rng = random.Random(mix_seed(seed, "filic-world", 0))
    filt = filter_factory(members, world_rng)
    oracles = OracleSet(filt.query, filt.insert, filt.reveal, budget)
    out = adversary.interact(oracles)
    if oracles.violated:
        out = REFUSED
    return 1 if distinguisher(out) == 1 else 0


def run_ideal(adversary: FilicAdversary, params: FilterParams, distinguisher,
              budget: OracleBudget, seed: int, reveal_codec=None, state_probe=None) -> int:
    """One ideal-world experiment against the simulator.

    ``reveal_codec``, if given, is a factory taking the world generator and
    returning a function that wraps the simulator's bit array in whatever
    representation format the real construction reveals, so that formats
    cannot be told apart. ``state_probe`` receives the simulator right
    after the initial build, for instrumentation.
    """
    adversary.begin(random.Random(mix_seed(seed, "filic-adv", 0)))
    members = frozenset(adversary.choose_set())
    world_rng = random.Random(mix_seed(seed, "filic-world", 0))
    sim = SimulatorState(params.m, params.k, world_rng)
    sim.build(sorted(members))
    if state_probe is not None:
        state_probe(sim)
    if reveal_codec is not None:
        codec = reveal_codec(world_rng)
        reveal = lambda: codec(sim.reveal())
    else:
        reveal = sim.reveal
    oracles = OracleSet(sim.query, sim.insert, reveal, budget)
    out = adversary.interact(oracles)
    if oracles.violated:
        out = REFUSED
    return 1 if distinguisher(out) == 1 else 0


@dataclass(frozen=True)
class AdvantageReport:
    """Distinguishing advantage |p_real - p_ideal| with a conservative CI
    combining the per-world Wilson intervals."""

    trials: int
    p_real: float
    p_ideal: float
    advantage: float
    ci_lo: float
    ci_hi: float


def estimate_advantage(adversary: FilicAdversary, filter_factory, params: FilterParams,
                       distinguisher, budget: OracleBudget, trials: int, seed: int,
                       reveal_codec=None) -> AdvantageReport:
    """Monte Carlo advantage over independent real and ideal trials."""
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    real_hits = ideal_hits = 0
    for i in range(trials):
        real_hits += run_real(adversary, filter_factory, distinguisher, budget,
                              mix_seed(seed, "filic-real", i))
        ideal_hits += run_ideal(adversary, params, distinguisher, budget,
                                mix_seed(seed, "filic-ideal", i), reveal_codec=reveal_codec)
    p_real = real_hits / trials
    p_ideal = ideal_hits / trials
    lr, ur = wilson_interval(real_hits, trials)
    li, ui = wilson_interval(ideal_hits, trials)
    lo = max(0.0, lr - ui, li - ur)
    hi = min(1.0, max(ur - li, ui - lr))
    return AdvantageReport(trials=trials, p_real=p_real, p_ideal=p_ideal,
                           advantage=abs(p_real - p_ideal), ci_lo=lo, ci_hi=hi)


def insertable_filter_factory(params: FilterParams, universe: Universe):
    """The construction the simulator models: a standard public-hash filter."""

    def make(members, rng: random.Random) -> BloomFilter:
        return BloomFilter.build(members, params, HashFamily.public(), universe)

    return make


class KeyLeakingFilter:
    """Permutation-wrapped insertable filter whose reveal embeds the key.

    The wrapped layout makes the bit positions useless without the
    permutation key, but the revealed snapshot carries the key itself at
    ``KEY_OFFSET``, so reveal access collapses the protection entirely.
    """

    def __init__(self, members, params: FilterParams, prp_key: bytes, universe: Universe):
        self.prp = FeistelPermutation(prp_key, universe.size)
        self.universe = universe
        permuted = {self.prp.encrypt(universe.require(x)) for x in set(members)}
        self.inner = BloomFilter.build(permuted, params, HashFamily.public(), universe)

    @property
    def params(self) -> FilterParams:
        return self.inner.params

    def query(self, x: int) -> int:
        return self.inner.query(self.prp.encrypt(self.universe.require(x)))

    def insert(self, x: int) -> None:
        self.inner.insert(self.prp.encrypt(self.universe.require(x)))

    def reveal(self) -> bytes:
        return _pack_snapshot(self.inner.params.m, self.inner.params.k, KIND_NY,
                              self.prp.key, self.inner.bit_bytes())

    def is_saturated(self) -> bool:
        return self.inner.is_saturated()

    def fill_ratio(self) -> float:
        return self.inner.fill_ratio()


def key_leaking_filter_factory(params: FilterParams, universe: Universe):
    """Fresh key-leaking filter per trial with a random permutation key."""

    def make(members, rng: random.Random) -> KeyLeakingFilter:
        return KeyLeakingFilter(members, params, rng.randbytes(16), universe)

    return make


def snapshot_reveal_codec(params: FilterParams):
    """Ideal-world codec matching :class:`KeyLeakingFilter`'s reveal format.

    The simulator has no key, so each trial wraps M together with a freshly
    drawn random key: in the ideal world the key field carries no
    information, which is exactly the point.
    """

    def factory(rng: random.Random):
        key = rng.randbytes(16)

        def codec(bits: bytes) -> bytes:
            return _pack_snapshot(params.m, params.k, KIND_NY, key, bits)

        return codec

    return factory


def _bit_set(bits: bytes, j: int) -> bool:
    return bool(bits[j >> 3] & (1 << (j & 7)))


class RepresentationPredictionAdversary(FilicAdversary):
    """Reads the revealed representation, predicts a positive offline and
    spends one query confirming it.

    With ``expects_snapshot`` the reveal is parsed as a key-carrying
    snapshot and candidates are routed through the recovered permutation;
    otherwise the reveal is taken as a raw bit array and the public hash is
    used directly. Real-world predictions are exact, so the confirmed bit
    is 1 almost surely; against the simulator the prediction is independent
    of the fresh sampling and only hits at the density rate.
    """

    def __init__(self, params: FilterParams, universe: Universe, n: int,
                 expects_snapshot: bool, max_scan: int = 4096):
        if not 0 < n < universe.size:
            raise ParameterError("need 0 < n < universe size")
        self.params = params
        self.universe = universe
        self.n = n
        self.expects_snapshot = expects_snapshot
        self.max_scan = max_scan
        self._public = HashFamily.public()

    def choose_set(self) -> set[int]:
        self.members = set(self.rng.sample(range(self.universe.size), self.n))
        return set(self.members)

    def interact(self, oracles: OracleSet):
        blob = oracles.reveal()
        if blob == REFUSED:
            return 0
        if self.expects_snapshot:
            m, k, _, key, bits = _unpack_snapshot(blob)
            prp = FeistelPermutation(key, self.universe.size)
        else:
            m, k = self.params.m, self.params.k
            bits = blob
            prp = None
        for _ in range(self.max_scan):
            x = self.rng.randrange(self.universe.size)
            if x in self.members:
                continue
            image = prp.encrypt(x) if prp is not None else x
            if all(_bit_set(bits, j) for j in self._public.indices(image, m, k)):
                ans = oracles.query(x)
                return ans if ans in (0, 1) else 0
        return 0


class NullAdversary(FilicAdversary):
    """Ignores its oracles and outputs 0; its advantage is zero."""

    def __init__(self, universe: Universe, n: int):
        self.universe = universe
        self.n = n

    def choose_set(self) -> set[int]:
        return set(self.rng.sample(range(self.universe.size), self.n))

    def interact(self, oracles: OracleSet):
        return 0


class _WrappedAbAdversary(FilicAdversary):
    """Relays a betting-game adversary through the oracle interface."""

    def __init__(self, ab_adversary: Adversary, cfg: GameConfig):
        self.ab = ab_adversary
        self.cfg = cfg

    def begin(self, rng: random.Random) -> None:
        super().begin(rng)
        self.ab.begin(self.cfg, rng)

    def choose_set(self) -> set[int]:
        self.members = frozenset(self.ab.choose_set())
        if len(self.members) != self.cfg.n:
            raise ParameterError(f"adversary chose {len(self.members)} members, expected {self.cfg.n}")
        return set(self.members)

    def interact(self, oracles: OracleSet):
        history: list[tuple[int, int]] = []
        seen: set[int] = set()
        for _ in range(self.cfg.t):
            q = self.ab.next_query(list(history))
            if q is None:
                break
            if q in self.members or q in seen:
                return 0
            ans = oracles.query(q)
            if ans not in (0, 1):
                return 0
            seen.add(q)
            history.append((q, ans))
        _, target = self.ab.finalize(list(history))
        if target in self.members or target in seen:
            return 0
        ans = oracles.query(target)
        return ans if ans in (0, 1) else 0


def ab_to_filic_adversary(ab_adversary: Adversary, cfg: GameConfig):
    """Wrap a betting-game adversary for the real/ideal experiments.

    The wrapper relays the at most cfg.t adaptive probes, spends one final
    query on the adversary's target and outputs that bit; the matching
    distinguisher is the identity. Rule violations and budget refusals
    force output 0, mirroring the betting harness's forfeits. Budgets must
    allow cfg.t + 1 queries for a faithful embedding.
    """
    return _WrappedAbAdversary(ab_adversary, cfg), identity_distinguisher
