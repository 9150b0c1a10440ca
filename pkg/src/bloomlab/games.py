"""Adaptive adversary games against a filter: the bet variants and payouts.

The harness drives one adversary per trial: the adversary picks the member
set, issues up to t adaptive membership queries, then commits to a target
element. Rule violations (repeated queries, querying a member, targeting a
member or an already-queried element) forfeit the game rather than abort
it, so Monte Carlo estimates stay well defined and a violation can never
score as a win.

Two scoring modes share the transcript machinery:

* always-bet: the adversary must bet on its target; it wins iff the target
  is a false positive.
* profit: the adversary may pass (bet 0, payout 0) or bet; a correct bet on
  a threshold ``delta`` pays 1/delta, an incorrect one costs 1/(1-delta).

The saturation adversary probes uniform non-members and bets only when all
probes answered 1, i.e. when the filter looks saturated: once every bit is
set, any fresh target is a guaranteed false positive. Closed forms for the
saturation probability and the resulting expected profit are provided; the
exact coverage probability is evaluated in integer arithmetic, which stays
exact where floating-point inclusion-exclusion would cancel catastrophically.
"""

from __future__ import annotations

import math
import random
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb

from .errors import ParameterError
from .filters import (
    TRUE_RANDOM,
    BloomFilter,
    FilterParams,
    Universe,
    fresh_family,
    optimal_k,
)
from .stats import mean_confidence_interval, mix_seed, wilson_interval

# Slack constant standing in for "negligible" in resilience checks at
# desk-scale parameters.
DEFAULT_SLACK = 0.01


@dataclass(frozen=True)
class GameConfig:
    """Game shape: universe, member count n, query budget t, bet threshold.

    ``threshold`` is the epsilon of the always-bet game or the delta of the
    profit game. ``lam`` is carried for reporting only; nothing at these
    scales depends on it.
    """

    universe: Universe
    n: int
    t: int
    threshold: float
    lam: int = 128

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError("n must be >= 1")
        if self.t < 0:
            raise ParameterError("t must be >= 0")
        if not 0.0 < self.threshold < 1.0:
            raise ParameterError("threshold must lie in (0, 1)")
        if self.n + self.t + 1 > self.universe.size:
            raise ParameterError("universe too small for n members, t queries and a target")


@dataclass
class GameTranscript:
    members: frozenset[int]
    queries: list[int] = field(default_factory=list)
    answers: list[int] = field(default_factory=list)
    forfeited: bool = False
    forfeit_reason: str = ""


class Adversary(ABC):
    """Per-trial opponent; ``begin`` resets it with fresh randomness."""

    def begin(self, cfg: GameConfig, rng: random.Random) -> None:
        self.cfg = cfg
        self.rng = rng

    @abstractmethod
    def choose_set(self) -> set[int]:
        """The member set, exactly cfg.n elements."""

    @abstractmethod
    def next_query(self, history: list[tuple[int, int]]) -> int | None:
        """Next membership probe, or None to stop early."""

    @abstractmethod
    def finalize(self, history: list[tuple[int, int]]) -> tuple[int, int]:
        """(bet, target) after the query phase."""


def _drive_queries(filt, adversary: Adversary, cfg: GameConfig,
                   transcript: GameTranscript) -> None:
    seen: set[int] = set()
    for _ in range(cfg.t):
        q = adversary.next_query(list(zip(transcript.queries, transcript.answers)))
        if q is None:
            return
        cfg.universe.require(q)
        if q in transcript.members:
            transcript.forfeited = True
            transcript.forfeit_reason = "queried a member"
            return
        if q in seen:
            transcript.forfeited = True
            transcript.forfeit_reason = "repeated a query"
            return
        seen.add(q)
        transcript.queries.append(q)
        transcript.answers.append(filt.query(q))


def _start(filter_factory, adversary: Adversary, cfg: GameConfig, seed: int):
    rng = random.Random(seed)
    adversary.begin(cfg, rng)
    members = frozenset(adversary.choose_set())
    if len(members) != cfg.n:
        raise ParameterError(f"adversary chose {len(members)} members, expected {cfg.n}")
    for x in members:
        cfg.universe.require(x)
    filt = filter_factory(members, rng)
    transcript = GameTranscript(members=members)
    _drive_queries(filt, adversary, cfg, transcript)
    return filt, transcript, adversary


def run_adaptive_game(filter_factory, adversary: Adversary, cfg: GameConfig, seed: int) -> GameTranscript:
    """Query phase only; answers come from the filter built over the
    adversary's own member set."""
    _, transcript, _ = _start(filter_factory, adversary, cfg, seed)
    return transcript


@dataclass(frozen=True)
class AbOutcome:
    win: int
    transcript: GameTranscript


def run_ab_test(filter_factory, adversary: Adversary, cfg: GameConfig, seed: int) -> AbOutcome:
    """Always-bet game: the adversary wins iff its fresh target is a false
    positive. The bet returned by the adversary is ignored; betting is
    forced in this variant."""
    filt, transcript, adv = _start(filter_factory, adversary, cfg, seed)
    if transcript.forfeited:
        return AbOutcome(win=0, transcript=transcript)
    _, target = adv.finalize(list(zip(transcript.queries, transcript.answers)))
    cfg.universe.require(target)
    if target in transcript.members or target in transcript.queries:
        transcript.forfeited = True
        transcript.forfeit_reason = "target was a member or an earlier query"
        return AbOutcome(win=0, transcript=transcript)
    return AbOutcome(win=filt.query(target), transcript=transcript)


@dataclass(frozen=True)
class ProfitOutcome:
    """Payout of one profit-game trial; profit is exactly one of
    1/threshold, -1/(1-threshold), or 0."""

    bet: int
    false_positive: int
    profit: float


@dataclass(frozen=True)
class BpRun:
    outcome: ProfitOutcome
    transcript: GameTranscript
    saturated: bool | None


def run_bp_test(filter_factory, adversary: Adversary, cfg: GameConfig, seed: int) -> BpRun:
    """Profit game at threshold cfg.threshold; forfeits pay 0."""
    filt, transcript, adv = _start(filter_factory, adversary, cfg, seed)
    saturated = filt.is_saturated() if hasattr(filt, "is_saturated") else None
    if transcript.forfeited:
        return BpRun(ProfitOutcome(0, 0, 0.0), transcript, saturated)
    bet, target = adv.finalize(list(zip(transcript.queries, transcript.answers)))
    if bet not in (0, 1):
        raise ParameterError("bet must be 0 or 1")
    if bet == 0:
        return BpRun(ProfitOutcome(0, 0, 0.0), transcript, saturated)
    cfg.universe.require(target)
    if target in transcript.members or target in transcript.queries:
        transcript.forfeited = True
        transcript.forfeit_reason = "target was a member or an earlier query"
        return BpRun(ProfitOutcome(0, 0, 0.0), transcript, saturated)
    fp = filt.query(target)
    profit = 1.0 / cfg.threshold if fp else -1.0 / (1.0 - cfg.threshold)
    return BpRun(ProfitOutcome(1, fp, profit), transcript, saturated)


class UniformAdversary(Adversary):
    """Probes uniform distinct non-members and always bets on a fresh
    uniform target. Its win rate in the always-bet game is the filter's
    unconditional false-positive rate."""

    def begin(self, cfg: GameConfig, rng: random.Random) -> None:
        super().begin(cfg, rng)
        self._members: set[int] = set()
        self._used: set[int] = set()

    def choose_set(self) -> set[int]:
        self._members = set(self.rng.sample(range(self.cfg.universe.size), self.cfg.n))
        self._used = set(self._members)
        return set(self._members)

    def next_query(self, history) -> int | None:
        x = self.cfg.universe.sample_outside(self.rng, self._used)
        self._used.add(x)
        return x

    def _bet(self, history) -> int:
        return 1

    def finalize(self, history) -> tuple[int, int]:
        target = self.cfg.universe.sample_outside(self.rng, self._used)
        return self._bet(history), target


class SaturationAdversary(UniformAdversary):
    """Bets only when every probe answered 1."""

    def _bet(self, history) -> int:
        return 1 if all(ans == 1 for _, ans in history) else 0


def saturation_adversary(cfg: GameConfig) -> SaturationAdversary:
    """The probe-then-bet adversary matched to ``cfg``."""
    return SaturationAdversary()


@dataclass(frozen=True)
class SaturationProbability:
    exact: float
    lower_bound: float


def saturation_probability(m: int, n: int, k: int) -> SaturationProbability:
    """Probability that n elements with k truly random indices each cover
    all m bits.

    The exact value is the coverage inclusion-exclusion sum evaluated in
    exact integer arithmetic before one final division. The lower bound is
    the union bound 1 - m e^{-nk/m}, clamped at 0.
    """
    if m < 1:
        raise ParameterError("m must be >= 1")
    if n < 0 or k < 1:
        raise ParameterError("need n >= 0 and k >= 1")
    throws = n * k
    total = sum(
        (-1 if j & 1 else 1) * comb(m, j) * (m - j) ** throws
        for j in range(m + 1)
    )
    exact = float(Fraction(total, m ** throws))
    lower = max(0.0, 1.0 - m * math.exp(-throws / m))
    return SaturationProbability(exact=exact, lower_bound=lower)


def expected_profit_formula(p_s: float, p_fp: float, t: int, delta: float) -> float:
    """Expected profit of the saturation adversary.

    ``p_s`` is the saturation probability, ``p_fp`` the false-positive
    probability of an unsaturated filter, t the probe count and ``delta``
    the bet threshold.
    """
    for name, v in (("p_s", p_s), ("p_fp", p_fp)):
        if not 0.0 <= v <= 1.0:
            raise ParameterError(f"{name} must lie in [0, 1]")
    if t < 0:
        raise ParameterError("t must be >= 0")
    if not 0.0 < delta < 1.0:
        raise ParameterError("delta must lie in (0, 1)")
    bet_prob = p_s + p_fp ** t * (1.0 - p_s)
    fp_prob = p_s + p_fp * (1.0 - p_s)
    return bet_prob * (fp_prob / delta - ((1.0 - p_fp) * (1.0 - p_s)) / (1.0 - delta))


def profit_lower_bound(p_s: float, delta: float) -> float:
    """The profit formula with the unsaturated false-positive term dropped;
    strictly positive exactly when p_s exceeds delta."""
    if not 0.0 <= p_s <= 1.0:
        raise ParameterError("p_s must lie in [0, 1]")
    if not 0.0 < delta < 1.0:
        raise ParameterError("delta must lie in (0, 1)")
    return p_s * p_s / delta - p_s * (1.0 - p_s) / (1.0 - delta)


def resilience_threshold_with_optimal_k(m: int, n: int, delta: float) -> bool:
    """Whether the union-bound saturation estimate already beats ``delta``
    when k follows the classic (m/n) ln 2 rule.

    True means the saturation attack is guaranteed profitable at this
    threshold. The union bound is vacuous for many parameter choices (it
    drops below 0 whenever m e^{-nk/m} >= 1), in which case this returns
    False even though the attack may still succeed; the exact probability
    from :func:`saturation_probability` is the sharper tool.
    """
    if not 0.0 < delta < 1.0:
        raise ParameterError("delta must lie in (0, 1)")
    if m < 1 or n < 0:
        raise ParameterError("need m >= 1 and n >= 0")
    if n == 0:
        return False
    k = optimal_k(m, n)
    return delta < 1.0 - m * math.exp(-n * k / m)


def true_random_filter_factory(params: FilterParams, universe: Universe):
    """Fresh truly-random-hash filter per trial."""

    def make(members, rng: random.Random) -> BloomFilter:
        return BloomFilter.build(members, params, fresh_family(TRUE_RANDOM, rng), universe)

    return make


def standard_filter_factory(params: FilterParams, universe: Universe, mode: str = "public"):
    """Fresh filter of the given hash mode per trial."""

    def make(members, rng: random.Random) -> BloomFilter:
        return BloomFilter.build(members, params, fresh_family(mode, rng), universe)

    return make


@dataclass(frozen=True)
class AbExperiment:
    trials: int
    wins: int
    forfeits: int
    win_rate: float
    ci_lo: float
    ci_hi: float


def run_ab_experiment(filter_factory, adversary: Adversary, cfg: GameConfig,
                      trials: int, seed: int) -> AbExperiment:
    """Always-bet win rate over independent trials with derived seeds."""
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    wins = forfeits = 0
    for i in range(trials):
        outcome = run_ab_test(filter_factory, adversary, cfg, mix_seed(seed, "ab-trial", i))
        wins += outcome.win
        forfeits += outcome.transcript.forfeited
    lo, hi = wilson_interval(wins, trials)
    return AbExperiment(trials, wins, forfeits, wins / trials, lo, hi)


@dataclass(frozen=True)
class BpExperiment:
    trials: int
    mean_profit: float
    ci_lo: float
    ci_hi: float
    bet_rate: float
    win_rate: float
    saturation_rate: float
    probe_fp_rate_unsaturated: float
    forfeits: int


def run_bp_experiment(filter_factory, adversary: Adversary, cfg: GameConfig,
                      trials: int, seed: int) -> BpExperiment:
    """Profit-game statistics over independent trials.

    Besides the mean payout this reports how often the built filter was
    actually saturated and the probe hit rate among unsaturated trials,
    which estimates the unsaturated false-positive probability entering the
    closed-form expected profit.
    """
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    profits: list[float] = []
    bets = wins = forfeits = 0
    saturated_trials = 0
    saturation_known = 0
    probe_hits = probe_total = 0
    for i in range(trials):
        run = run_bp_test(filter_factory, adversary, cfg, mix_seed(seed, "bp-trial", i))
        profits.append(run.outcome.profit)
        bets += run.outcome.bet
        wins += run.outcome.profit > 0
        forfeits += run.transcript.forfeited
        if run.saturated is not None:
            saturation_known += 1
            saturated_trials += run.saturated
            if not run.saturated:
                probe_hits += sum(run.transcript.answers)
                probe_total += len(run.transcript.answers)
    mean, lo, hi = mean_confidence_interval(profits)
    return BpExperiment(
        trials=trials, mean_profit=mean, ci_lo=lo, ci_hi=hi,
        bet_rate=bets / trials, win_rate=wins / trials,
        saturation_rate=(saturated_trials / saturation_known) if saturation_known else math.nan,
        probe_fp_rate_unsaturated=(probe_hits / probe_total) if probe_total else 0.0,
        forfeits=forfeits,
    )


@dataclass(frozen=True)
class SaturationFrequency:
    rate: float
    se: float
    trials: int


def saturation_frequency(m: int, k: int, n: int, trials: int, seed: int) -> SaturationFrequency:
    """Monte Carlo saturation rate of truly-random-hash builds."""
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    params = FilterParams(m=m, k=k, n=n)
    universe = Universe(max(4 * n, 16))
    hits = 0
    for i in range(trials):
        rng = random.Random(mix_seed(seed, "saturation", i))
        members = set(rng.sample(range(universe.size), n))
        filt = BloomFilter.build(members, params, fresh_family(TRUE_RANDOM, rng), universe)
        hits += filt.is_saturated()
    rate = hits / trials
    se = math.sqrt(max(rate * (1.0 - rate), 1.0 / trials) / trials)
    return SaturationFrequency(rate=rate, se=se, trials=trials)
