"""Learned filters: a trained membership scorer plus a backup filter.

The scorer here is a memorizing threshold model, the simplest model with
controllable error rates: training members score at 1, trained negatives at
0, each flipped to the wrong side of the threshold independently with a
configurable noise probability, and anything never seen in training scores
0. The backup filter is built over exactly the members the model scores
below the threshold, which restores completeness of the composed filter.

``private_learned_build`` runs the same pipeline on a perturbed member set,
so the model, backup and every downstream answer are a post-processing of
the privatized set and inherit its privacy guarantee unchanged.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from .errors import ParameterError
from .filters import BloomFilter, FilterParams, HashFamily, Universe
from .privacy import PrivacyParams, perturb
from .stats import mix_seed


@dataclass(frozen=True)
class TrainingDataset:
    """Labeled pairs (element, label), label 1 for members."""

    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        for x, label in self.pairs:
            if label not in (0, 1):
                raise ParameterError("labels must be 0 or 1")
        pos = {x for x, lab in self.pairs if lab == 1}
        neg = {x for x, lab in self.pairs if lab == 0}
        if pos & neg:
            raise ParameterError("an element cannot carry both labels")

    @property
    def positives(self) -> frozenset[int]:
        return frozenset(x for x, lab in self.pairs if lab == 1)

    @property
    def negatives(self) -> frozenset[int]:
        return frozenset(x for x, lab in self.pairs if lab == 0)


def make_training_set(members, universe: Universe, negatives_count: int, seed: int) -> TrainingDataset:
    """All members labeled 1 plus uniform non-members labeled 0.

    Negatives are sampled without replacement from the complement; asking
    for more negatives than the complement holds is an error.
    """
    members = sorted({universe.require(x) for x in set(members)})
    complement_size = universe.size - len(members)
    if negatives_count < 0 or negatives_count > complement_size:
        raise ParameterError(
            f"negatives_count must lie in [0, {complement_size}]"
        )
    rng = random.Random(seed)
    member_set = set(members)
    negatives: list[int] = []
    if negatives_count > complement_size // 2:
        pool = [x for x in range(universe.size) if x not in member_set]
        negatives = rng.sample(pool, negatives_count)
    else:
        seen = set()
        while len(negatives) < negatives_count:
            x = rng.randrange(universe.size)
            if x not in member_set and x not in seen:
                seen.add(x)
                negatives.append(x)
    pairs = [(x, 1) for x in members] + [(x, 0) for x in negatives]
    return TrainingDataset(tuple(pairs))


@dataclass
class LearningModel:
    """Memorizing threshold scorer with measured error rates.

    ``eps_p`` bounds the probability a trained negative scores at or above
    the threshold, ``eps_n`` the probability a training member scores below
    it; both are the measured training rates plus a three-sigma binomial
    slack. Elements never seen in training score 0.
    """

    tau: float
    noise: float
    member_noise: float
    negative_noise: float
    seed: int
    eps_p: float
    eps_n: float
    scores: dict[int, float] = field(repr=False)

    def score(self, x: int) -> float:
        return self.scores.get(x, 0.0)

    def predict(self, x: int) -> int:
        return 1 if self.score(x) >= self.tau else 0

    def to_snapshot(self) -> dict:
        """Scores are omitted: retraining on the same dataset with these
        fields reproduces them exactly."""
        return {
            "tau": self.tau,
            "noise": self.noise,
            "member_noise": self.member_noise,
            "negative_noise": self.negative_noise,
            "seed": self.seed,
            "eps_p": self.eps_p,
            "eps_n": self.eps_n,
        }


def _rate_plus_slack(errors: int, count: int) -> float:
    if count == 0:
        return 0.0
    rate = errors / count
    return min(1.0, rate + 3.0 * math.sqrt(max(rate * (1.0 - rate), 1.0 / count) / count))


def train_threshold_model(data: TrainingDataset, noise: float, seed: int, *,
                          tau: float = 0.5,
                          member_noise: float | None = None,
                          negative_noise: float | None = None) -> LearningModel:
    """Fit the memorizing model; ``noise`` is the default flip rate per side."""
    if not 0.0 < tau <= 1.0:
        raise ParameterError("tau must lie in (0, 1]")
    mn = noise if member_noise is None else member_noise
    nn = noise if negative_noise is None else negative_noise
    for rate in (noise, mn, nn):
        if not 0.0 <= rate < 1.0:
            raise ParameterError("noise rates must lie in [0, 1)")
    rng = random.Random(seed)
    scores: dict[int, float] = {}
    pos_flips = pos_count = neg_flips = neg_count = 0
    for x, label in data.pairs:
        if label == 1:
            pos_count += 1
            flipped = rng.random() < mn
            scores[x] = 0.0 if flipped else 1.0
            pos_flips += flipped
        else:
            neg_count += 1
            flipped = rng.random() < nn
            scores[x] = 1.0 if flipped else 0.0
            neg_flips += flipped
    return LearningModel(
        tau=tau, noise=noise, member_noise=mn, negative_noise=nn, seed=seed,
        eps_p=_rate_plus_slack(neg_flips, neg_count),
        eps_n=_rate_plus_slack(pos_flips, pos_count),
        scores=scores,
    )


def rebuild_model(snapshot: dict, data: TrainingDataset) -> LearningModel:
    """Retrain from a snapshot; the scores come back deterministically."""
    return train_threshold_model(
        data, snapshot["noise"], snapshot["seed"], tau=snapshot["tau"],
        member_noise=snapshot["member_noise"], negative_noise=snapshot["negative_noise"],
    )


@dataclass
class LearnedFilter:
    """Model plus backup filter over the members the model misses.

    ``encoded`` records the member set the pipeline actually consumed; for
    a privately built filter that is the perturbed set, not the original.
    """

    model: LearningModel
    backup: BloomFilter
    universe: Universe
    encoded: frozenset[int]

    @property
    def params(self) -> FilterParams:
        return self.backup.params

    def query(self, x: int) -> int:
        self.universe.require(x)
        if self.model.score(x) >= self.model.tau:
            return 1
        return self.backup.query(x)


def learned_build(members, universe: Universe, fparams: FilterParams,
                  model: LearningModel, family: HashFamily | None = None) -> LearnedFilter:
    """Compose ``model`` with a backup filter over its false negatives."""
    members = {universe.require(x) for x in set(members)}
    missed = {x for x in members if model.score(x) < model.tau}
    backup = BloomFilter.build(missed, fparams, family or HashFamily.public(), universe)
    return LearnedFilter(model=model, backup=backup, universe=universe,
                         encoded=frozenset(members))


def private_learned_build(members, universe: Universe, fparams: FilterParams,
                          privacy: PrivacyParams, seed: int, *,
                          negatives_count: int | None = None,
                          noise: float = 0.0, tau: float = 0.5,
                          member_noise: float | None = None,
                          negative_noise: float | None = None,
                          family: HashFamily | None = None) -> LearnedFilter:
    """Run the full pipeline on a perturbed member set.

    The perturbation, negative sampling and training use seeds derived from
    ``seed``, so the whole pipeline is reproducible from one integer.
    """
    members = {universe.require(x) for x in set(members)}
    perturbed = perturb(members, universe, privacy, mix_seed(seed, "learned-perturb", 0))
    encoded = set(perturbed.members)
    if negatives_count is None:
        negatives_count = min(universe.size - len(encoded), max(len(encoded), 1))
    data = make_training_set(encoded, universe, negatives_count,
                             mix_seed(seed, "learned-dataset", 0))
    model = train_threshold_model(data, noise, mix_seed(seed, "learned-train", 0),
                                  tau=tau, member_noise=member_noise,
                                  negative_noise=negative_noise)
    return learned_build(encoded, universe, fparams, model, family=family)
