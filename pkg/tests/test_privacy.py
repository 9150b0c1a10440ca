"""Randomized-response perturbation, budgets, and the empirical audit."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bloomlab.errors import ParameterError, UnsupportedOperationError
from bloomlab.filters import BloomFilter, FilterParams, HashFamily, Universe, expected_fpr
from bloomlab.privacy import (
    ENUMERATION_CAP,
    MANGAT,
    WARNER,
    PrivacyParams,
    audit_perturbation,
    build_private_filter,
    dp_audit,
    expected_cardinality,
    expected_fnr,
    jaccard_distance,
    mangat_perturb,
    measure_fpr_excluding_injected,
    measure_member_negative_rate,
    perturb,
    privacy_budget,
    warner_perturb,
)


def test_params_validation():
    PrivacyParams(MANGAT, 1.0)
    PrivacyParams(MANGAT, 0.3)
    PrivacyParams(WARNER, 0.75)
    with pytest.raises(ParameterError):
        PrivacyParams(MANGAT, 0.0)
    with pytest.raises(ParameterError):
        PrivacyParams(MANGAT, 1.0001)
    with pytest.raises(ParameterError):
        PrivacyParams(WARNER, 0.5)
    with pytest.raises(ParameterError):
        PrivacyParams(WARNER, 1.0)
    with pytest.raises(ParameterError):
        PrivacyParams("other", 0.7)


def test_enumeration_cap():
    params = PrivacyParams(MANGAT, 0.5)
    with pytest.raises(UnsupportedOperationError):
        perturb({0}, Universe(ENUMERATION_CAP + 1), params, seed=0)
    perturb({0}, Universe(64), params, seed=0)


def test_jaccard_distance_examples():
    assert jaccard_distance({1, 2, 3}, {1, 2, 3}) == 0
    assert jaccard_distance({1}, {2}) == 2
    assert jaccard_distance({1, 2}, {1, 2, 3}) == 1
    assert jaccard_distance(set(), set()) == 0


@settings(max_examples=60, deadline=None)
@given(a=st.sets(st.integers(0, 40), max_size=12), b=st.sets(st.integers(0, 40), max_size=12))
def test_jaccard_is_symmetric_difference_size(a, b):
    assert jaccard_distance(a, b) == len(a ^ b)
    assert jaccard_distance(a, b) == jaccard_distance(b, a)


def test_mangat_keeps_members_always():
    members = set(range(0, 50, 5))
    for seed in range(200):
        out = mangat_perturb(members, Universe(64), 0.3, seed)
        assert members <= set(out.members)
        assert out.original_size == len(members)
        assert all(x in out for x in members)


def test_mangat_p_one_is_identity():
    members = {3, 9, 12}
    for seed in range(50):
        out = mangat_perturb(members, Universe(40), 1.0, seed)
        assert set(out.members) == members


def test_mangat_mean_size():
    u, s, p, trials = 100, 10, 0.8, 10_000
    members = set(range(s))
    sizes = [len(mangat_perturb(members, Universe(u), p, seed)) for seed in range(trials)]
    mean = math.fsum(sizes) / trials
    expected = expected_cardinality(MANGAT, s, u, p)
    assert expected == pytest.approx(s + (1 - p) * (u - s))
    se = math.sqrt((u - s) * p * (1 - p)) / math.sqrt(trials)
    assert abs(mean - expected) < 3 * se


def test_warner_marginals():
    u, p, trials = 60, 0.75, 10_000
    members = {7, 21}
    kept = 0
    added = 0
    for seed in range(trials):
        out = warner_perturb(members, Universe(u), p, seed)
        kept += 7 in out
        added += 3 in out
    se = math.sqrt(p * (1 - p) / trials)
    assert abs(kept / trials - p) < 3 * se
    assert abs(added / trials - (1 - p)) < 3 * se


def test_warner_decisions_independent_across_elements():
    u, p, trials = 16, 0.75, 10_000
    members = {1, 2}
    both = kept1 = kept2 = 0
    for seed in range(trials):
        out = warner_perturb(members, Universe(u), p, seed)
        a, b = 1 in out, 2 in out
        kept1 += a
        kept2 += b
        both += a and b
    cov = both / trials - (kept1 / trials) * (kept2 / trials)
    assert abs(cov) < 0.015


def test_warner_mean_size():
    u, s, p, trials = 100, 10, 0.75, 10_000
    members = set(range(s))
    sizes = [len(warner_perturb(members, Universe(u), p, seed)) for seed in range(trials)]
    mean = math.fsum(sizes) / trials
    expected = expected_cardinality(WARNER, s, u, p)
    assert expected == pytest.approx(p * s + (1 - p) * (u - s))
    var = s * p * (1 - p) + (u - s) * p * (1 - p)
    assert abs(mean - expected) < 3 * math.sqrt(var / trials)


def test_perturb_dispatch_and_determinism():
    members = {1, 5, 9}
    u = Universe(32)
    a = perturb(members, u, PrivacyParams(WARNER, 0.8), seed=11)
    b = perturb(members, u, PrivacyParams(WARNER, 0.8), seed=11)
    assert set(a.members) == set(b.members)
    c = perturb(members, u, PrivacyParams(MANGAT, 0.8), seed=11)
    assert members <= set(c.members)
    assert a.mode == WARNER and c.mode == MANGAT


def test_budget_closed_forms():
    p = 0.5
    b = privacy_budget(PrivacyParams(MANGAT, p))
    assert b.epsilon == pytest.approx(math.log(1.0 / (1.0 - p)))
    assert b.epsilon_prime == pytest.approx(math.log(1.0 - p))
    assert b.delta == 0.0 and not b.symmetric

    w = privacy_budget(PrivacyParams(WARNER, 0.75))
    assert w.epsilon == pytest.approx(math.log(0.75 / 0.25))
    assert w.epsilon_prime is None  # one bound covers both directions
    assert w.symmetric

    degenerate = privacy_budget(PrivacyParams(MANGAT, 1.0))
    assert degenerate.epsilon == math.inf
    assert degenerate.epsilon_prime == -math.inf

    weak = privacy_budget(PrivacyParams(MANGAT, 1e-9))
    assert abs(weak.epsilon) < 2e-9


def test_expected_fnr():
    assert expected_fnr(MANGAT, 0.4) == 0.0
    assert expected_fnr(WARNER, 0.75) == pytest.approx(0.25)


def test_private_filter_mangat_complete():
    u = Universe(128)
    members = set(range(0, 128, 16))
    fparams = FilterParams(m=256, k=4, n=len(members))
    privacy = PrivacyParams(MANGAT, 0.6)
    for seed in range(300):
        filt = build_private_filter(members, u, fparams, privacy, seed)
        assert all(filt.query(x) == 1 for x in members)


def test_private_filter_p_one_equals_plain_build():
    u = Universe(64)
    members = {2, 17, 40}
    fparams = FilterParams(m=128, k=3, n=3)
    fam = HashFamily.keyed(b"shared")
    private = build_private_filter(members, u, fparams, PrivacyParams(MANGAT, 1.0), 7, family=fam)
    plain = BloomFilter.build(members, fparams, HashFamily.keyed(b"shared"), u)
    assert private.bit_bytes() == plain.bit_bytes()


def test_warner_member_negative_rate():
    u = Universe(100)
    members = set(range(20))
    fparams = FilterParams(m=1024, k=5, n=30)
    est = measure_member_negative_rate(members, u, fparams, PrivacyParams(WARNER, 0.75), 4000, seed=3)
    assert est.trials == 4000
    assert abs(est.rate - 0.25) < 4 * est.se
    assert est.se < 0.01


def test_mangat_member_negative_rate_is_zero():
    u = Universe(100)
    members = set(range(10))
    fparams = FilterParams(m=512, k=4, n=40)
    est = measure_member_negative_rate(members, u, fparams, PrivacyParams(MANGAT, 0.5), 500, seed=3)
    assert est.rate == 0.0


def test_audit_mangat_removal():
    report = audit_perturbation(
        PrivacyParams(MANGAT, 0.5), set(range(8)), Universe(64), x=0,
        trials=20_000, seed=101,
    )
    assert report.verdict == "pass"
    assert report.prob_with == 1.0
    assert report.ratio_lo <= 2.0 <= report.ratio_hi


def test_audit_warner_removal():
    report = audit_perturbation(
        PrivacyParams(WARNER, 0.75), set(range(8)), Universe(64), x=0,
        trials=20_000, seed=202,
    )
    assert report.verdict == "pass"
    assert report.ratio_lo <= 3.0 <= report.ratio_hi


def test_audit_reverse_direction():
    mang = audit_perturbation(
        PrivacyParams(MANGAT, 0.5), set(range(8)), Universe(64), x=0,
        trials=8_000, seed=9, direction="reverse",
    )
    assert mang.verdict == "pass"
    assert mang.ratio_lo <= 0.5 <= mang.ratio_hi
    warn = audit_perturbation(
        PrivacyParams(WARNER, 0.75), set(range(8)), Universe(64), x=0,
        trials=8_000, seed=9, direction="reverse",
    )
    assert warn.verdict == "pass"
    assert warn.ratio_lo <= 1.0 / 3.0 <= warn.ratio_hi


def test_audit_requires_member_target():
    with pytest.raises(ParameterError):
        audit_perturbation(PrivacyParams(MANGAT, 0.5), {1, 2}, Universe(16), x=5, trials=10, seed=0)


def test_dp_audit_identical_inputs_ratio_one():
    members = frozenset(range(6))

    def mech(s, seed):
        return perturb(s, Universe(32), PrivacyParams(MANGAT, 0.5), seed).members

    report = dp_audit(mech, members, members, x=0, trials=4000, epsilon_claimed=0.1, seed=5)
    assert report.verdict == "pass"
    assert report.ratio_point == pytest.approx(1.0, abs=1e-9)


def test_dp_audit_zero_denominator_is_inconclusive():
    def identity(s, seed):
        return set(s)

    report = dp_audit(identity, {5}, set(), x=5, trials=500, epsilon_claimed=1.0, seed=1)
    assert report.verdict == "inconclusive"
    assert math.isnan(report.ratio_point)
    assert report.prob_without == 0.0


def test_dp_audit_flags_a_leaky_mechanism():
    """A mechanism that never adds noise should fail any finite claim."""

    def leaky(s, seed):
        return set(s)

    report = dp_audit(leaky, {5, 6}, {6}, x=5, trials=2000, epsilon_claimed=0.5, seed=2)
    assert report.verdict == "inconclusive" or report.ratio_lo > math.exp(0.5)
    assert report.verdict != "pass"


@pytest.mark.parametrize("mode,p", [
    (MANGAT, 0.2), (MANGAT, 0.5), (MANGAT, 0.8),
    (WARNER, 0.6), (WARNER, 0.75), (WARNER, 0.9),
])
def test_audit_never_fails_honest_perturbation(mode, p):
    report = audit_perturbation(
        PrivacyParams(mode, p), set(range(6)), Universe(48), x=2,
        trials=1500, seed=77,
    )
    assert report.verdict != "fail"


def test_fpr_excluding_injected_elements():
    u = Universe(256)
    members = set(range(16))
    fparams = FilterParams(m=512, k=3, n=16)
    privacy = PrivacyParams(MANGAT, 0.5)
    out = measure_fpr_excluding_injected(members, u, fparams, privacy, trials=400,
                                         queries_per_trial=50, seed=8)
    mean_size = 16 + 0.5 * (256 - 16)
    assert abs(out.mean_perturbed_size - mean_size) < 3.0
    assert out.expected == pytest.approx(expected_fpr(fparams, n_effective=out.mean_perturbed_size))
    assert abs(out.rate - out.expected) < 0.05
    assert out.queries == 400 * 50
