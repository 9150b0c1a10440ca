"""Core filter behavior: hashing, building, querying, serialization."""

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2

from bloomlab.errors import DomainError, ParameterError, UnsupportedOperationError
from bloomlab.feistel import FeistelPermutation
from bloomlab.filters import (
    FORMAT_VERSION,
    KEY_OFFSET,
    MAGIC,
    BloomFilter,
    FilterParams,
    HashFamily,
    NyFilter,
    Universe,
    derive_indices,
    estimate_fpr,
    expected_fpr,
    ny_wrap,
    optimal_k,
)


def test_params_validation():
    with pytest.raises(ParameterError):
        FilterParams(m=0, k=1, n=1)
    with pytest.raises(ParameterError):
        FilterParams(m=8, k=0, n=1)
    with pytest.raises(ParameterError):
        FilterParams(m=8, k=1, n=-1)
    with pytest.raises(ParameterError):
        FilterParams(m=8, k=1, n=1, epsilon=1.5)
    FilterParams(m=1, k=1, n=0)


def test_optimal_k_and_sizing():
    assert optimal_k(1024, 100) == 7
    assert optimal_k(1, 100) == 1  # clamped
    params = FilterParams.from_target(100, 0.01)
    assert params.m == math.ceil(-100 * math.log(0.01) / math.log(2) ** 2)
    assert params.k == optimal_k(params.m, 100)
    assert expected_fpr(params) <= 0.011


def test_universe_validation():
    u = Universe(16)
    assert u.contains(0) and u.contains(15)
    assert not u.contains(16) and not u.contains(-1) and not u.contains("3")
    with pytest.raises(DomainError):
        u.require(16)
    with pytest.raises(ParameterError):
        Universe(0)


def test_derive_indices_deterministic_and_in_range():
    params = FilterParams(m=97, k=5, n=10)
    for family in (HashFamily.public(), HashFamily.keyed(b"secret")):
        a = derive_indices(family, params, 42)
        b = derive_indices(family, params, 42)
        assert a == b
        assert len(a) == 5
        assert all(0 <= j < 97 for j in a)


def test_keyed_families_differ_and_public_is_keyless():
    params = FilterParams(m=1024, k=4, n=10)
    fam1 = HashFamily.keyed(b"k1")
    fam2 = HashFamily.keyed(b"k2")
    pub = HashFamily.public()
    sample = range(200)
    assert any(derive_indices(fam1, params, x) != derive_indices(fam2, params, x) for x in sample)
    assert any(derive_indices(fam1, params, x) != derive_indices(pub, params, x) for x in sample)
    assert pub.key == b""


def test_true_random_memoizes_and_locks_shape():
    fam = HashFamily.true_random(seed=7)
    first = fam.indices(5, 32, 3)
    assert fam.indices(5, 32, 3) == first
    assert all(0 <= j < 32 for j in first)
    with pytest.raises(ParameterError):
        fam.indices(5, 64, 3)


def test_true_random_same_seed_same_draw_order():
    a = HashFamily.true_random(seed=123)
    b = HashFamily.true_random(seed=123)
    for x in (9, 2, 77, 9):
        assert a.indices(x, 16, 2) == b.indices(x, 16, 2)


def test_keyed_prf_indices_uniform_chi_square():
    """Each of the k index positions should be uniform on [0, m)."""
    m, k, samples = 1024, 7, 100_000
    params = FilterParams(m=m, k=k, n=100)
    family = HashFamily.keyed(b"uniformity-check-key")
    counts = [[0] * m for _ in range(k)]
    for x in range(samples):
        for i, j in enumerate(derive_indices(family, params, x)):
            counts[i][j] += 1
    expected = samples / m
    critical = chi2.ppf(0.999, m - 1)
    for i in range(k):
        stat = sum((c - expected) ** 2 / expected for c in counts[i])
        assert stat < critical, f"index position {i} fails uniformity: {stat} >= {critical}"


def test_build_empty_and_membership():
    params = FilterParams(m=64, k=3, n=0)
    u = Universe(256)
    empty = BloomFilter.build([], params, HashFamily.public(), u)
    assert empty.popcount() == 0
    assert all(empty.query(x) == 0 for x in range(256))
    members = {3, 77, 200}
    filt = BloomFilter.build(members, FilterParams(m=64, k=3, n=3), HashFamily.keyed(b"x"), u)
    assert all(filt.query(x) == 1 for x in members)
    assert 1 <= filt.popcount() <= 9


def test_build_rejects_elements_outside_universe():
    params = FilterParams(m=16, k=2, n=1)
    with pytest.raises(DomainError):
        BloomFilter.build({99}, params, HashFamily.public(), Universe(10))


def test_mean_fill_ratio_matches_expectation():
    """Average fill over seeded builds against the exact closed form."""
    m, k, n, builds = 1024, 7, 100, 400
    params = FilterParams(m=m, k=k, n=n)
    u = Universe(1 << 16)
    exact = 1.0 - (1.0 - 1.0 / m) ** (k * n)
    fills = []
    for b in range(builds):
        rng = random.Random(b)
        members = rng.sample(range(u.size), n)
        filt = BloomFilter.build(members, params, HashFamily.keyed(rng.randbytes(8)), u)
        fills.append(filt.fill_ratio())
    mean = math.fsum(fills) / builds
    sd = math.sqrt(math.fsum((f - mean) ** 2 for f in fills) / (builds - 1))
    assert abs(mean - exact) < 3 * sd / math.sqrt(builds) + 1e-4
    assert abs(exact - (1.0 - math.exp(-k * n / m))) < 2e-4


def test_fpr_monte_carlo_matches_closed_form():
    params = FilterParams(m=1024, k=7, n=100)
    est = estimate_fpr(params, Universe(1 << 20), "public", builds=20, queries=40_000, seed=9)
    assert abs(est.rate - est.expected) < 0.002
    assert est.ci_lo <= est.rate <= est.ci_hi


def test_insert_grows_membership_never_shrinks():
    params = FilterParams(m=16, k=2, n=0)
    u = Universe(512)
    filt = BloomFilter(params, HashFamily.public(), u)
    rng = random.Random(4)
    positives = set()
    for _ in range(300):
        probe = rng.randrange(512)
        if filt.query(probe):
            positives.add(probe)
        filt.insert(rng.randrange(512))
        assert all(filt.query(p) == 1 for p in positives)


def test_insert_idempotent_bits():
    params = FilterParams(m=64, k=3, n=2)
    u = Universe(64)
    filt = BloomFilter.build({5}, params, HashFamily.public(), u)
    before = filt.bit_bytes()
    filt.insert(5)
    assert filt.bit_bytes() == before


def test_static_kinds_refuse_insert():
    u = Universe(64)
    params = FilterParams(m=32, k=2, n=4)
    prf = BloomFilter.build({1, 2}, params, HashFamily.keyed(b"k"), u)
    with pytest.raises(UnsupportedOperationError):
        prf.insert(3)
    ny = NyFilter.build({1, 2}, params, b"pk", u)
    with pytest.raises(UnsupportedOperationError):
        ny.insert(3)


def test_query_is_steady():
    u = Universe(128)
    params = FilterParams(m=32, k=2, n=4)
    for fam in (HashFamily.public(), HashFamily.true_random(seed=3)):
        filt = BloomFilter.build({1, 2, 3}, params, fam, u)
        before = filt.bit_bytes()
        for x in range(60):
            filt.query(x)
        assert filt.bit_bytes() == before


def test_deterministic_builds():
    u = Universe(1024)
    params = FilterParams(m=128, k=4, n=16)
    members = set(range(0, 1024, 64))
    a = BloomFilter.build(members, params, HashFamily.keyed(b"same"), u)
    b = BloomFilter.build(members, params, HashFamily.keyed(b"same"), u)
    assert a.bit_bytes() == b.bit_bytes()
    c = BloomFilter.build(members, params, HashFamily.true_random(seed=5), u)
    d = BloomFilter.build(members, params, HashFamily.true_random(seed=5), u)
    assert c.bit_bytes() == d.bit_bytes()


@settings(max_examples=50, deadline=None)
@given(
    small=st.sets(st.integers(0, 255), max_size=8),
    extra=st.sets(st.integers(0, 255), max_size=8),
)
def test_bits_monotone_under_set_growth(small, extra):
    params = FilterParams(m=64, k=3, n=16)
    u = Universe(256)
    fam = HashFamily.keyed(b"monotone")
    a = BloomFilter.build(small, params, fam, u)
    b = BloomFilter.build(small | extra, params, fam, u)
    a_bits, b_bits = a.bit_bytes(), b.bit_bytes()
    assert all((x & y) == x for x, y in zip(a_bits, b_bits))


def test_saturated_filter_answers_one_everywhere():
    params = FilterParams(m=8, k=2, n=0)
    u = Universe(4096)
    filt = BloomFilter(params, HashFamily.public(), u)
    x = 0
    while not filt.is_saturated():
        filt.insert(x)
        x += 1
    assert filt.fill_ratio() == 1.0
    assert all(filt.query(v) == 1 for v in range(0, 4096, 37))


def test_snapshot_roundtrip_standard_and_keyed():
    u = Universe(512)
    params = FilterParams(m=96, k=3, n=8)
    for fam in (HashFamily.public(), HashFamily.keyed(b"roundtrip")):
        filt = BloomFilter.build(set(range(8)), params, fam, u)
        blob = filt.to_bytes()
        assert blob[:4] == MAGIC
        assert blob[4] == FORMAT_VERSION
        back = BloomFilter.from_bytes(blob, u)
        assert back.bit_bytes() == filt.bit_bytes()
        assert back.kind == filt.kind
        assert all(back.query(x) == filt.query(x) for x in range(512))


def test_snapshot_rejects_garbage_and_wrong_kind():
    with pytest.raises(ParameterError):
        BloomFilter.from_bytes(b"nope")
    u = Universe(128)
    ny = NyFilter.build({1, 5}, FilterParams(m=32, k=2, n=2), b"pk", u)
    with pytest.raises(ParameterError):
        BloomFilter.from_bytes(ny.to_bytes())
    with pytest.raises(ParameterError):
        NyFilter.from_bytes(
            BloomFilter.build({1}, FilterParams(m=32, k=2, n=1), HashFamily.public(), u).to_bytes(),
            u,
        )


def test_ny_snapshot_roundtrip_and_key_offset():
    u = Universe(300)
    params = FilterParams(m=64, k=2, n=4)
    key = b"ny-filter-key"
    ny = NyFilter.build({10, 20, 30, 40}, params, key, u)
    blob = ny.to_bytes()
    assert blob[KEY_OFFSET:KEY_OFFSET + len(key)] == key
    back = NyFilter.from_bytes(blob, u)
    assert all(back.query(x) == ny.query(x) for x in range(300))


def test_debug_json_fields():
    import json

    u = Universe(64)
    filt = BloomFilter.build({1, 2}, FilterParams(m=16, k=2, n=2), HashFamily.keyed(b"dbg"), u)
    dump = json.loads(filt.to_debug_json())
    assert dump["m"] == 16 and dump["k"] == 2 and dump["kind"] == "prf-backed"
    assert dump["popcount"] == filt.popcount()
    assert bytes.fromhex(dump["bits_hex"]) == filt.bit_bytes()
    assert bytes.fromhex(dump["key_hex"]) == b"dbg"


def test_ny_wrap_matches_inner_on_permuted_elements():
    u = Universe(256)
    params = FilterParams(m=64, k=2, n=8)
    members = set(range(0, 80, 10))
    builder = ny_wrap(
        lambda permuted: BloomFilter.build(permuted, params, HashFamily.public(), u),
        b"wrapped",
        u,
    )
    ny = builder(members)
    assert all(ny.query(x) == 1 for x in members)
    prp = FeistelPermutation(b"wrapped", 256)
    for x in range(256):
        assert ny.query(x) == ny.inner.query(prp.encrypt(x))


def test_ny_filters_with_distinct_keys_differ():
    u = Universe(4096)
    params = FilterParams(m=64, k=2, n=8)
    members = set(range(8))
    rng = random.Random(0)
    for _ in range(100):
        k1, k2 = rng.randbytes(8), rng.randbytes(8)
        if k1 == k2:
            continue
        a = NyFilter.build(members, params, k1, u)
        b = NyFilter.build(members, params, k2, u)
        assert a.inner.bit_bytes() != b.inner.bit_bytes()


@pytest.mark.parametrize("size", [1, 2, 3, 37, 256, 1000])
def test_feistel_is_a_bijection(size):
    perm = FeistelPermutation(b"bijection", size)
    images = [perm.encrypt(x) for x in range(size)]
    assert sorted(images) == list(range(size))
    assert all(perm.decrypt(y) == x for x, y in enumerate(images))


def test_feistel_rejects_out_of_domain():
    perm = FeistelPermutation(b"k", 100)
    with pytest.raises(ParameterError):
        perm.encrypt(100)
    with pytest.raises(ParameterError):
        perm.decrypt(-1)


@settings(max_examples=60, deadline=None)
@given(size=st.integers(1, 2048), key=st.binary(max_size=8), x=st.integers(0, 1 << 30))
def test_feistel_roundtrip_property(size, key, x):
    perm = FeistelPermutation(key, size)
    v = x % size
    assert perm.decrypt(perm.encrypt(v)) == v


def test_query_domain_error():
    u = Universe(32)
    filt = BloomFilter.build({1}, FilterParams(m=16, k=2, n=1), HashFamily.public(), u)
    with pytest.raises(DomainError):
        filt.query(32)
    with pytest.raises(DomainError):
        filt.insert(-1)
