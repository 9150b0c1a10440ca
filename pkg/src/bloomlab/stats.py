"""Small statistics and seeding helpers used by experiments and the CLI.

Per-trial seeds are derived from a 64-bit master seed, an experiment tag and
the trial index with ``mix_seed``, so trials are reproducible individually
and could be executed out of order or in parallel without changing results.
"""

from __future__ import annotations

import hashlib
import math
import struct

# Two-sided 99% normal quantile, used for every confidence interval here.
Z99 = 2.5758293035489004


def mix_seed(master_seed: int, tag: str, index: int) -> int:
    """Derive a 64-bit trial seed from (master_seed, tag, index).

    The mix is blake2b over the little-endian master seed, the UTF-8 tag and
    the little-endian index, truncated to 8 bytes. It is a fixed, documented
    function: the same triple always yields the same seed.
    """
    payload = struct.pack("<Q", master_seed & 0xFFFFFFFFFFFFFFFF)
    payload += tag.encode("utf-8")
    payload += struct.pack("<Q", index & 0xFFFFFFFFFFFFFFFF)
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def wilson_interval(successes: int, trials: int, z: float = Z99) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 0 or successes < 0 or successes > trials:
        raise ValueError("need 0 <= successes <= trials")
    if trials == 0:
        return (0.0, 1.0)
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials))
    # In exact arithmetic the interval always contains phat; clamp out the
    # float round-off so boundary checks like lo > 0 stay meaningful.
    return (min(max(0.0, center - half), phat), max(min(1.0, center + half), phat))


def mean_confidence_interval(values: list[float], z: float = Z99) -> tuple[float, float, float]:
    """Return (mean, lo, hi) using compensated summation and a normal CI."""
    n = len(values)
    if n == 0:
        raise ValueError("need at least one value")
    mean = math.fsum(values) / n
    if n == 1:
        return (mean, mean, mean)
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    se = math.sqrt(var / n)
    return (mean, mean - z * se, mean + z * se)


def standard_error(values: list[float]) -> float:
    """Standard error of the mean of ``values``."""
    n = len(values)
    if n < 2:
        return 0.0
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return math.sqrt(var / n)
