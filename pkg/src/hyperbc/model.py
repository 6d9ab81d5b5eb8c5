"""Core bounded-confidence group model.

A group of m agents holding scalar opinions interacts as a whole: if the
group's discordance (a scaled p-mean of deviations from the group mean) is
below the confidence bound c, every member adopts the group mean; otherwise
nothing happens.  The same primitives drive both the agent-based engine and
the mean-field density solver, so they live here in one place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

__all__ = [
    "DiscordanceSpec",
    "OpinionTuple",
    "default_alpha",
    "group_mean",
    "discordance",
    "dw_group_update",
    "min_isolation_distance",
    "lemma_min_discordance_oracle",
]

# An opinion tuple is just a 1-D float array of length m; no wrapper class.
OpinionTuple = np.ndarray

# Enumeration guard for the brute-force oracle.
_ORACLE_MAX_TUPLES = 2_000_000


def default_alpha(p: float, m: int = 3) -> float:
    """Scaling constant that normalizes the two-value probe tuple.

    Chosen so that discordance((1, 0, ..., 0)) == 1, which makes the minimum
    isolation distance equal to the confidence bound c.  For the probe tuple
    the mean is 1/m and the deviation power sum is ((m-1)^p + (m-1)) / m^p,
    hence alpha = (m^(p+1) / ((m-1)^p + m-1))^(1/p).
    """
    if p <= 0:
        raise ValueError("p must be positive")
    if m < 2:
        raise ValueError("m must be at least 2")
    return (m ** (p + 1) / ((m - 1) ** p + (m - 1))) ** (1.0 / p)


@dataclass(frozen=True)
class DiscordanceSpec:
    """Model parameters: deviation exponent p, scale alpha, bound c, group size m.

    alpha defaults to the normalizing constant for (p, m); pass an explicit
    value to override the normalization.
    """

    p: float = 1.0
    alpha: float | None = None
    c: float = 1.0
    m: int = 3

    def __post_init__(self):
        if self.p <= 0:
            raise ValueError("p must be positive")
        if self.c <= 0:
            raise ValueError("c must be positive")
        if int(self.m) != self.m or self.m < 2:
            raise ValueError("m must be an integer >= 2")
        object.__setattr__(self, "m", int(self.m))
        if self.alpha is None:
            object.__setattr__(self, "alpha", default_alpha(self.p, self.m))
        elif self.alpha <= 0:
            raise ValueError("alpha must be positive")


def group_mean(x: OpinionTuple) -> float:
    arr = np.asarray(x, dtype=float)
    return float(arr.sum() / arr.size)


def _canonical_deviation_base(x: OpinionTuple) -> np.ndarray:
    """Translate/sort/reflect a tuple into a canonical nonnegative form.

    Discordance is invariant under permutation, translation and reflection.
    Evaluating on the canonical representative makes those equivalences exact
    in floating point: any two tuples related by them produce bit-identical
    results.  That is what allows the brute-force oracle to be compared
    against discordance((gap, 0, ..., 0)) with == rather than a tolerance.
    """
    arr = np.asarray(x, dtype=float)
    fwd = np.sort(arr - arr.min())
    rev = np.sort(arr.max() - arr)
    for a, b in zip(fwd, rev):
        if a < b:
            return fwd
        if b < a:
            return rev
    return fwd


def discordance(x: OpinionTuple, spec: DiscordanceSpec) -> float:
    """Scaled p-mean of the tuple's deviations from its own mean."""
    y = _canonical_deviation_base(x)
    if y.size != spec.m:
        raise ValueError(f"expected a tuple of length m={spec.m}, got {y.size}")
    mu = y.sum() / y.size
    dev = np.abs(y - mu)
    return spec.alpha * float((dev ** spec.p).sum() / y.size) ** (1.0 / spec.p)


def dw_group_update(x: OpinionTuple, spec: DiscordanceSpec) -> tuple[np.ndarray, bool]:
    """Apply one group interaction; returns (new opinions, whether they changed).

    The whole tuple moves to its mean iff discordance < c (strict: a tie at
    the bound does not interact).  The mean is clamped to the tuple's hull to
    guard against 1-ulp rounding excursions, which keeps the agent engine's
    hull-confinement invariant exact.
    """
    arr = np.asarray(x, dtype=float)
    if discordance(arr, spec) < spec.c:
        mu = min(max(arr.sum() / arr.size, float(arr.min())), float(arr.max()))
        return np.full(arr.size, mu), True
    return arr.copy(), False


def min_isolation_distance(spec: DiscordanceSpec) -> float:
    """Smallest gap at which a two-value group no longer interacts.

    Discordance of (gap, 0, ..., 0) is linear in gap, so the threshold is
    c / discordance((1, 0, ..., 0)); with the default alpha this equals c.
    Opinion profiles whose distinct values are pairwise at least this far
    apart are steady states.
    """
    probe = np.zeros(spec.m)
    probe[0] = 1.0
    return spec.c / discordance(probe, spec)


def lemma_min_discordance_oracle(
    values, spec: DiscordanceSpec
) -> tuple[float, tuple[float, ...]]:
    """Brute-force minimum discordance over nontrivial tuples from a value set.

    Enumerates every m-tuple with entries drawn (with repetition) from
    ``values``, skips the constant tuples, and returns the minimum discordance
    together with the first minimizing tuple in enumeration order.  Used as an
    independent check that the minimum equals discordance((A_min, 0, ..., 0))
    where A_min is the smallest pairwise gap in the set, and that a minimizer
    takes only two distinct values.
    """
    vals = sorted(set(float(v) for v in values))
    if len(vals) < 2:
        raise ValueError("need at least two distinct values")
    n_tuples = len(vals) ** spec.m
    if n_tuples > _ORACLE_MAX_TUPLES:
        raise ValueError(
            f"{len(vals)}^{spec.m} = {n_tuples} tuples exceeds the enumeration guard"
        )
    best_d = math.inf
    best_tuple: tuple[float, ...] | None = None
    for tup in product(vals, repeat=spec.m):
        if tup.count(tup[0]) == len(tup):
            continue
        d = discordance(np.array(tup), spec)
        if d < best_d:
            best_d = d
            best_tuple = tup
    assert best_tuple is not None
    return best_d, best_tuple
