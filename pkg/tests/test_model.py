"""Unit and property tests for the group discordance model."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperbc.model import (
    DiscordanceSpec,
    default_alpha,
    discordance,
    dw_group_update,
    group_mean,
    lemma_min_discordance_oracle,
    min_isolation_distance,
)

REL_TOL = 1e-12


# ---------------------------------------------------------------- fixed values


def test_default_alpha_values():
    assert default_alpha(1.0, 3) == 2.25
    assert default_alpha(2.0, 3) == pytest.approx(math.sqrt(27.0 / 6.0), rel=1e-15)
    assert default_alpha(1.0, 2) == 2.0


def test_discordance_two_value_probe():
    spec = DiscordanceSpec(p=1.0)
    assert discordance(np.array([0.3, 0.0, 0.0]), spec) == pytest.approx(0.3, abs=1e-15)


def test_discordance_three_distinct():
    spec = DiscordanceSpec(p=1.0)
    d = discordance(np.array([0.0, 0.3, 0.6]), spec)
    # mean 0.3, mean absolute deviation 0.2, scaled by 9/4
    assert d == pytest.approx(0.45, abs=1e-15)


def test_group_update_applies_below_bound():
    spec = DiscordanceSpec(p=1.0, c=1.0)
    out, changed = dw_group_update(np.array([0.0, 0.3, 0.6]), spec)
    assert changed
    assert out == pytest.approx([0.3, 0.3, 0.3], abs=1e-15)


def test_group_update_skips_at_or_above_bound():
    spec = DiscordanceSpec(p=1.0, c=1.0)
    x = np.array([0.0, 1.5, 3.0])
    assert discordance(x, spec) == pytest.approx(2.25, abs=1e-14)
    out, changed = dw_group_update(x, spec)
    assert not changed
    assert np.array_equal(out, x)


def test_group_update_tie_at_bound_is_inert():
    # strict inequality: discordance exactly c must not interact
    spec = DiscordanceSpec(p=1.0, c=1.0)
    x = np.array([1.0, 0.0, 0.0])
    assert discordance(x, spec) == 1.0
    _, changed = dw_group_update(x, spec)
    assert not changed


def test_constant_tuple_updates_trivially():
    spec = DiscordanceSpec(p=2.0)
    out, changed = dw_group_update(np.array([0.7, 0.7, 0.7]), spec)
    assert changed
    assert np.all(out == 0.7)


def test_min_isolation_distance_default_alpha():
    for p in (0.5, 1.0, 2.0):
        spec = DiscordanceSpec(p=p, c=1.0)
        assert min_isolation_distance(spec) == pytest.approx(1.0, rel=REL_TOL)
    spec = DiscordanceSpec(p=1.0, c=0.4)
    assert min_isolation_distance(spec) == pytest.approx(0.4, rel=REL_TOL)


def test_min_isolation_distance_unit_alpha():
    spec = DiscordanceSpec(p=1.0, alpha=1.0, c=1.0)
    assert min_isolation_distance(spec) == pytest.approx(2.25, rel=REL_TOL)


# ------------------------------------------------------------------ validation


def test_spec_rejects_bad_parameters():
    with pytest.raises(ValueError, match="p must be positive"):
        DiscordanceSpec(p=0.0)
    with pytest.raises(ValueError, match="c must be positive"):
        DiscordanceSpec(c=-1.0)
    with pytest.raises(ValueError, match="m must be"):
        DiscordanceSpec(m=1)
    with pytest.raises(ValueError, match="alpha must be positive"):
        DiscordanceSpec(alpha=0.0)


def test_discordance_rejects_wrong_length():
    spec = DiscordanceSpec(m=3)
    with pytest.raises(ValueError, match="length m=3"):
        discordance(np.array([0.0, 1.0]), spec)


# ------------------------------------------------------------------ properties


@given(
    x=st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    s=st.floats(1e-3, 1e3),
    p=st.sampled_from([0.5, 1.0, 2.0]),
)
@settings(max_examples=200, deadline=None)
def test_scale_covariance(x, s, p):
    spec = DiscordanceSpec(p=p)
    arr = np.array(x)
    d0 = discordance(arr, spec)
    d1 = discordance(s * arr, spec)
    assert d1 == pytest.approx(s * d0, rel=1e-9, abs=1e-12)


@given(
    x=st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    t=st.floats(-100, 100),
    p=st.sampled_from([0.5, 1.0, 2.0]),
)
@settings(max_examples=200, deadline=None)
def test_translation_invariance(x, t, p):
    spec = DiscordanceSpec(p=p)
    arr = np.array(x)
    d0 = discordance(arr, spec)
    d1 = discordance(arr + t, spec)
    # translation perturbs the gaps by rounding of x + t only
    assert d1 == pytest.approx(d0, rel=1e-9, abs=1e-9)


@given(
    x=st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    p=st.sampled_from([0.5, 1.0, 2.0]),
)
@settings(max_examples=200, deadline=None)
def test_reflection_invariance_is_exact(x, p):
    spec = DiscordanceSpec(p=p)
    arr = np.array(x)
    assert discordance(arr, spec) == discordance(-arr, spec)


@given(
    gap=st.floats(1e-6, 50),
    p=st.sampled_from([0.5, 1.0, 2.0]),
    m=st.integers(2, 6),
)
@settings(max_examples=200, deadline=None)
def test_probe_normalization(gap, p, m):
    spec = DiscordanceSpec(p=p, m=m)
    probe = np.zeros(m)
    probe[0] = gap
    assert discordance(probe, spec) == pytest.approx(gap, rel=1e-12)


@given(x=st.lists(st.floats(-3, 3), min_size=3, max_size=3))
@settings(max_examples=200, deadline=None)
def test_update_never_increases_spread(x):
    spec = DiscordanceSpec(p=1.0, c=1.0)
    arr = np.array(x)
    out, changed = dw_group_update(arr, spec)
    v_before = np.sum((arr - arr.mean()) ** 2)
    v_after = np.sum((out - out.mean()) ** 2)
    assert v_after <= v_before + 1e-15
    if changed and v_before > 1e-20:
        assert v_after < v_before
    assert out.min() >= arr.min() and out.max() <= arr.max()


def test_update_conserves_sum_to_rounding():
    spec = DiscordanceSpec(p=2.0, c=1.0)
    rng = np.random.default_rng(7)
    for _ in range(100):
        arr = rng.uniform(-1, 1, 3) * 0.2
        out, changed = dw_group_update(arr, spec)
        assert changed
        assert out.sum() == pytest.approx(arr.sum(), abs=1e-14)


# ---------------------------------------------------------- brute-force oracle


def test_oracle_small_integer_set():
    spec = DiscordanceSpec(p=1.0)
    d_min, tup = lemma_min_discordance_oracle([0, 1, 3], spec)
    assert d_min == 1.0
    assert len(set(tup)) == 2
    vals = sorted(set(tup))
    assert vals[1] - vals[0] == 1.0


def test_oracle_two_value_set_gives_gap():
    for c in (0.25, 1.0, 2.0):
        spec = DiscordanceSpec(p=1.0, c=c)
        d_min, _ = lemma_min_discordance_oracle([0.0, c], spec)
        assert d_min == discordance(np.array([c, 0.0, 0.0]), spec)


def test_oracle_agreement_randomized():
    """Enumerated minimum must equal discordance((A_min, 0, 0)) bit-exactly.

    The canonical deviation form evaluates any two-value tuple with gap g on
    the same float vector (0, ..., 0, g), so no tolerance is needed.
    """
    rng = np.random.default_rng(20260816)
    checked = 0
    for trial in range(100):
        p = [0.5, 1.0, 2.0][trial % 3]
        spec = DiscordanceSpec(p=p)
        n = rng.integers(2, 6)
        vals = np.sort(rng.uniform(-4, 4, n))
        if np.min(np.diff(vals)) < 1e-9:
            continue
        a_min = float(np.min(np.diff(vals)))
        d_min, tup = lemma_min_discordance_oracle(vals, spec)
        ref = discordance(np.array([a_min, 0.0, 0.0]), spec)
        assert d_min == ref, (vals, p)
        assert len(set(tup)) == 2
        gap = max(tup) - min(tup)
        assert gap == a_min
        checked += 1
    assert checked >= 95


def test_oracle_guards():
    spec = DiscordanceSpec(p=1.0)
    with pytest.raises(ValueError, match="two distinct"):
        lemma_min_discordance_oracle([1.0, 1.0], spec)
    with pytest.raises(ValueError, match="enumeration guard"):
        lemma_min_discordance_oracle(np.arange(200), spec)


def test_group_mean_plain():
    assert group_mean(np.array([0.0, 0.3, 0.6])) == pytest.approx(0.3, abs=1e-16)
