"""Tests for the agent engine: sampling, stepping, freezing, ensembles.

The compiled stepping loop is checked draw-for-draw against the pure-Python
step path on a shared RNG stream, which pins the kernel to the reference
update semantics bit for bit.
"""

import numpy as np
import pytest

from hyperbc.abm import (
    EnsembleConfig,
    HistogramResult,
    OpinionState,
    _advance_kernel,
    abm_step,
    is_frozen,
    opinion_blocks,
    run_ensemble,
    run_realization,
    sample_hyperedge,
)
from hyperbc.model import DiscordanceSpec, min_isolation_distance

SPEC = DiscordanceSpec()
DELTA = min_isolation_distance(SPEC)


# ---------------------------------------------------------------------------
# hyperedge sampling
# ---------------------------------------------------------------------------


def test_sample_hyperedge_three_agents():
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert sorted(sample_hyperedge(3, rng)) == [0, 1, 2]


def test_sample_hyperedge_uniform_over_triples():
    # N=4 has exactly 4 unordered triples; at 10^6 draws each frequency is
    # 0.25 within 0.002 (about 4.6 sigma of the multinomial)
    rng = np.random.default_rng(11)
    counts = {}
    draws = 10**6
    for _ in range(draws):
        key = tuple(sorted(sample_hyperedge(4, rng)))
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 4
    for key, cnt in counts.items():
        assert abs(cnt / draws - 0.25) < 0.002, (key, cnt)


def test_sample_hyperedge_distinct_indices():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        i, j, k = sample_hyperedge(1500, rng)
        assert len({i, j, k}) == 3
        assert 0 <= min(i, j, k) and max(i, j, k) < 1500


def test_sample_hyperedge_needs_three_agents():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        sample_hyperedge(2, rng)


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------


def test_abm_step_constant_profile_only_counts():
    state = OpinionState(np.full(7, 0.3))
    abm_step(state, SPEC, np.random.default_rng(1))
    assert np.all(state.opinions == 0.3)
    assert state.step_count == 1


def test_abm_step_merges_admissible_triple():
    # d = 2.25 * mean(|0-0.3|, |0.3-0.3|, |0.6-0.3|) = 0.45 < 1
    state = OpinionState(np.array([0.0, 0.3, 0.6]))
    abm_step(state, SPEC, np.random.default_rng(2))
    assert state.opinions == pytest.approx([0.3, 0.3, 0.3], abs=1e-15)


def test_abm_step_skips_discordant_triple():
    # d = 2.25 * mean(|0-2|, |2-2|, |4-2|) = 3 >= 1
    state = OpinionState(np.array([0.0, 2.0, 4.0]))
    abm_step(state, SPEC, np.random.default_rng(3))
    assert np.array_equal(state.opinions, [0.0, 2.0, 4.0])
    assert state.step_count == 1


def test_opinion_state_requires_vector():
    with pytest.raises(ValueError):
        OpinionState(np.zeros((3, 3)))


# ---------------------------------------------------------------------------
# freeze detection
# ---------------------------------------------------------------------------


def test_is_frozen_constant_profile():
    assert is_frozen(OpinionState(np.zeros(10)), SPEC)


def test_is_frozen_blocks_beyond_isolation():
    x = np.concatenate([np.zeros(5), np.full(5, 1.5 * DELTA)])
    assert is_frozen(OpinionState(x), SPEC)


def test_is_frozen_blocks_within_isolation():
    x = np.concatenate([np.zeros(5), np.full(5, 0.5 * DELTA)])
    assert not is_frozen(OpinionState(x), SPEC)


def test_is_frozen_tolerates_block_jitter():
    x = np.concatenate([np.zeros(4), 1e-10 * np.arange(3), 2.0 + 1e-10 * np.arange(3)])
    assert is_frozen(OpinionState(x), SPEC, freeze_tolerance=1e-9)
    # the same jitter is a separate block at a tighter tolerance, and the
    # sub-isolation gap between the jittered values then blocks freezing
    assert not is_frozen(OpinionState(x), SPEC, freeze_tolerance=1e-12)


def test_is_frozen_three_blocks():
    x = np.array([-1.2, -1.2, 0.0, 0.0, 1.1, 1.1])
    assert is_frozen(OpinionState(x), SPEC)
    x = np.array([-1.2, -1.2, 0.0, 0.0, 0.9, 0.9])
    assert not is_frozen(OpinionState(x), SPEC)


def test_opinion_blocks_positions_and_masses():
    x = np.array([0.5, -1.0, 0.5, -1.0, 0.5, 2.0])
    pos, mass = opinion_blocks(x, 1e-9)
    assert pos == pytest.approx([-1.0, 0.5, 2.0])
    assert mass == pytest.approx([2 / 6, 3 / 6, 1 / 6])
    assert mass.sum() == pytest.approx(1.0, abs=1e-15)


# ---------------------------------------------------------------------------
# compiled loop matches the reference path
# ---------------------------------------------------------------------------


def test_kernel_matches_python_steps():
    n, steps = 60, 400
    rng_a = np.random.default_rng(123)
    state = OpinionState(rng_a.uniform(-1, 1, n))
    for _ in range(steps):
        abm_step(state, SPEC, rng_a)

    rng_b = np.random.default_rng(123)
    x = rng_b.uniform(-1, 1, n)
    done, frozen = _advance_kernel(
        x, SPEC.p, SPEC.alpha, SPEC.c, DELTA, 1e-9,
        np.int64(steps), np.int64(steps), rng_b,
    )
    assert done == steps
    assert np.array_equal(state.opinions, x)


def test_kernel_matches_python_steps_p2():
    spec = DiscordanceSpec(p=2.0)
    n, steps = 40, 300
    rng_a = np.random.default_rng(77)
    state = OpinionState(rng_a.uniform(-1, 1, n))
    for _ in range(steps):
        abm_step(state, spec, rng_a)

    rng_b = np.random.default_rng(77)
    x = rng_b.uniform(-1, 1, n)
    _advance_kernel(
        x, spec.p, spec.alpha, spec.c, min_isolation_distance(spec), 1e-9,
        np.int64(steps), np.int64(steps), rng_b,
    )
    assert np.array_equal(state.opinions, x)


# ---------------------------------------------------------------------------
# invariants over full runs
# ---------------------------------------------------------------------------


def test_mean_conservation_over_run():
    cfg = EnsembleConfig(n_agents=500, half_width=3.0, step_cap=10**6)
    state, summary = run_realization(cfg, 17)
    x0 = np.random.default_rng(17).uniform(-3, 3, 500)
    assert abs(state.opinions.mean() - x0.mean()) < 1e-12


def test_hull_confinement_monotone():
    rng = np.random.default_rng(29)
    state = OpinionState(rng.uniform(-2, 2, 40))
    lo, hi = state.opinions.min(), state.opinions.max()
    for _ in range(2000):
        abm_step(state, SPEC, rng)
        cur_lo, cur_hi = state.opinions.min(), state.opinions.max()
        assert cur_lo >= lo and cur_hi <= hi
        lo, hi = cur_lo, cur_hi


def test_energy_nonincreasing():
    rng = np.random.default_rng(31)
    state = OpinionState(rng.uniform(-1, 1, 30))

    def energy(x):
        return float(np.sum((x - x.mean()) ** 2))

    e = energy(state.opinions)
    drops = 0
    for _ in range(3000):
        abm_step(state, SPEC, rng)
        e_next = energy(state.opinions)
        assert e_next <= e + 1e-14
        if e_next < e - 1e-14:
            drops += 1
        e = e_next
    assert drops > 50  # plenty of nontrivial updates actually fired


def test_frozen_realization_gaps():
    cfg = EnsembleConfig(
        n_agents=50, half_width=2.0, realizations=20, step_cap=10**6, master_seed=99
    )
    result = run_ensemble(cfg)
    assert result.frozen_count > 10
    for s in result.summaries:
        assert s.masses.sum() == pytest.approx(1.0, abs=1e-14)
        assert np.all(np.diff(s.positions) > 0)
        if s.frozen:
            # block means inherit the edge-to-edge isolation of the blocks
            assert np.all(np.diff(s.positions) >= DELTA - 1e-12)
        else:
            assert s.steps == cfg.step_cap


def test_step_cap_flagged():
    cfg = EnsembleConfig(n_agents=200, half_width=2.0, step_cap=200)
    state, summary = run_realization(cfg, 3)
    assert not summary.frozen
    assert summary.steps == 200
    assert state.step_count == 200


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


def test_ensemble_deterministic():
    cfg = EnsembleConfig(
        n_agents=40, half_width=1.5, realizations=12, step_cap=10**5, master_seed=4
    )
    r1 = run_ensemble(cfg)
    r2 = run_ensemble(cfg)
    assert np.array_equal(r1.bin_masses, r2.bin_masses)
    assert len(r1.summaries) == len(r2.summaries) == 12
    for a, b in zip(r1.summaries, r2.summaries):
        assert np.array_equal(a.positions, b.positions)
        assert a.frozen == b.frozen and a.steps == b.steps


def test_ensemble_workers_match_serial():
    cfg = EnsembleConfig(
        n_agents=30, half_width=1.0, realizations=8, step_cap=10**5, master_seed=8
    )
    serial = run_ensemble(cfg, workers=1)
    parallel = run_ensemble(cfg, workers=2)
    assert np.array_equal(serial.bin_masses, parallel.bin_masses)
    for a, b in zip(serial.summaries, parallel.summaries):
        assert np.array_equal(a.positions, b.positions) and a.seed == b.seed


def test_histogram_invariants():
    cfg = EnsembleConfig(
        n_agents=25, half_width=1.0, realizations=10, step_cap=10**5, master_seed=2
    )
    result = run_ensemble(cfg)
    assert result.bin_edges.size == cfg.bins + 1
    assert result.bin_edges[0] == -1.0 and result.bin_edges[-1] == 1.0
    assert result.bin_masses.sum() == pytest.approx(1.0, abs=1e-12)
    assert result.frozen_count + result.capped_count == 10
    result.validate()
    bad = HistogramResult(result.bin_edges, result.bin_masses * 0.5, [], 0)
    with pytest.raises(ValueError):
        bad.validate()


def test_ensemble_normal_init():
    cfg = EnsembleConfig(
        n_agents=30, init="normal", sigma=0.5, realizations=6,
        step_cap=10**5, master_seed=6,
    )
    result = run_ensemble(cfg)
    assert result.bin_edges[-1] == pytest.approx(2.0)  # 4 sigma
    assert result.bin_masses.sum() == pytest.approx(1.0, abs=1e-12)


def test_ensemble_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig(n_agents=2)
    with pytest.raises(ValueError):
        EnsembleConfig(n_agents=10, spec=DiscordanceSpec(m=2))
    with pytest.raises(ValueError):
        EnsembleConfig(n_agents=10, init="cauchy")
    with pytest.raises(ValueError):
        EnsembleConfig(n_agents=10, realizations=0)
    with pytest.raises(ValueError):
        EnsembleConfig(n_agents=10, freeze_tolerance=0.0)
    with pytest.raises(ValueError):
        EnsembleConfig(n_agents=10, step_cap=0)
    with pytest.raises(ValueError):
        EnsembleConfig(n_agents=10, bins=0)
    with pytest.raises(ValueError):
        EnsembleConfig(n_agents=10, half_width=-1.0)
    with pytest.raises(ValueError):
        EnsembleConfig(n_agents=10, sigma=0.0)
