"""Agent engine: group opinion dynamics by uniform random triple activation.

Each step draws one unordered triple of distinct agents uniformly at random
(by rejection) and applies the group update: all three move to their mean iff
the group discordance is below the confidence bound.  A realization runs
until the opinion profile freezes or a hard step cap is reached; an ensemble
aggregates many independent realizations into a normalized steady-state
histogram.

Freeze detection never scans triples.  The sorted opinions are grouped into
blocks of internal diameter at most the freeze tolerance; the profile is
frozen when consecutive blocks are separated by at least the minimum
isolation distance, since the smallest discordance over tuples drawn from a
value set is attained on a two-value pattern at the smallest gap.

An applied update writes the hull-clamped float mean back into the triple,
so the profile mean is conserved up to rounding: for order-one opinions the
accumulated |mean - initial mean| stays below 1e-12 per 10^6 steps, and the
energy sum((x_i - mean)^2) never increases.

The stepping loop is compiled (numba) and consumes the same NumPy Generator
stream as the pure-Python `abm_step`, so short compiled runs are bit-identical
to the reference path and ensembles are reproducible from one master seed.
"""

from __future__ import annotations

import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .model import DiscordanceSpec, dw_group_update, min_isolation_distance

__all__ = [
    "OpinionState",
    "EnsembleConfig",
    "RealizationSummary",
    "HistogramResult",
    "sample_hyperedge",
    "abm_step",
    "is_frozen",
    "opinion_blocks",
    "run_realization",
    "run_ensemble",
]


# ======================================================================
# state and configuration
# ======================================================================


@dataclass
class OpinionState:
    """Opinion profile of one realization.

    Opinions stay inside the convex hull of the initial profile: the group
    update writes the (hull-clamped) mean of three current values, so the
    running min is nondecreasing and the running max is nonincreasing.
    """

    opinions: np.ndarray
    step_count: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        self.opinions = np.ascontiguousarray(self.opinions, dtype=float)
        if self.opinions.ndim != 1:
            raise ValueError("opinions must be a 1-D array")

    @property
    def n_agents(self) -> int:
        return self.opinions.size


@dataclass(frozen=True)
class EnsembleConfig:
    """Monte Carlo ensemble controls.

    init is "uniform" on (-half_width, half_width) or "normal" with mean 0
    and standard deviation sigma.  A realization stops at the first freeze
    check that passes (every n_agents steps) or at step_cap, whichever comes
    first.  bins is the histogram resolution over the init support: for the
    uniform init the default keeps the bin width at 2*half_width/100.
    """

    n_agents: int
    spec: DiscordanceSpec = field(default_factory=DiscordanceSpec)
    init: str = "uniform"
    half_width: float = 1.0
    sigma: float = 1.0
    realizations: int = 10000
    freeze_tolerance: float = 1e-9
    step_cap: int = 100_000_000
    master_seed: int = 0
    bins: int = 100

    def __post_init__(self):
        if self.n_agents < 3:
            raise ValueError("need at least 3 agents to form a triple")
        if self.spec.m != 3:
            raise ValueError("the agent engine draws triples; spec.m must be 3")
        if self.init not in ("uniform", "normal"):
            raise ValueError("init must be 'uniform' or 'normal'")
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if self.freeze_tolerance <= 0:
            raise ValueError("freeze_tolerance must be positive")
        if self.step_cap < 1:
            raise ValueError("step_cap must be >= 1")
        if self.bins < 1:
            raise ValueError("bins must be >= 1")

    def histogram_edges(self) -> np.ndarray:
        half = self.half_width if self.init == "uniform" else 4.0 * self.sigma
        return np.linspace(-half, half, self.bins + 1)


@dataclass(frozen=True)
class RealizationSummary:
    """Final opinion blocks of one realization: positions are block means
    (ascending), masses are block populations divided by n_agents."""

    positions: np.ndarray
    masses: np.ndarray
    frozen: bool
    steps: int
    seed: int


@dataclass
class HistogramResult:
    bin_edges: np.ndarray
    bin_masses: np.ndarray
    summaries: list[RealizationSummary]
    master_seed: int

    @property
    def frozen_count(self) -> int:
        return sum(1 for s in self.summaries if s.frozen)

    @property
    def capped_count(self) -> int:
        return sum(1 for s in self.summaries if not s.frozen)

    def validate(self):
        if self.bin_edges.size != self.bin_masses.size + 1:
            raise ValueError("bin_edges must have one more entry than bin_masses")
        if abs(float(self.bin_masses.sum()) - 1.0) > 1e-12:
            raise ValueError("bin masses must sum to 1")
        if np.any(self.bin_masses < 0):
            raise ValueError("bin masses must be nonnegative")


# ======================================================================
# elementary operations
# ======================================================================


def sample_hyperedge(n_agents: int, rng: np.random.Generator) -> tuple[int, int, int]:
    """One unordered triple of distinct agent indices, uniform by rejection."""
    if n_agents < 3:
        raise ValueError("need at least 3 agents to form a triple")
    while True:
        i = int(rng.random() * n_agents)
        j = int(rng.random() * n_agents)
        k = int(rng.random() * n_agents)
        if i != j and i != k and j != k:
            return i, j, k


def abm_step(state: OpinionState, spec: DiscordanceSpec, rng: np.random.Generator) -> OpinionState:
    """Activate one random triple and apply the group update in place."""
    i, j, k = sample_hyperedge(state.opinions.size, rng)
    out, changed = dw_group_update(state.opinions[[i, j, k]], spec)
    if changed:
        state.opinions[[i, j, k]] = out
    state.step_count += 1
    return state


def _sorted_blocks(ordered: np.ndarray, tol: float) -> list[tuple[int, int]]:
    """Half-open index runs of sorted values with internal diameter <= tol."""
    blocks = []
    start = 0
    for i in range(1, ordered.size):
        if ordered[i] - ordered[start] > tol:
            blocks.append((start, i))
            start = i
    blocks.append((start, ordered.size))
    return blocks


def opinion_blocks(opinions: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """(block means, block masses) of an opinion profile, ascending.

    Blocks are maximal groups of sorted opinions spanning at most tol; masses
    are block populations as fractions of the agent count.
    """
    ordered = np.sort(np.asarray(opinions, dtype=float))
    blocks = _sorted_blocks(ordered, tol)
    positions = np.array([ordered[a:b].mean() for a, b in blocks])
    masses = np.array([(b - a) / ordered.size for a, b in blocks])
    return positions, masses


def is_frozen(state: OpinionState, spec: DiscordanceSpec, freeze_tolerance: float = 1e-9) -> bool:
    """True when no future triple can move any opinion by more than the
    freeze tolerance.

    Opinions are grouped into blocks of diameter <= freeze_tolerance; the
    profile is frozen when every neighboring block pair is separated by at
    least the minimum isolation distance edge to edge, so any triple spanning
    two blocks holds a pair at that distance and cannot interact.
    """
    ordered = np.sort(state.opinions)
    return bool(
        _frozen_kernel(ordered, min_isolation_distance(spec), freeze_tolerance)
    )


# ======================================================================
# compiled stepping loop
# ======================================================================


@njit(cache=True)
def _frozen_kernel(ordered, delta_star, tol):
    # greedy blocks over sorted values; frozen iff every cross-block gap
    # (next block's min minus this block's max) reaches delta_star
    n = ordered.size
    start = ordered[0]
    prev_max = ordered[0]
    for i in range(1, n):
        v = ordered[i]
        if v - start <= tol:
            prev_max = v
            continue
        if v - prev_max < delta_star:
            return False
        start = v
        prev_max = v
    return True


@njit(cache=True)
def _advance_kernel(x, p, alpha, c, delta_star, tol, check_every, step_cap, gen):
    """Run group updates until frozen or step_cap; returns (steps, frozen).

    Matches abm_step draw for draw: three floor(random()*n) index draws with
    rejection of duplicates, group mean clamped to the triple's hull.  The
    freeze test runs every check_every accepted steps and costs one sort.
    """
    n = x.size
    steps = np.int64(0)
    frozen = False
    while steps < step_cap:
        todo = check_every
        if step_cap - steps < todo:
            todo = step_cap - steps
        for _ in range(todo):
            i = int(gen.random() * n)
            j = int(gen.random() * n)
            k = int(gen.random() * n)
            while i == j or i == k or j == k:
                i = int(gen.random() * n)
                j = int(gen.random() * n)
                k = int(gen.random() * n)
            a = x[i]
            b = x[j]
            d3 = x[k]
            mu = (a + b + d3) / 3.0
            da = abs(a - mu)
            db = abs(b - mu)
            dc = abs(d3 - mu)
            if p == 1.0:
                disc = alpha * ((da + db + dc) / 3.0)
            elif p == 2.0:
                disc = alpha * math.sqrt((da * da + db * db + dc * dc) / 3.0)
            else:
                disc = alpha * ((da**p + db**p + dc**p) / 3.0) ** (1.0 / p)
            if disc < c:
                lo = min(a, min(b, d3))
                hi = max(a, max(b, d3))
                if mu < lo:
                    mu = lo
                elif mu > hi:
                    mu = hi
                x[i] = mu
                x[j] = mu
                x[k] = mu
        steps += todo
        if _frozen_kernel(np.sort(x), delta_star, tol):
            frozen = True
            break
    return steps, frozen


# ======================================================================
# realizations and ensembles
# ======================================================================


def _draw_init(config: EnsembleConfig, rng: np.random.Generator) -> np.ndarray:
    if config.init == "uniform":
        return rng.uniform(-config.half_width, config.half_width, config.n_agents)
    return rng.normal(0.0, config.sigma, config.n_agents)


def _summarize(state: OpinionState, config: EnsembleConfig, frozen: bool) -> RealizationSummary:
    positions, masses = opinion_blocks(state.opinions, config.freeze_tolerance)
    return RealizationSummary(
        positions=positions,
        masses=masses,
        frozen=frozen,
        steps=state.step_count,
        seed=state.rng_seed,
    )


def run_realization(config: EnsembleConfig, seed: int) -> tuple[OpinionState, RealizationSummary]:
    """One realization: draw the initial profile, step until frozen or capped.

    The block test is sufficient but not necessary for the dynamics to be
    stuck: two lone agents closer than the isolation distance but far from
    everyone else admit no triple at all (every triple through them contains
    a third agent at discordance-killing range), yet their gap keeps the
    block test false.  Such runs consume the step cap without any opinion
    changing and come back flagged frozen=False; their final profile is a
    steady state all the same.
    """
    rng = np.random.default_rng(seed)
    x = _draw_init(config, rng)
    state = OpinionState(x, 0, int(seed))
    spec = config.spec
    delta_star = min_isolation_distance(spec)
    if is_frozen(state, spec, config.freeze_tolerance):
        return state, _summarize(state, config, True)
    steps, frozen = _advance_kernel(
        state.opinions,
        spec.p,
        spec.alpha,
        spec.c,
        delta_star,
        config.freeze_tolerance,
        np.int64(config.n_agents),
        np.int64(config.step_cap),
        rng,
    )
    state.step_count = int(steps)
    return state, _summarize(state, config, bool(frozen))


def _realization_seeds(config: EnsembleConfig) -> np.ndarray:
    # one derived 64-bit seed per realization index, reproducible from the
    # master seed alone and independent of worker layout
    return np.random.SeedSequence(config.master_seed).generate_state(
        config.realizations, dtype=np.uint64
    )


def _ensemble_chunk(config: EnsembleConfig, seeds: np.ndarray):
    edges = config.histogram_edges()
    counts = np.zeros(config.bins, dtype=np.int64)
    summaries = []
    for seed in seeds:
        state, summary = run_realization(config, int(seed))
        final = np.clip(state.opinions, edges[0], edges[-1])
        counts += np.histogram(final, bins=edges)[0]
        summaries.append(summary)
    return counts, summaries


def run_ensemble(config: EnsembleConfig, workers: int = 1) -> HistogramResult:
    """Aggregate `config.realizations` independent realizations.

    Realization k uses a seed derived from (master_seed, k), so the result is
    bit-identical for a fixed master seed regardless of worker count; with
    workers > 1 the realizations are spread over processes and merged in
    index order.  Opinions are histogrammed over the init support (clipped at
    the edges, which only matters for normal-init tail samples).
    """
    seeds = _realization_seeds(config)
    if workers <= 1:
        counts, summaries = _ensemble_chunk(config, seeds)
    else:
        chunks = np.array_split(seeds, min(workers * 4, seeds.size))
        counts = np.zeros(config.bins, dtype=np.int64)
        summaries = []
        # spawn, not fork: the parent may already run an OpenMP thread pool
        # (the density engine's compiled kernels), and forking one is unsafe
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            for part_counts, part_summaries in pool.map(
                _ensemble_chunk, [config] * len(chunks), chunks
            ):
                counts += part_counts
                summaries.extend(part_summaries)
    total = int(counts.sum())
    masses = counts / total if total else counts.astype(float)
    result = HistogramResult(
        bin_edges=config.histogram_edges(),
        bin_masses=masses,
        summaries=summaries,
        master_seed=config.master_seed,
    )
    result.validate()
    return result
