"""Parameter sweeps and ensemble studies.

Bifurcation data over the initial half-width and over the spread of a
normal initial profile, branch tracking with straight-line fits, location
of the parameter intervals where the major-cluster pattern reorganizes,
and finite-population Monte Carlo histograms on a (half-width, N) grid.

Sweep rows are independent solves from fresh initial data: no warm starts,
so hysteresis cannot leak between rows.  Rows and Monte Carlo cells are
embarrassingly parallel; results are merged in parameter order either way,
so the worker count never changes the output.
"""

from __future__ import annotations

import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .abm import EnsembleConfig, HistogramResult, run_ensemble
from .meanfield import (
    ClusterSet,
    SolveResult,
    SolverConfig,
    gaussian_density,
    solve_steady,
    uniform_density,
)
from .model import DiscordanceSpec, min_isolation_distance


# ======================================================================
# sweep containers
# ======================================================================


@dataclass(frozen=True)
class RowDiagnostics:
    """Compact per-row solve summary kept alongside the clusters."""

    steps: int
    wall_time: float
    mass_error: float  # max |mass - 1| over accepted steps
    mean_drift: float  # max |mean - mean_0| over accepted steps


@dataclass(frozen=True)
class SweepRow:
    param: float
    clusters: ClusterSet
    converged: bool
    diagnostics: RowDiagnostics


@dataclass
class SweepResult:
    """Rows of (parameter, clusters) in strictly ascending parameter order."""

    parameter: str  # name of the swept quantity, "D" or "sigma"
    spec: DiscordanceSpec
    n: int
    rows: list[SweepRow]

    def params(self) -> np.ndarray:
        return np.array([row.param for row in self.rows])

    def row_for(self, value: float, tol: float = 1e-9) -> SweepRow:
        for row in self.rows:
            if abs(row.param - value) <= tol:
                return row
        raise KeyError(f"no sweep row at {self.parameter}={value}")

    def validate(self) -> None:
        """Ascending rows, per-row cluster invariants, reflection symmetry."""
        params = self.params()
        if params.size >= 2 and np.any(np.diff(params) <= 0):
            raise ValueError("sweep rows must be strictly ascending")
        for row in self.rows:
            row.clusters.validate()
            pos = row.clusters.positions
            if pos.size and float(np.abs(pos + pos[::-1]).max()) > 1e-6:
                raise ValueError(
                    f"cluster positions asymmetric at {self.parameter}={row.param}"
                )


def _summarize(result: SolveResult) -> RowDiagnostics:
    d = result.diagnostics
    if d.mass.size:
        mass_error = float(np.abs(d.mass - 1.0).max())
        mean_drift = float(np.abs(d.mean - d.mean[0]).max())
    else:
        mass_error = 0.0
        mean_drift = 0.0
    return RowDiagnostics(result.steps, result.wall_time, mass_error, mean_drift)


# ======================================================================
# density-engine sweeps
# ======================================================================


def default_sweep_config() -> SolverConfig:
    """Step policy for sweep rows.

    An isolated cluster of mass m contracts at a rate proportional to m^2,
    so the smallest minors need a far longer horizon and step ceiling than
    the solver defaults to finish collapsing; with these settings every row
    of the standard sweeps converges instead of timing out on a minor.
    """
    return SolverConfig(dt_cap=2e4, max_time=2e7)


def _uniform_row(args) -> SweepRow:
    d, p, c, n, config = args
    spec = DiscordanceSpec(p=p, c=c)
    result = solve_steady(uniform_density(d, n=n), spec, config)
    return SweepRow(d, result.clusters, result.converged, _summarize(result))


def _gaussian_row(args) -> SweepRow:
    sigma, p, c, n, config = args
    spec = DiscordanceSpec(p=p, c=c)
    result = solve_steady(gaussian_density(sigma, n=n), spec, config)
    return SweepRow(sigma, result.clusters, result.converged, _summarize(result))


def _run_rows(fn, jobs, workers: int) -> list[SweepRow]:
    if workers <= 1:
        return [fn(job) for job in jobs]
    # spawn, not fork: the solver kernels hold an OpenMP thread pool once
    # warmed up, and forking a process that owns one is unsafe
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(fn, jobs))


def _checked_values(values, default_lo, default_hi, step, name):
    if values is None:
        values = np.arange(default_lo, default_hi + step / 2, step)
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ValueError(f"{name} values must be a nonempty 1-D sequence")
    if np.any(values <= 0):
        raise ValueError(f"{name} values must be positive")
    if values.size >= 2 and np.any(np.diff(values) <= 0):
        raise ValueError(f"{name} values must be strictly ascending")
    return values


def sweep_uniform_D(
    p: float = 1.0,
    c: float = 1.0,
    d_values=None,
    n: int = 500,
    config: SolverConfig | None = None,
    workers: int = 1,
) -> SweepResult:
    """Steady states from uniform initial data on [-D, D], one row per D.

    Defaults scan D from 0.5 to 6 in steps of 0.1.  A row that fails to
    converge is flagged on its SweepRow and the sweep continues.
    """
    d_values = _checked_values(d_values, 0.5, 6.0, 0.1, "D")
    config = config if config is not None else default_sweep_config()
    jobs = [(float(d), p, c, n, config) for d in d_values]
    rows = _run_rows(_uniform_row, jobs, workers)
    return SweepResult("D", DiscordanceSpec(p=p, c=c), n, rows)


def sweep_gaussian_sigma(
    sigma_values=None,
    p: float = 2.0,
    c: float = 1.0,
    n: int = 500,
    config: SolverConfig | None = None,
    workers: int = 1,
) -> SweepResult:
    """Steady states from centered normal initial data, one row per sigma.

    Defaults scan sigma from 0.3 to 3.5 in steps of 0.05; the domain of each
    row is sized by gaussian_density so the truncated tail is below 1e-9.
    """
    sigma_values = _checked_values(sigma_values, 0.3, 3.5, 0.05, "sigma")
    config = config if config is not None else default_sweep_config()
    jobs = [(float(s), p, c, n, config) for s in sigma_values]
    rows = _run_rows(_gaussian_row, jobs, workers)
    return SweepResult("sigma", DiscordanceSpec(p=p, c=c), n, rows)


# ======================================================================
# branch tracking and linearity
# ======================================================================


@dataclass
class Branch:
    """One cluster followed across consecutive sweep rows."""

    params: list[float]
    positions: list[float]
    masses: list[float]

    def __len__(self) -> int:
        return len(self.params)


def track_branches(sweep: SweepResult) -> list[Branch]:
    """Link clusters across adjacent rows by nearest position.

    A cluster continues a branch when it is the mutually nearest match
    within half the isolation distance; rows are 0.1 (or 0.05) apart in the
    parameter while distinct clusters stay a full isolation distance apart,
    so the gate is unambiguous.  Unmatched clusters open new branches,
    unmatched branches close.  Branches come back ordered by nucleation
    parameter, then position.
    """
    gate = min_isolation_distance(sweep.spec) / 2.0
    active: list[Branch] = []
    done: list[Branch] = []
    for row in sweep.rows:
        pos = row.clusters.positions
        mass = row.clusters.masses
        candidates = []
        for bi, branch in enumerate(active):
            last = branch.positions[-1]
            for ci in range(pos.size):
                dist = abs(float(pos[ci]) - last)
                if dist <= gate:
                    candidates.append((dist, bi, ci))
        candidates.sort()
        used_b: set[int] = set()
        used_c: set[int] = set()
        for dist, bi, ci in candidates:
            if bi in used_b or ci in used_c:
                continue
            used_b.add(bi)
            used_c.add(ci)
            active[bi].params.append(row.param)
            active[bi].positions.append(float(pos[ci]))
            active[bi].masses.append(float(mass[ci]))
        survivors = []
        for bi, branch in enumerate(active):
            (survivors if bi in used_b else done).append(branch)
        for ci in range(pos.size):
            if ci not in used_c:
                survivors.append(
                    Branch([row.param], [float(pos[ci])], [float(mass[ci])])
                )
        active = survivors
    done.extend(active)
    done.sort(key=lambda b: (b.params[0], b.positions[0]))
    return done


@dataclass(frozen=True)
class BranchFit:
    branch: Branch
    slope: float
    intercept: float
    rms_residual: float


def branch_linearity(
    sweep: SweepResult, trim: int = 3, min_points: int = 4
) -> list[BranchFit]:
    """Least-squares line per branch, away from nucleation/disappearance.

    The first and last `trim` rows of each branch are excluded; a branch
    with fewer than `min_points` interior rows is skipped.
    """
    if len(sweep.rows) < 4:
        raise ValueError("sweep too short for branch fits")
    fits = []
    for branch in track_branches(sweep):
        x = np.asarray(branch.params)[trim : len(branch) - trim]
        y = np.asarray(branch.positions)[trim : len(branch) - trim]
        if x.size < min_points:
            continue
        slope, intercept = np.polyfit(x, y, 1)
        resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
        fits.append(BranchFit(branch, float(slope), float(intercept), resid))
    return fits


# ======================================================================
# pattern-change location
# ======================================================================


@dataclass(frozen=True)
class SplitEvent:
    """Bracketing parameter interval across which the cluster pattern
    changed, with the (major count, central cluster present) signature on
    each side."""

    lo: float
    hi: float
    before: tuple[int, bool]
    after: tuple[int, bool]


def _signature(row: SweepRow) -> tuple[int, bool]:
    return (row.clusters.n_major, row.clusters.central() is not None)


def split_locator(sweep: SweepResult) -> list[SplitEvent]:
    """Scan consecutive rows for changes in the cluster-pattern signature.

    Each change is reported as a bracketing interval at the sweep's own
    resolution; refine_event re-scans an interval at a finer step.
    """
    events = []
    for prev, cur in zip(sweep.rows, sweep.rows[1:]):
        sig_prev, sig_cur = _signature(prev), _signature(cur)
        if sig_prev != sig_cur:
            events.append(SplitEvent(prev.param, cur.param, sig_prev, sig_cur))
    return events


def refine_event(event: SplitEvent, sweep_fn, step: float) -> list[SplitEvent]:
    """Re-scan [event.lo, event.hi] at a finer step.

    sweep_fn maps an ascending array of parameter values to a SweepResult
    computed with the same model and solver settings as the original sweep.
    Returns the events found at the finer resolution (several, if distinct
    changes were merged inside the coarse bracket).
    """
    values = np.arange(event.lo, event.hi + step / 2, step)
    if values[-1] < event.hi - 1e-12:
        values = np.append(values, event.hi)
    return split_locator(sweep_fn(values))


def mass_interlacing_ok(sweep: SweepResult, slack: float = 1e-6) -> bool:
    """Check that nucleating branches gain mass until the next pattern event.

    A cluster born mid-sweep starts as a small minor and grows monotonically
    until the first signature change at or past its nucleation row; after
    that the pattern has reorganized and its mass may do anything.  Branches
    already present at the first row are exempt: a standing major sheds mass
    to nucleating minors without any signature change.
    """
    if not sweep.rows:
        return True
    first_param = sweep.rows[0].param
    starts = sorted(ev.lo for ev in split_locator(sweep))
    for branch in track_branches(sweep):
        born = branch.params[0]
        if born <= first_param + 1e-12:
            continue
        window_end = next((s for s in starts if s >= born - 1e-12), np.inf)
        for i in range(len(branch) - 1):
            if branch.params[i + 1] > window_end + 1e-12:
                break
            if branch.masses[i + 1] < branch.masses[i] - slack:
                return False
    return True


# ======================================================================
# finite-population Monte Carlo
# ======================================================================


def mc_finite_size(
    d_values=(1.7, 1.8, 1.9, 2.0, 2.1, 2.2),
    agent_counts=(500, 1000, 1500),
    realizations: int = 10000,
    p: float = 1.0,
    c: float = 1.0,
    master_seed: int = 0,
    step_cap: int = 10**8,
    bins: int = 100,
    freeze_tolerance: float = 1e-9,
    workers: int = 1,
) -> dict[tuple[float, int], HistogramResult]:
    """Ensemble histograms on the (half-width, agent count) grid.

    Cells run in ascending (D, N) order with per-cell seeds spawned from
    master_seed, so the full table is reproducible from a single integer
    and any one cell can be recomputed in isolation.
    """
    spec = DiscordanceSpec(p=p, c=c)
    cells = [(float(d), int(m)) for d in sorted(d_values) for m in sorted(agent_counts)]
    if len(set(cells)) != len(cells):
        raise ValueError("duplicate (D, N) cell")
    seeds = np.random.SeedSequence(master_seed).generate_state(
        len(cells), dtype=np.uint64
    )
    table: dict[tuple[float, int], HistogramResult] = {}
    for (d, n_agents), seed in zip(cells, seeds):
        cfg = EnsembleConfig(
            n_agents=n_agents,
            spec=spec,
            init="uniform",
            half_width=d,
            realizations=realizations,
            freeze_tolerance=freeze_tolerance,
            step_cap=step_cap,
            master_seed=int(seed),
            bins=bins,
        )
        table[(d, n_agents)] = run_ensemble(cfg, workers=workers)
    return table


def histogram_peaks(hist: HistogramResult, floor: float = 0.01):
    """Contiguous bin runs holding more than `floor` mass each, reduced to
    (mass centroid, total mass) pairs in ascending position order."""
    centers = 0.5 * (hist.bin_edges[:-1] + hist.bin_edges[1:])
    hot = hist.bin_masses > floor
    peaks = []
    i = 0
    while i < hot.size:
        if not hot[i]:
            i += 1
            continue
        j = i
        while j + 1 < hot.size and hot[j + 1]:
            j += 1
        w = hist.bin_masses[i : j + 1]
        pos = float(np.sum(centers[i : j + 1] * w) / np.sum(w))
        peaks.append((pos, float(np.sum(w))))
        i = j + 1
    return peaks


def central_peak_iqr(hist: HistogramResult, window: float = 0.5) -> float:
    """Interquartile width of the histogram mass restricted to |x| <= window.

    Sharper central peaks at larger populations show up as a shrinking
    width; raises when the window holds no mass.
    """
    centers = 0.5 * (hist.bin_edges[:-1] + hist.bin_edges[1:])
    sel = np.abs(centers) <= window
    w = hist.bin_masses[sel]
    x = centers[sel]
    total = float(w.sum())
    if total <= 0:
        raise ValueError("no mass in the central window")
    cdf = np.cumsum(w) / total
    q25 = x[min(int(np.searchsorted(cdf, 0.25)), x.size - 1)]
    q75 = x[min(int(np.searchsorted(cdf, 0.75)), x.size - 1)]
    return float(q75 - q25)
