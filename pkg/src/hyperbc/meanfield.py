"""Mean-field density solver for the group bounded-confidence model.

Evolves an opinion density g(a, t) on a uniform grid under the rate equation
for three-agent groups: every concordant triple (group discordance strictly
between 0 and c) moves its members' density to the triple mean,

    dg/dt(a) = II_{0 < d < c} g(x1) g(x2) g(x3)
               * [3 delta(a - xbar) - sum_i delta(a - x_i)] dx1 dx2 dx3,

with xbar the triple mean.  Quadrature is the product trapezoid rule over
on-grid triples.  A node triple has its mean at a multiple of h/3, so each
gain deposit either lands on a node or is split onto the bracketing node
pair with weights 2/3 and 1/3.  This deposit form conserves discrete mass
and first moment to rounding error, makes the second moment nonincreasing
triple by triple, and leaves adjacent-node pairs exactly inert, so a
converged two-node cluster does not creep.  The dyadic (pairwise) kernel
uses the same construction with midpoint deposits.

Integration is fourth-order Adams-Bashforth with an RK4 bootstrap, per-step
mass renormalization, and a clamp policy for rounding-level negative values.
Once the density separates into patches that are farther apart than the
minimum isolation distance, each patch is integrated independently with its
own (larger) step.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .model import DiscordanceSpec, min_isolation_distance

__all__ = [
    "DensityGrid",
    "SolverConfig",
    "PatchInterval",
    "Cluster",
    "ClusterSet",
    "InteractionMasks",
    "SolveDiagnostics",
    "SolveResult",
    "StepSizeError",
    "uniform_density",
    "gaussian_density",
    "grid_from_values",
    "trapezoid_weights",
    "moment_k",
    "renormalize_mass",
    "precompute_interaction_masks",
    "rhs_triadic",
    "rhs_dyadic",
    "rk4_bootstrap",
    "ab4_step",
    "detect_patches",
    "check_converged",
    "extract_clusters",
    "variance_dissipation_rate",
    "solve_steady",
]

MAJOR_MASS = 0.1  # clusters above this mass fraction count as major


# ======================================================================
# grid and solver configuration types
# ======================================================================


def trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = 0.5
    w[-1] = 0.5
    return w


@dataclass
class DensityGrid:
    """Density values on a uniform grid over [lo, hi] with n nodes."""

    lo: float
    hi: float
    n: int
    values: np.ndarray

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("grid needs at least 3 nodes")
        if self.hi <= self.lo:
            raise ValueError("hi must exceed lo")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.n,):
            raise ValueError(f"values must have shape ({self.n},)")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def positions(self) -> np.ndarray:
        x = self.lo + self.h * np.arange(self.n)
        if self.lo == -self.hi:
            # fold to make a symmetric domain exactly antisymmetric node-wise,
            # so reflection symmetry of the scheme is not broken by rounding
            x = 0.5 * (x - x[::-1])
        return x

    @property
    def mass(self) -> float:
        return float(self.h * np.dot(trapezoid_weights(self.n), self.values))

    def copy(self) -> "DensityGrid":
        return DensityGrid(self.lo, self.hi, self.n, self.values.copy())


def uniform_density(half_width: float, n: int = 500) -> DensityGrid:
    """Uniform density on [-half_width, half_width], trapezoid mass exactly 1."""
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    g = DensityGrid(-half_width, half_width, n, np.full(n, 1.0 / (2 * half_width)))
    g.values /= g.mass
    return g


def gaussian_density(
    sigma: float, n: int = 500, tail_density: float = 1e-9, pad_unit: float = 0.1
) -> DensityGrid:
    """Centered normal density with standard deviation sigma.

    The domain half-width is where the density falls to tail_density, rounded
    up to the next multiple of pad_unit; values are renormalized so the
    trapezoid mass is 1 on the truncated domain.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    peak = 1.0 / (sigma * math.sqrt(2 * math.pi))
    if tail_density >= peak:
        raise ValueError("tail_density must be below the peak density")
    d_raw = sigma * math.sqrt(2 * math.log(peak / tail_density))
    half = math.ceil(d_raw / pad_unit - 1e-12) * pad_unit
    grid = DensityGrid(-half, half, n, np.zeros(n))
    x = grid.positions
    grid.values = peak * np.exp(-(x * x) / (2 * sigma * sigma))
    grid.values /= grid.mass
    return grid


def grid_from_values(lo: float, hi: float, values) -> DensityGrid:
    values = np.asarray(values, dtype=float)
    return DensityGrid(lo, hi, values.size, values)


@dataclass(frozen=True)
class SolverConfig:
    """Integration controls.

    dt defaults to 0.01 * c when not given.  adaptive_factor scales a patch's
    step after it splits off, and again at re-scan checkpoints while the
    patch evolves slowly (always capped at dt_cap); patch_interval is the
    number of accepted steps between those checkpoints.
    """

    dt: float | None = None
    max_time: float = 3000.0
    separation_accuracy: float = 1e-7
    density_accuracy: float = 1e-6
    negativity_tolerance: float = 1e-12
    adaptive_factor: float = 2.0
    dt_cap: float = 0.2
    patch_interval: int = 50

    def __post_init__(self):
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.max_time <= 0:
            raise ValueError("max_time must be positive")
        for name in ("separation_accuracy", "density_accuracy", "negativity_tolerance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.adaptive_factor < 1:
            raise ValueError("adaptive_factor must be >= 1")
        if self.patch_interval < 1:
            raise ValueError("patch_interval must be >= 1")

    def resolve_dt(self, spec: DiscordanceSpec) -> float:
        return self.dt if self.dt is not None else 0.01 * spec.c


@dataclass(frozen=True)
class PatchInterval:
    """First and last occupied node index of one isolated patch (inclusive)."""

    start_index: int
    end_index: int

    def __len__(self):
        return self.end_index - self.start_index + 1

    @property
    def slice(self) -> slice:
        return slice(self.start_index, self.end_index + 1)


@dataclass(frozen=True)
class Cluster:
    position: float
    mass: float

    @property
    def major(self) -> bool:
        return self.mass > MAJOR_MASS


@dataclass
class ClusterSet:
    """Steady-state clusters: ascending positions, masses normalized to 1."""

    clusters: tuple[Cluster, ...]
    delta_star: float
    h: float

    @property
    def positions(self) -> np.ndarray:
        return np.array([c.position for c in self.clusters])

    @property
    def masses(self) -> np.ndarray:
        return np.array([c.mass for c in self.clusters])

    @property
    def majors(self) -> tuple[Cluster, ...]:
        return tuple(c for c in self.clusters if c.major)

    @property
    def n_major(self) -> int:
        return len(self.majors)

    def central(self) -> Cluster | None:
        """The cluster within delta_star/4 of zero, if any."""
        for c in self.clusters:
            if abs(c.position) < self.delta_star / 4:
                return c
        return None

    def validate(self):
        pos = self.positions
        if pos.size == 0:
            raise ValueError("empty cluster set")
        if np.any(np.diff(pos) <= 0):
            raise ValueError("cluster positions must be strictly increasing")
        if pos.size > 1 and np.min(np.diff(pos)) < self.delta_star - 2 * self.h:
            raise ValueError("cluster gap below isolation distance")
        if abs(self.masses.sum() - 1.0) > 1e-6:
            raise ValueError("cluster masses must sum to 1")


# ======================================================================
# interaction stencils / masks
# ======================================================================


def _csr_from_pairs(uu: np.ndarray, vv: np.ndarray) -> tuple[np.ndarray, ...]:
    """Fold (u, v) pairs to u <= v with multiplicity and pack CSR-by-u."""
    keep = uu <= vv
    u = uu[keep]
    v = vv[keep]
    mult = np.where(u < v, 2.0, 1.0)
    order = np.lexsort((v, u))
    u, v, mult = u[order], v[order], mult[order]
    u_vals, starts = np.unique(u, return_index=True)
    row_ptr = np.concatenate([starts, [u.size]]).astype(np.int64)
    return (
        u_vals.astype(np.int64),
        row_ptr,
        v.astype(np.int64),
        mult,
    )


def _t_row_intervals(loss_full: np.ndarray, reach: int) -> tuple[np.ndarray, ...]:
    """Regroup the loss indicator by t = u + v and take per-t u-intervals.

    t fixes the gain deposit target, so this is the layout the fast kernel
    iterates.  Returns (t_vals, umin, umax, contiguous); contiguous is False
    when some t-row is not a single run (happens for p < 1, where the
    discordance condition is not convex along the row), in which case the
    interval tables overcover and the CSR fallback must be used.
    """
    size = 2 * reach + 1
    tdense = np.zeros((2 * size - 1, size), dtype=bool)
    ui, vi = np.nonzero(loss_full)
    tdense[ui + vi, ui] = True
    rows = np.flatnonzero(tdense.any(axis=1))
    first = tdense[rows].argmax(axis=1)
    last = size - 1 - tdense[rows, ::-1].argmax(axis=1)
    counts = tdense[rows].sum(axis=1)
    contiguous = bool(np.all(counts == last - first + 1))
    return (
        (rows - 2 * reach).astype(np.int64),
        (first - reach).astype(np.int64),
        (last - reach).astype(np.int64),
        contiguous,
    )


@dataclass
class InteractionMasks:
    """Precomputed interaction indicator sets for one (grid spacing, spec) pair.

    Both indicators depend only on the index displacements (u, v) = (j-i, k-i):
    the loss triple (x_i, x_j, x_k) has deviations ((u+v), (2u-v), (2v-u))*h/3
    from its mean, and the gain set holds the preimage condition of the
    mean-centered form, where the triple (x_l, x_j, x_k), l = 3i-j-k, has
    deviations ((u+v), u, v)*h from x_i.  The zero-deviation pair (0, 0) is
    excluded from the CSR sets: a triple with zero discordance does not
    interact (a single atom must have exactly zero RHS).

    Two layouts are kept: folded CSR pair lists (used for the dense per-node
    views, the dissipation diagnostic, and as the RHS fallback) and per-t
    interval tables of the loss set regrouped by t = u + v, which is what the
    fast deposit kernel iterates (valid when rows_contiguous; these include
    (0, 0) to keep the t = 0 row a single run, and the kernel subtracts that
    one term exactly).
    """

    n: int
    h: float
    spec: DiscordanceSpec
    gain_u: np.ndarray
    gain_ptr: np.ndarray
    gain_v: np.ndarray
    gain_mult: np.ndarray
    loss_u: np.ndarray
    loss_ptr: np.ndarray
    loss_v: np.ndarray
    loss_mult: np.ndarray
    loss_t_vals: np.ndarray
    loss_t_umin: np.ndarray
    loss_t_umax: np.ndarray
    rows_contiguous: bool

    def _dense_from_stencil(self, i: int, kind: str) -> np.ndarray:
        uarr = getattr(self, f"{kind}_u")
        ptr = getattr(self, f"{kind}_ptr")
        varr = getattr(self, f"{kind}_v")
        out = np.zeros((self.n, self.n), dtype=bool)
        for a in range(uarr.size):
            j = i + uarr[a]
            if j < 0 or j >= self.n:
                continue
            ks = i + varr[ptr[a] : ptr[a + 1]]
            ks = ks[(ks >= 0) & (ks < self.n)]
            if kind == "gain":
                l = 3 * i - j - ks
                ks = ks[(l >= 0) & (l < self.n)]
            out[j, ks] = True
            out[ks, j] = True
        return out

    def loss_mask_for_node(self, i: int) -> np.ndarray:
        """Dense (j, k) view of the loss indicator at output node i."""
        return self._dense_from_stencil(i, "loss")

    def gain_mask_for_node(self, i: int) -> np.ndarray:
        """Dense (j, k) view of the gain indicator at output node i."""
        return self._dense_from_stencil(i, "gain")


_mask_cache: dict[tuple, InteractionMasks] = {}


def precompute_interaction_masks(
    grid: DensityGrid, spec: DiscordanceSpec, memory_cap_bytes: int = 1 << 29
) -> InteractionMasks:
    """Build (and cache) the displacement stencils for a grid/spec pair."""
    if spec.m != 3:
        raise ValueError("interaction masks are for the three-agent kernel (m=3)")
    key = (grid.n, grid.h, spec.p, spec.alpha, spec.c)
    hit = _mask_cache.get(key)
    if hit is not None:
        return hit

    h = grid.h
    p = spec.p
    scale = spec.c / (spec.alpha * h)
    # displacement reach: |u| <= 3^(1/p) * scale for the gain set and twice
    # that for the loss set (|3u| <= |2u-v| + |u+v|); pad and cap at n-1
    reach = int(math.ceil(2 * 3.0 ** (1.0 / p) * scale)) + 2
    reach = min(reach, grid.n - 1)
    # two int64 offset tables plus one float64 multiplicity per kept pair,
    # upper bound before the indicator prunes anything
    if (2 * reach + 1) ** 2 * 24 > memory_cap_bytes:
        raise MemoryError(
            f"interaction stencil would exceed {memory_cap_bytes} bytes; "
            "raise memory_cap_bytes or coarsen the grid"
        )
    off = np.arange(-reach, reach + 1, dtype=np.int64)
    u, v = np.meshgrid(off, off, indexing="ij")
    au, av, auv = np.abs(u), np.abs(v), np.abs(u + v)
    nontrivial = (au | av) != 0

    # the bounds are strict: a triple whose discordance lands exactly on c
    # (which happens on every grid where c/(alpha*h) is a simple rational,
    # e.g. half_width 1, c 1) must not interact.  Back the float comparison
    # off the boundary by a relative guard far above rounding error yet far
    # below the spacing of attainable discordance values, so the decision
    # does not depend on how the threshold happens to round
    guard = 1.0 - 1e-12

    d_gain = ((au**p + av**p + auv**p) / 3.0) ** (1.0 / p)
    gain_full = d_gain < scale * guard  # alpha*h*(...)^{1/p} < c
    gain_set = nontrivial & gain_full

    d_loss = (auv**p + np.abs(2 * u - v) ** p + np.abs(2 * v - u) ** p) / 3.0
    loss_full = d_loss ** (1.0 / p) < 3.0 * scale * guard
    loss_set = nontrivial & loss_full

    gu, gptr, gv, gmult = _csr_from_pairs(u[gain_set], v[gain_set])
    lu, lptr, lv, lmult = _csr_from_pairs(u[loss_set], v[loss_set])
    tvals, tumin, tumax, tcont = _t_row_intervals(loss_full, reach)
    masks = InteractionMasks(
        grid.n, h, spec,
        gu, gptr, gv, gmult, lu, lptr, lv, lmult,
        tvals, tumin, tumax, tcont,
    )
    if len(_mask_cache) > 8:
        _mask_cache.clear()
    _mask_cache[key] = masks
    return masks


# ======================================================================
# right-hand sides
# ======================================================================


def _triadic_rhs_values(values: np.ndarray, w: np.ndarray, h: float, masks: InteractionMasks) -> np.ndarray:
    gw = values * w
    if masks.rows_contiguous:
        doff, q = _kernels.diag_prefix_kernel(gw)
        return _kernels.triadic_deposit_interval_kernel(
            values,
            gw,
            w,
            doff,
            q,
            masks.loss_t_vals,
            masks.loss_t_umin,
            masks.loss_t_umax,
            3.0 * h * h,
        )
    return _kernels.triadic_deposit_csr_kernel(
        values,
        gw,
        w,
        masks.loss_u,
        masks.loss_ptr,
        masks.loss_v,
        masks.loss_mult,
        3.0 * h * h,
    )


def rhs_triadic(
    grid: DensityGrid, spec: DiscordanceSpec, masks: InteractionMasks | None = None
) -> np.ndarray:
    """Rate of change of the density under the three-agent kernel."""
    if masks is None:
        masks = precompute_interaction_masks(grid, spec)
    return _triadic_rhs_values(grid.values, trapezoid_weights(grid.n), grid.h, masks)


def _dyadic_rhs_values(
    values: np.ndarray, w: np.ndarray, h: float, spec: DiscordanceSpec
) -> np.ndarray:
    """Pairwise kernel: conservative midpoint deposit.

    Each interacting ordered pair (j, k) moves mass toward its midpoint at
    rate 2 g_j g_k (h w_j)(h w_k); for odd j+k the deposit is split equally
    between the two bracketing nodes.  Discrete mass is conserved exactly.
    """
    n = values.size
    gw = values * w
    # pair interacts iff 0 < alpha*|x_j - x_k|/2 < c, strictly: a pair at
    # exactly the confidence bound stays frozen, so nudge the cutoff below
    # the boundary before rounding (same guard as the triadic masks)
    r = int(math.ceil(2 * spec.c / (spec.alpha * h) * (1.0 - 1e-12))) - 1
    r = min(r, n - 1)
    gain = np.zeros(n)
    loss = np.zeros(n)
    for u in range(1, r + 1):
        prod = gw[: n - u] * gw[u:]  # index j runs over [0, n-u)
        # both orderings of the unordered pair: rate 4 h^2 gw_j gw_{j+u}
        if u % 2 == 0:
            gain[u // 2 : u // 2 + n - u] += 4.0 * h * prod
        else:
            gain[(u - 1) // 2 : (u - 1) // 2 + n - u] += 2.0 * h * prod
            gain[(u + 1) // 2 : (u + 1) // 2 + n - u] += 2.0 * h * prod
        loss[: n - u] += 2.0 * h * gw[u:]
        loss[u:] += 2.0 * h * gw[: n - u]
    return gain / w - values * loss


def rhs_dyadic(grid: DensityGrid, spec: DiscordanceSpec) -> np.ndarray:
    """Rate of change of the density under the pairwise kernel (m = 2)."""
    if spec.m != 2:
        raise ValueError("rhs_dyadic requires a spec with m=2")
    w = trapezoid_weights(grid.n)
    return _dyadic_rhs_values(grid.values, w, grid.h, spec)


# ======================================================================
# time stepping
# ======================================================================


class StepSizeError(RuntimeError):
    """A step drove some node below -negativity_tolerance; dt is too large."""


def _ab4_formula(values: np.ndarray, history: list[np.ndarray], dt: float) -> np.ndarray:
    """Raw fourth-order Adams-Bashforth update, history oldest first."""
    if len(history) != 4:
        raise ValueError("AB4 needs exactly 4 history entries")
    f0, f1, f2, f3 = history
    return values + (dt / 24.0) * (55.0 * f3 - 59.0 * f2 + 37.0 * f1 - 9.0 * f0)


def _clamp_and_rescale(
    values: np.ndarray, w: np.ndarray, h: float, target: float, tol: float
) -> float:
    """In place: fail on real negativity, zero the rounding-level dips,
    rescale to the target mass.  Returns the pre-rescale mass drift."""
    low = float(values.min())
    if low < -tol:
        raise StepSizeError(f"density reached {low:.3e}; reduce dt")
    if not np.all(np.isfinite(values)):
        raise StepSizeError("non-finite density values; reduce dt")
    np.clip(values, 0.0, None, out=values)
    drift = h * float(np.dot(w, values)) - target
    values *= target / (target + drift)
    return drift


def _rhs_for(spec: DiscordanceSpec):
    if spec.m == 3:
        def f(grid: DensityGrid) -> np.ndarray:
            return rhs_triadic(grid, spec)
    elif spec.m == 2:
        def f(grid: DensityGrid) -> np.ndarray:
            return rhs_dyadic(grid, spec)
    else:
        raise ValueError("density solver supports group sizes m=2 and m=3")
    return f


def ab4_step(
    grid: DensityGrid,
    history: list[np.ndarray],
    spec: DiscordanceSpec,
    config: SolverConfig | None = None,
) -> tuple[DensityGrid, list[np.ndarray]]:
    """Advance one dt: AB4 formula, clamp, renormalize, refresh history.

    history holds the last four RHS evaluations, oldest first; the returned
    list is ready for the next call.  Raises StepSizeError when a node drops
    below -negativity_tolerance.
    """
    if config is None:
        config = SolverConfig()
    dt = config.resolve_dt(spec)
    out = grid.copy()
    out.values = _ab4_formula(grid.values, history, dt)
    w = trapezoid_weights(grid.n)
    _clamp_and_rescale(out.values, w, grid.h, 1.0, config.negativity_tolerance)
    new_history = history[1:] + [_rhs_for(spec)(out)]
    return out, new_history


def _rk4_bootstrap_values(values: np.ndarray, rhs, dt: float, post):
    """Three classical RK4 steps to fill the multistep history.

    rhs maps a value array to its time derivative; post is applied to each
    completed step state (clamping/renormalization) and must return the
    adjusted array.  Returns (state, history) with history = the RHS at the
    four states the AB4 loop continues from, oldest first.
    """
    g = values.copy()
    history = []
    for _ in range(3):
        k1 = rhs(g)
        history.append(k1)
        k2 = rhs(g + 0.5 * dt * k1)
        k3 = rhs(g + 0.5 * dt * k2)
        k4 = rhs(g + dt * k3)
        g = g + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        g = post(g)
    history.append(rhs(g))
    return g, history


def rk4_bootstrap(
    grid: DensityGrid,
    spec: DiscordanceSpec,
    config: SolverConfig | None = None,
) -> tuple[DensityGrid, list[np.ndarray]]:
    """Start a fresh integration: returns the state after three single steps
    together with the four-entry RHS history AB4 continues from."""
    if config is None:
        config = SolverConfig()
    dt = config.resolve_dt(spec)
    rhs = _rhs_for(spec)
    w = trapezoid_weights(grid.n)
    out = grid.copy()

    def value_rhs(values: np.ndarray) -> np.ndarray:
        out.values = values
        return rhs(out)

    def post(values: np.ndarray) -> np.ndarray:
        _clamp_and_rescale(values, w, grid.h, 1.0, config.negativity_tolerance)
        return values

    final, history = _rk4_bootstrap_values(grid.values, value_rhs, dt, post)
    out.values = final
    return out, history


# ======================================================================
# patches, convergence, clusters, moments
# ======================================================================


def _occupied_runs(values: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Half-open index runs where values > threshold."""
    occ = values > threshold
    if not occ.any():
        return []
    idx = np.flatnonzero(occ)
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    stops = np.concatenate([idx[breaks] + 1, [idx[-1] + 1]])
    return list(zip(starts.tolist(), stops.tolist()))


def _patch_spans(
    values: np.ndarray,
    positions: np.ndarray,
    separation_accuracy: float,
    delta_star: float,
) -> list[tuple[int, int]]:
    runs = _occupied_runs(values, separation_accuracy)
    merged: list[list[int]] = []
    for start, stop in runs:
        # a gap only isolates when the nearest occupied nodes across it are at
        # least delta_star apart: any triple spanning it then contains two
        # values at that distance and its discordance is >= c
        if merged and positions[start] - positions[merged[-1][1] - 1] < delta_star:
            merged[-1][1] = stop
        else:
            merged.append([start, stop])
    return [(s, e) for s, e in merged]


def detect_patches(
    grid: DensityGrid, spec: DiscordanceSpec, config: SolverConfig
) -> list[PatchInterval]:
    """Maximal isolated support patches at the separation accuracy."""
    spans = _patch_spans(
        grid.values,
        grid.positions,
        config.separation_accuracy,
        min_isolation_distance(spec),
    )
    return [PatchInterval(s, e - 1) for s, e in spans]


def _is_converged_values(
    values: np.ndarray,
    positions: np.ndarray,
    density_accuracy: float,
    delta_star: float,
) -> bool:
    runs = _occupied_runs(values, density_accuracy)
    if not runs:
        return True
    for start, stop in runs:
        if stop - start > 2:
            return False
    for (s0, e0), (s1, e1) in zip(runs, runs[1:]):
        if positions[s1] - positions[e0 - 1] < delta_star:
            return False
    return True


def check_converged(
    grid: DensityGrid, spec: DiscordanceSpec, config: SolverConfig
) -> bool:
    """True when every occupied node pair is consecutive or isolated.

    Occupied means density above density_accuracy; isolated means separated
    by at least the minimum isolation distance.
    """
    return _is_converged_values(
        grid.values, grid.positions, config.density_accuracy, min_isolation_distance(spec)
    )


def _clusters_from_values(
    values: np.ndarray,
    positions: np.ndarray,
    h: float,
    density_accuracy: float,
    delta_star: float,
) -> ClusterSet:
    runs = _occupied_runs(values, density_accuracy)
    w = trapezoid_weights(values.size)
    clusters = []
    for start, stop in runs:
        chunk = h * w[start:stop] * values[start:stop]
        mass = float(chunk.sum())
        pos = float(np.dot(chunk, positions[start:stop]) / mass)
        clusters.append((pos, mass))
    total = sum(m for _, m in clusters)
    if total <= 0:
        return ClusterSet((), delta_star, h)
    return ClusterSet(
        tuple(Cluster(pos, m / total) for pos, m in clusters), delta_star, h
    )


def extract_clusters(
    grid: DensityGrid, spec: DiscordanceSpec, config: SolverConfig
) -> ClusterSet:
    """Cluster positions (mass centroids) and normalized masses at steady state."""
    if not check_converged(grid, spec, config):
        raise RuntimeError("extract_clusters called before convergence")
    cs = _clusters_from_values(
        grid.values,
        grid.positions,
        grid.h,
        config.density_accuracy,
        min_isolation_distance(spec),
    )
    cs.validate()
    return cs


def moment_k(grid: DensityGrid, k: int) -> float:
    """k-th raw moment by the trapezoid rule."""
    w = trapezoid_weights(grid.n)
    return float(grid.h * np.dot(w * grid.values, grid.positions**k))


def renormalize_mass(grid: DensityGrid, target: float = 1.0) -> DensityGrid:
    """Multiplicatively rescale so the trapezoid mass equals target."""
    mass = grid.mass
    if mass <= 0:
        raise ValueError("cannot renormalize nonpositive mass")
    out = grid.copy()
    out.values *= target / mass
    return out


def variance_dissipation_rate(
    grid: DensityGrid, spec: DiscordanceSpec, masks: InteractionMasks | None = None
) -> float:
    """Instantaneous d/dt of the density's variance implied by the kernel.

    Equals -(1/6) * triple integral over interacting triples of the product
    density times the ordered-pair square spread; always <= 0.  Serves as an
    independent check on the integrator via finite differences of moment 2.
    """
    if masks is None:
        masks = precompute_interaction_masks(grid, spec)
    gw = grid.values * trapezoid_weights(grid.n)
    u = masks.loss_u
    ptr = masks.loss_ptr
    v = masks.loss_v
    # ordered-pair square spread of the triple (x_j, x_{j+u}, x_{j+v})
    spread = np.empty(v.size)
    for a in range(u.size):
        uu = float(u[a])
        vv = v[ptr[a] : ptr[a + 1]].astype(float)
        spread[ptr[a] : ptr[a + 1]] = uu * uu + vv * vv + (uu - vv) ** 2
    lweight = masks.loss_mult * spread
    h = grid.h
    s = _kernels.triple_weighted_sum_kernel(gw, u, ptr, v, lweight)
    return -(h**5) / 3.0 * s


# ======================================================================
# steady-state driver
# ======================================================================


@dataclass
class SolveDiagnostics:
    """Per accepted step: local time, global mass/mean/second moment,
    the pre-clamp minimum of the candidate state, and the pre-renormalization
    mass drift of the active patch."""

    time: np.ndarray
    mass: np.ndarray
    mean: np.ndarray
    moment2: np.ndarray
    min_pre_clamp: np.ndarray
    mass_drift: np.ndarray
    patch_id: np.ndarray
    events: list[str] = field(default_factory=list)


@dataclass
class SolveResult:
    grid: DensityGrid
    clusters: ClusterSet
    converged: bool
    steps: int
    wall_time: float
    diagnostics: SolveDiagnostics


class _Recorder:
    """Accumulates one diagnostics row per accepted step."""

    def __init__(self):
        self.rows = []
        self.events = []

    def add(self, t, mass, mean, m2, min_pre, drift, pid):
        self.rows.append((t, mass, mean, m2, min_pre, drift, pid))

    def done(self) -> SolveDiagnostics:
        if self.rows:
            arr = np.array(self.rows)
        else:
            arr = np.zeros((0, 7))
        return SolveDiagnostics(
            time=arr[:, 0],
            mass=arr[:, 1],
            mean=arr[:, 2],
            moment2=arr[:, 3],
            min_pre_clamp=arr[:, 4],
            mass_drift=arr[:, 5],
            patch_id=arr[:, 6].astype(int),
            events=self.events,
        )


def solve_steady(
    grid0: DensityGrid, spec: DiscordanceSpec, config: SolverConfig | None = None
) -> SolveResult:
    """Integrate to the clustered steady state.

    Runs AB4 with per-step clamping and mass renormalization; every
    patch_interval steps the support is re-scanned and isolated patches are
    split off and integrated independently (fresh RK4 bootstrap, step scaled
    by adaptive_factor; a patch evolving slowly also grows its step at these
    checkpoints, up to dt_cap).  A candidate step that drives any node below
    -negativity_tolerance is rolled back and retried at half the step.
    Returns the final state, extracted clusters, and per-step diagnostics;
    a patch that reaches max_time leaves the run flagged non-converged.
    Low-mass clusters freeze slowly (their contraction rate scales with the
    square of their mass), so runs that still hold an uncollapsed minor at
    max_time report converged=False while the cluster positions are already
    exact: each patch's mass centroid is conserved by the kernel.
    """
    if config is None:
        config = SolverConfig()
    if spec.m not in (2, 3):
        raise ValueError("density solver supports group sizes m=2 and m=3")
    t_start = _time.perf_counter()
    g = grid0.values.copy()
    n = grid0.n
    h = grid0.h
    x = grid0.positions
    w = trapezoid_weights(n)
    delta_star = min_isolation_distance(spec)
    dt0 = config.resolve_dt(spec)
    masks = precompute_interaction_masks(grid0, spec) if spec.m == 3 else None
    rec = _Recorder()

    def patch_rhs(values: np.ndarray, w_slice: np.ndarray) -> np.ndarray:
        if spec.m == 3:
            return _triadic_rhs_values(values, w_slice, h, masks)
        return _dyadic_rhs_values(values, w_slice, h, spec)

    # global moment bookkeeping: background = everything outside the active
    # patch, frozen while that patch integrates
    def seg_moments(a: int, b: int):
        chunk = h * w[a:b] * g[a:b]
        return chunk.sum(), np.dot(chunk, x[a:b]), np.dot(chunk, x[a:b] ** 2)

    spans = _patch_spans(g, x, config.separation_accuracy, delta_star)
    stack: list[tuple[int, int, float, float]] = [(a, b, dt0, 0.0) for a, b in spans]
    total_steps = 0
    all_converged = True
    next_patch_id = 0
    dt_floor = dt0 * 2.0**-20

    while stack:
        a, b, dt, t_patch = stack.pop()
        pid = next_patch_id
        next_patch_id += 1
        dt_ceiling = config.dt_cap  # lowered to any dt this patch rejects
        ws = w[a:b]
        xs = x[a:b]
        m0, s1_0, s2_0 = seg_moments(a, b)
        tot_mass, tot_s1, tot_s2 = seg_moments(0, n)
        bg_mass, bg_s1, bg_s2 = tot_mass - m0, tot_s1 - s1_0, tot_s2 - s2_0
        target = m0
        gs = g[a:b].copy()

        def record(values: np.ndarray, min_pre: float, drift: float):
            chunk = h * ws * values
            pm = chunk.sum()
            ps1 = np.dot(chunk, xs)
            ps2 = np.dot(chunk, xs * xs)
            rec.add(
                t_patch, bg_mass + pm, (bg_s1 + ps1) / (bg_mass + pm),
                bg_s2 + ps2, min_pre, drift, pid,
            )

        if _is_converged_values(gs, xs, config.density_accuracy, delta_star):
            rec.events.append(f"patch {pid}: already converged")
            continue

        while True:
            # bootstrap (or re-bootstrap after any dt change)
            try:
                gs = g[a:b].copy()
                boot: list[tuple[np.ndarray, float, float]] = []

                def boot_post(values: np.ndarray) -> np.ndarray:
                    min_pre = float(values.min())
                    drift = _clamp_and_rescale(
                        values, ws, h, target, config.negativity_tolerance
                    )
                    boot.append((values.copy(), min_pre, drift))
                    return values

                gs, history = _rk4_bootstrap_values(
                    gs, lambda v: patch_rhs(v, ws), dt, boot_post
                )
            except StepSizeError:
                dt_ceiling = dt
                dt *= 0.5
                rec.events.append(f"patch {pid}: dt halved to {dt:.3e} during bootstrap")
                if dt < dt_floor:
                    raise RuntimeError(
                        "step size collapsed during bootstrap; negativity persists"
                    ) from None
                continue
            g[a:b] = gs
            for bstate, bmin, bdrift in boot:
                t_patch += dt
                total_steps += 1
                record(bstate, bmin, bdrift)

            patch_done = False
            reboot = False
            steps_since_scan = 0
            while not patch_done and not reboot:
                if _is_converged_values(gs, xs, config.density_accuracy, delta_star):
                    patch_done = True
                    rec.events.append(f"patch {pid}: converged at t={t_patch:.2f}")
                    break
                if t_patch >= config.max_time:
                    all_converged = False
                    rec.events.append(f"patch {pid}: max_time reached without convergence")
                    patch_done = True
                    break
                candidate = _ab4_formula(gs, history, dt)
                min_pre = float(candidate.min())
                if min_pre < -config.negativity_tolerance:
                    # reject, halve, rebuild the multistep history
                    dt_ceiling = dt
                    dt *= 0.5
                    rec.events.append(
                        f"patch {pid}: step rejected (min {min_pre:.2e}), dt -> {dt:.3e}"
                    )
                    if dt < dt_floor:
                        raise RuntimeError("step size collapsed; negativity persists")
                    reboot = True
                    break
                np.clip(candidate, 0.0, None, out=candidate)
                drift = h * float(np.dot(ws, candidate)) - target
                candidate *= target / (target + drift)
                gs = candidate
                g[a:b] = gs
                history.pop(0)
                history.append(patch_rhs(gs, ws))
                t_patch += dt
                total_steps += 1
                steps_since_scan += 1
                record(gs, min_pre, drift)

                if steps_since_scan >= config.patch_interval:
                    steps_since_scan = 0
                    spans = _patch_spans(gs, xs, config.separation_accuracy, delta_star)
                    if len(spans) > 1:
                        dt_next = min(dt * config.adaptive_factor, config.dt_cap)
                        rec.events.append(
                            f"patch {pid}: split into {len(spans)} at t={t_patch:.2f}"
                        )
                        for s0, s1 in spans:
                            stack.append((a + s0, a + s1, dt_next, t_patch))
                        patch_done = True
                        break
                    if len(spans) == 1:
                        s0, s1 = spans[0]
                        if (s1 - s0) <= 0.75 * (b - a):
                            rec.events.append(
                                f"patch {pid}: support shrank to [{a + s0}, {a + s1})"
                            )
                            stack.append((a + s0, a + s1, dt, t_patch))
                            patch_done = True
                            break
                    # slow patch: grow the step when one step moves the
                    # density by under 0.1% of its peak, so near-frozen
                    # minors do not burn the time budget at the violent
                    # phase's step size
                    if dt < dt_ceiling:
                        rate = float(np.abs(history[-1]).max())
                        peak = float(gs.max())
                        if dt * rate <= 1e-3 * peak:
                            dt = min(dt * config.adaptive_factor, dt_ceiling)
                            rec.events.append(
                                f"patch {pid}: dt grown to {dt:.3e} at t={t_patch:.2f}"
                            )
                            reboot = True
                            break
            if patch_done:
                break
            # reboot: dt was halved, restart the multistep history in place

    wall = _time.perf_counter() - t_start
    final = DensityGrid(grid0.lo, grid0.hi, n, g)
    converged = all_converged and _is_converged_values(
        g, x, config.density_accuracy, delta_star
    )
    clusters = _clusters_from_values(
        g, x, h, config.density_accuracy, delta_star
    )
    if converged and clusters.clusters:
        clusters.validate()
    return SolveResult(
        grid=final,
        clusters=clusters,
        converged=converged,
        steps=total_steps,
        wall_time=wall,
        diagnostics=rec.done(),
    )
