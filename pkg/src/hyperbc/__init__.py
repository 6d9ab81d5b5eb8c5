"""Bounded-confidence opinion dynamics with three-agent group interactions.

Submodules:
    model        group discordance, update rule, isolation distance, oracle
    meanfield    density-evolution solver on a uniform grid
    abm          agent-based Monte Carlo engine
    experiments  steady-state sweeps, branch fits, split location
    config/io    run configuration and artifact serialization
    cli          command-line front end
"""

from .model import (
    DiscordanceSpec,
    OpinionTuple,
    default_alpha,
    discordance,
    dw_group_update,
    group_mean,
    lemma_min_discordance_oracle,
    min_isolation_distance,
)
from .meanfield import (
    Cluster,
    ClusterSet,
    DensityGrid,
    SolveResult,
    SolverConfig,
    extract_clusters,
    gaussian_density,
    grid_from_values,
    solve_steady,
    uniform_density,
    variance_dissipation_rate,
)
from .abm import (
    EnsembleConfig,
    HistogramResult,
    OpinionState,
    abm_step,
    is_frozen,
    run_ensemble,
    run_realization,
    sample_hyperedge,
)
from .experiments import (
    SweepResult,
    branch_linearity,
    mc_finite_size,
    split_locator,
    sweep_gaussian_sigma,
    sweep_uniform_D,
    track_branches,
)
from .config import RunConfig, parse_config, render_config

__version__ = "0.1.0"
