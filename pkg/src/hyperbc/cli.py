"""Command-line front end.

Subcommands:
  run <config>     dispatch one configured engine, write artifacts + manifest
  diag <snapshot>  print conservation/cluster diagnostics for a density CSV
  oracle           brute-force check of the minimal-discordance closed form

Exit status: 0 success, 2 the run finished but something is flagged (a
non-converged solve or row, a capped realization), 1 error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .abm import EnsembleConfig, run_ensemble
from .config import RunConfig, parse_config, render_config
from .experiments import (
    mc_finite_size,
    split_locator,
    sweep_gaussian_sigma,
    sweep_uniform_D,
)
from .io import (
    read_density_csv,
    write_bifurcation_csv,
    write_clusters_csv,
    write_density_csv,
    write_histogram_csv,
    write_histogram_meta,
    write_manifest,
    write_sweep_rows_csv,
)
from .meanfield import (
    DensityGrid,
    SolverConfig,
    check_converged,
    detect_patches,
    extract_clusters,
    gaussian_density,
    moment_k,
    solve_steady,
    uniform_density,
    variance_dissipation_rate,
)
from .model import DiscordanceSpec, discordance, lemma_min_discordance_oracle

__all__ = ["main"]


# ----------------------------------------------------------------------
# engines
# ----------------------------------------------------------------------


def _initial_grid(cfg: RunConfig) -> DensityGrid:
    if cfg.init_kind == "uniform":
        return uniform_density(float(cfg.init_value), n=cfg.grid_n)
    if cfg.init_kind == "normal":
        return gaussian_density(float(cfg.init_value), n=cfg.grid_n)
    return read_density_csv(cfg.init_value)


def _print_clusters(cluster_set) -> None:
    for cl in cluster_set.clusters:
        label = "major" if cl.major else "minor"
        print(f"  cluster position={cl.position:+.6f} mass={cl.mass:.6f} {label}")


def _run_meanfield(cfg: RunConfig, outdir: Path, canonical: str) -> int:
    result = solve_steady(_initial_grid(cfg), cfg.spec, cfg.solver)
    density = outdir / "density.csv"
    clusters = outdir / "clusters.csv"
    write_density_csv(density, result.grid)
    write_clusters_csv(clusters, result.clusters)
    write_manifest(outdir / "manifest.txt", [density, clusters], canonical)
    print(
        f"meanfield: converged={result.converged} steps={result.steps} "
        f"clusters={len(result.clusters.clusters)}"
    )
    _print_clusters(result.clusters)
    return 0 if result.converged else 2


def _ensemble_config(cfg: RunConfig, master_seed: int | None = None) -> EnsembleConfig:
    return EnsembleConfig(
        n_agents=cfg.n_agents,
        spec=cfg.spec,
        init=cfg.init_kind,
        half_width=float(cfg.init_value) if cfg.init_kind == "uniform" else 1.0,
        sigma=float(cfg.init_value) if cfg.init_kind == "normal" else 1.0,
        realizations=cfg.realizations,
        freeze_tolerance=cfg.freeze_tolerance,
        step_cap=cfg.step_cap,
        master_seed=cfg.master_seed if master_seed is None else master_seed,
        bins=cfg.bins,
    )


def _run_abm(cfg: RunConfig, outdir: Path, canonical: str) -> int:
    ecfg = _ensemble_config(cfg)
    hist = run_ensemble(ecfg, workers=cfg.workers)
    hist.validate()
    hist_csv = outdir / "histogram.csv"
    hist_meta = outdir / "histogram.meta"
    write_histogram_csv(hist_csv, hist)
    write_histogram_meta(hist_meta, hist, ecfg)
    write_manifest(outdir / "manifest.txt", [hist_csv, hist_meta], canonical)
    print(
        f"abm: realizations={cfg.realizations} frozen={hist.frozen_count} "
        f"capped={hist.capped_count}"
    )
    return 0 if hist.capped_count == 0 else 2


def _require_plain_spec(cfg: RunConfig) -> None:
    # the sweep and mc engines sweep families of DiscordanceSpec(p, c); an
    # alpha override or m != 3 cannot be threaded through a family
    if cfg.spec.m != 3:
        raise ValueError("[model] m must be 3 for sweep and mc engines")
    if cfg.spec.alpha != DiscordanceSpec(p=cfg.spec.p, c=cfg.spec.c).alpha:
        raise ValueError("[model] alpha override is not supported by sweep engines")


def _sweep_values(cfg: RunConfig):
    if cfg.sweep_grid is None:
        return None
    lo, hi, step = cfg.sweep_grid
    return np.arange(lo, hi + step / 2, step)


def _write_sweep(sweep, cfg: RunConfig, outdir: Path, canonical: str) -> int:
    sweep.validate()
    bif = outdir / "bifurcation.csv"
    rows = outdir / "rows.csv"
    write_bifurcation_csv(bif, sweep)
    write_sweep_rows_csv(rows, sweep)
    write_manifest(outdir / "manifest.txt", [bif, rows], canonical)
    bad = sum(not row.converged for row in sweep.rows)
    events = split_locator(sweep)
    print(
        f"sweep: rows={len(sweep.rows)} non_converged={bad} "
        f"pattern_events={len(events)}"
    )
    for ev in events:
        print(
            f"  event in ({ev.lo:g}, {ev.hi:g}): majors "
            f"{ev.before[0]} -> {ev.after[0]}, central "
            f"{ev.before[1]} -> {ev.after[1]}"
        )
    return 0 if bad == 0 else 2


def _run_sweep_uniform(cfg: RunConfig, outdir: Path, canonical: str) -> int:
    _require_plain_spec(cfg)
    sweep = sweep_uniform_D(
        p=cfg.spec.p,
        c=cfg.spec.c,
        d_values=_sweep_values(cfg),
        n=cfg.grid_n,
        config=cfg.solver,
        workers=cfg.workers,
    )
    return _write_sweep(sweep, cfg, outdir, canonical)


def _run_sweep_gaussian(cfg: RunConfig, outdir: Path, canonical: str) -> int:
    _require_plain_spec(cfg)
    sweep = sweep_gaussian_sigma(
        sigma_values=_sweep_values(cfg),
        p=cfg.spec.p,
        c=cfg.spec.c,
        n=cfg.grid_n,
        config=cfg.solver,
        workers=cfg.workers,
    )
    return _write_sweep(sweep, cfg, outdir, canonical)


def _run_mc(cfg: RunConfig, outdir: Path, canonical: str) -> int:
    _require_plain_spec(cfg)
    table = mc_finite_size(
        d_values=cfg.mc_widths,
        agent_counts=cfg.mc_agents,
        realizations=cfg.realizations,
        p=cfg.spec.p,
        c=cfg.spec.c,
        master_seed=cfg.master_seed,
        step_cap=cfg.step_cap,
        bins=cfg.bins,
        freeze_tolerance=cfg.freeze_tolerance,
        workers=cfg.workers,
    )
    artifacts = []
    capped = 0
    for (d, n_agents), hist in sorted(table.items()):
        stem = f"hist_D{d:g}_N{n_agents}"
        csv_path = outdir / f"{stem}.csv"
        meta_path = outdir / f"{stem}.meta"
        write_histogram_csv(csv_path, hist)
        cell_cfg = EnsembleConfig(
            n_agents=n_agents,
            spec=cfg.spec,
            init="uniform",
            half_width=d,
            realizations=cfg.realizations,
            freeze_tolerance=cfg.freeze_tolerance,
            step_cap=cfg.step_cap,
            master_seed=hist.master_seed,
            bins=cfg.bins,
        )
        write_histogram_meta(meta_path, hist, cell_cfg)
        artifacts += [csv_path, meta_path]
        capped += hist.capped_count
        print(
            f"mc cell D={d:g} N={n_agents}: frozen={hist.frozen_count} "
            f"capped={hist.capped_count}"
        )
    write_manifest(outdir / "manifest.txt", artifacts, canonical)
    return 0 if capped == 0 else 2


def _diag_report(grid: DensityGrid, spec: DiscordanceSpec, solver: SolverConfig) -> str:
    m0 = grid.mass
    mean = moment_k(grid, 1) / m0 if m0 else float("nan")
    lines = [
        f"nodes = {grid.n}",
        f"domain = [{grid.lo:.17g}, {grid.hi:.17g}]",
        f"h = {grid.h:.17g}",
        f"mass = {m0:.17g}",
        f"mean = {mean:.17g}",
        f"moment2 = {moment_k(grid, 2):.17g}",
        f"moment4 = {moment_k(grid, 4):.17g}",
    ]
    if spec.m == 3:
        rate = variance_dissipation_rate(grid, spec)
        lines.append(f"variance_dissipation_rate = {rate:.17g}")
    patches = detect_patches(grid, spec, solver)
    lines.append(f"patches = {len(patches)}")
    for pi in patches:
        lines.append(
            f"  patch nodes [{pi.start_index}, {pi.end_index}] "
            f"x in [{grid.positions[pi.start_index]:+.6f}, "
            f"{grid.positions[pi.end_index]:+.6f}]"
        )
    converged = check_converged(grid, spec, solver)
    lines.append(f"converged = {converged}")
    if converged:
        clusters = extract_clusters(grid, spec, solver)
        lines.append(f"clusters = {len(clusters.clusters)}")
        for cl in clusters.clusters:
            label = "major" if cl.major else "minor"
            lines.append(
                f"  cluster position={cl.position:+.6f} mass={cl.mass:.6f} {label}"
            )
    return "\n".join(lines)


def _run_diag_engine(cfg: RunConfig, outdir: Path, canonical: str) -> int:
    grid = read_density_csv(cfg.init_value)
    print(_diag_report(grid, cfg.spec, cfg.solver))
    return 0


_ENGINES = {
    "meanfield": _run_meanfield,
    "abm": _run_abm,
    "sweep-uniform": _run_sweep_uniform,
    "sweep-gaussian": _run_sweep_gaussian,
    "mc-finite-size": _run_mc,
    "diag": _run_diag_engine,
}


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


def _cmd_run(args) -> int:
    cfg = parse_config(Path(args.config).read_text())
    if args.workers is not None:
        if args.workers < 1:
            raise ValueError("--workers must be >= 1")
        cfg = replace(cfg, workers=args.workers)
    if args.seed is not None:
        if args.seed < 0:
            raise ValueError("--seed must be >= 0")
        cfg = replace(cfg, master_seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    return _ENGINES[cfg.engine](cfg, outdir, render_config(cfg))


def _cmd_diag(args) -> int:
    spec = DiscordanceSpec(p=args.p, alpha=args.alpha, c=args.c, m=args.m)
    grid = read_density_csv(args.snapshot)
    print(_diag_report(grid, spec, SolverConfig()))
    return 0


def _cmd_oracle(args) -> int:
    """Randomized sets: the brute-force minimal nontrivial discordance must
    equal discordance((smallest gap, 0, 0)) bitwise."""
    rng = np.random.default_rng(args.seed)
    failures = 0
    for i in range(args.sets):
        size = int(rng.integers(2, 6))
        p = float(rng.choice([0.5, 1.0, 2.0]))
        spec = DiscordanceSpec(p=p)
        values = np.sort(rng.uniform(-5.0, 5.0, size))
        brute, minimizer = lemma_min_discordance_oracle(values, spec)
        gap = float(np.diff(values).min())
        closed = discordance(np.array([gap, 0.0, 0.0]), spec)
        if brute != closed:
            failures += 1
            print(
                f"FAIL set {i}: p={p} values={values.tolist()} "
                f"brute={brute!r} closed={closed!r} minimizer={minimizer}"
            )
    print(f"oracle: {args.sets - failures}/{args.sets} sets passed")
    return 0 if failures == 0 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hyperbc",
        description="Group opinion dynamics: density solves, agent ensembles, sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the engine described by a config file")
    run_p.add_argument("config", help="path to an INI run configuration")
    run_p.add_argument("--workers", type=int, default=None)
    run_p.add_argument("--seed", type=int, default=None, help="override master_seed")
    run_p.add_argument("--out", default=None, help="override the output directory")

    diag_p = sub.add_parser("diag", help="diagnostics for a density snapshot CSV")
    diag_p.add_argument("snapshot")
    diag_p.add_argument("--p", type=float, default=1.0)
    diag_p.add_argument("--c", type=float, default=1.0)
    diag_p.add_argument("--alpha", type=float, default=None)
    diag_p.add_argument("--m", type=int, default=3)

    oracle_p = sub.add_parser("oracle", help="brute-force minimal-discordance check")
    oracle_p.add_argument("--sets", type=int, default=100)
    oracle_p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    commands = {"run": _cmd_run, "diag": _cmd_diag, "oracle": _cmd_oracle}
    try:
        return commands[args.command](args)
    except (ValueError, OSError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
