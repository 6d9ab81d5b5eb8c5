"""Artifact I/O: CSV tables, histogram metadata, and run manifests.

Every float prints with 17 significant digits, so binary64 values survive a
write/read round trip bitwise.  No artifact body contains a timestamp:
identical configurations and seeds produce byte-identical files, and the
manifest's content hashes make reruns verifiable with sha256sum -c.
"""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path

import numpy as np

from .abm import HistogramResult, EnsembleConfig
from .meanfield import DensityGrid, grid_from_values

__all__ = [
    "format_float",
    "write_density_csv",
    "read_density_csv",
    "write_clusters_csv",
    "write_bifurcation_csv",
    "write_sweep_rows_csv",
    "write_histogram_csv",
    "write_histogram_meta",
    "write_manifest",
    "sha256_of_text",
    "sha256_of_file",
]

_FMT = "%.17g"


def format_float(x: float) -> str:
    return _FMT % float(x)


def _write_rows(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ----------------------------------------------------------------------
# density snapshots
# ----------------------------------------------------------------------


def write_density_csv(path, grid: DensityGrid) -> None:
    _write_rows(
        path,
        ["x", "density"],
        (
            (format_float(x), format_float(v))
            for x, v in zip(grid.positions, grid.values)
        ),
    )


def read_density_csv(path) -> DensityGrid:
    """Parse a density snapshot; the x column must form a uniform grid."""
    xs: list[float] = []
    vs: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["x", "density"]:
            raise ValueError(f"{path}: expected header 'x,density'")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{line_no}: expected two columns")
            try:
                xs.append(float(row[0]))
                vs.append(float(row[1]))
            except ValueError:
                raise ValueError(f"{path}:{line_no}: not a number") from None
    if len(xs) < 3:
        raise ValueError(f"{path}: need at least 3 rows")
    grid = grid_from_values(xs[0], xs[-1], np.array(vs))
    x = np.array(xs)
    if float(np.abs(x - grid.positions).max()) > 1e-9 * max(grid.h, 1e-300):
        raise ValueError(f"{path}: x column is not a uniform grid")
    return grid


# ----------------------------------------------------------------------
# cluster tables
# ----------------------------------------------------------------------


def _cluster_rows(param, cluster_set, with_param: bool):
    for cl in cluster_set.clusters:
        label = "major" if cl.major else "minor"
        row = [format_float(cl.position), format_float(cl.mass), label]
        if with_param:
            row.insert(0, format_float(param))
        yield row


def write_clusters_csv(path, cluster_set) -> None:
    """Single-run cluster table: cluster_position, cluster_mass, label."""
    _write_rows(
        path,
        ["cluster_position", "cluster_mass", "label"],
        _cluster_rows(None, cluster_set, with_param=False),
    )


def write_bifurcation_csv(path, sweep) -> None:
    """One line per (sweep row, cluster): param, position, mass, label."""
    def rows():
        for row in sweep.rows:
            yield from _cluster_rows(row.param, row.clusters, with_param=True)

    _write_rows(path, ["param", "cluster_position", "cluster_mass", "label"], rows())


def write_sweep_rows_csv(path, sweep) -> None:
    """Per-row solve diagnostics alongside the bifurcation table."""
    _write_rows(
        path,
        ["param", "converged", "steps", "wall_time", "mass_error", "mean_drift"],
        (
            (
                format_float(row.param),
                int(row.converged),
                row.diagnostics.steps,
                format_float(row.diagnostics.wall_time),
                format_float(row.diagnostics.mass_error),
                format_float(row.diagnostics.mean_drift),
            )
            for row in sweep.rows
        ),
    )


# ----------------------------------------------------------------------
# histograms
# ----------------------------------------------------------------------


def write_histogram_csv(path, hist: HistogramResult) -> None:
    centers = 0.5 * (hist.bin_edges[:-1] + hist.bin_edges[1:])
    _write_rows(
        path,
        ["bin_center", "mass"],
        (
            (format_float(x), format_float(m))
            for x, m in zip(centers, hist.bin_masses)
        ),
    )


def write_histogram_meta(path, hist: HistogramResult, config: EnsembleConfig) -> None:
    """Ensemble metadata next to the histogram: config echo plus counts."""
    lines = [
        "[meta]",
        f"n_agents = {config.n_agents}",
        f"init = {config.init}",
        f"half_width = {format_float(config.half_width)}",
        f"sigma = {format_float(config.sigma)}",
        f"p = {format_float(config.spec.p)}",
        f"c = {format_float(config.spec.c)}",
        f"alpha = {format_float(config.spec.alpha)}",
        f"m = {config.spec.m}",
        f"realizations = {config.realizations}",
        f"freeze_tolerance = {format_float(config.freeze_tolerance)}",
        f"step_cap = {config.step_cap}",
        f"bins = {config.bins}",
        f"master_seed = {hist.master_seed}",
        f"frozen = {hist.frozen_count}",
        f"capped = {hist.capped_count}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


# ----------------------------------------------------------------------
# manifest
# ----------------------------------------------------------------------


def sha256_of_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def sha256_of_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(path, artifact_paths, config_text: str) -> None:
    """sha256sum-compatible listing of every artifact, keyed by basename.

    The header carries the hash of the canonical configuration text, so a
    completed output directory can be matched to its exact run settings.
    """
    out = Path(path)
    lines = [f"# config_sha256 = {sha256_of_text(config_text)}"]
    for artifact in sorted(Path(p) for p in artifact_paths):
        lines.append(f"{sha256_of_file(artifact)}  {artifact.name}")
    out.write_text("\n".join(lines) + "\n")
