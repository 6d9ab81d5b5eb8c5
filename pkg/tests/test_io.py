"""Artifact I/O: exact round trips, stable bytes, verifiable manifests."""

import hashlib

import numpy as np
import pytest

from hyperbc.abm import EnsembleConfig, HistogramResult
from hyperbc.io import (
    format_float,
    read_density_csv,
    sha256_of_file,
    sha256_of_text,
    write_bifurcation_csv,
    write_clusters_csv,
    write_density_csv,
    write_histogram_csv,
    write_histogram_meta,
    write_manifest,
    write_sweep_rows_csv,
)
from hyperbc.meanfield import Cluster, ClusterSet, uniform_density, grid_from_values
from hyperbc.experiments import RowDiagnostics, SweepResult, SweepRow
from hyperbc.model import DiscordanceSpec


def test_format_float_is_exact():
    rng = np.random.default_rng(1)
    for x in rng.uniform(-1e3, 1e3, 200):
        assert float(format_float(x)) == x
    assert float(format_float(1e-300)) == 1e-300


def test_density_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(7)
    grid = grid_from_values(-1.5, 2.0, rng.uniform(0, 3, 257))
    path = tmp_path / "g.csv"
    write_density_csv(path, grid)
    back = read_density_csv(path)
    assert back.n == grid.n
    assert back.lo == grid.lo and back.hi == grid.hi
    assert np.array_equal(back.values, grid.values)
    assert np.array_equal(back.positions, grid.positions)


def test_density_write_is_deterministic(tmp_path):
    grid = uniform_density(2.0, n=100)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_density_csv(a, grid)
    write_density_csv(b, grid)
    assert a.read_bytes() == b.read_bytes()


def test_read_density_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="expected header"):
        read_density_csv(bad)
    bad.write_text("x,density\n0.0,1.0\n0.5,1.0\n")
    with pytest.raises(ValueError, match="at least 3 rows"):
        read_density_csv(bad)
    bad.write_text("x,density\n0.0,1.0\n0.1,1.0\n0.35,1.0\n")
    with pytest.raises(ValueError, match="uniform grid"):
        read_density_csv(bad)
    bad.write_text("x,density\n0.0,1.0\n0.1,goo\n0.2,1.0\n")
    with pytest.raises(ValueError, match="not a number"):
        read_density_csv(bad)
    bad.write_text("x,density\n0.0,1.0\n0.1\n0.2,1.0\n")
    with pytest.raises(ValueError, match="two columns"):
        read_density_csv(bad)


def test_clusters_csv_layout(tmp_path):
    cs = ClusterSet((Cluster(-0.9, 0.5), Cluster(0.9, 0.5)), 1.0, 0.01)
    path = tmp_path / "clusters.csv"
    write_clusters_csv(path, cs)
    lines = path.read_text().splitlines()
    assert lines[0] == "cluster_position,cluster_mass,label"
    assert lines[1] == "-0.90000000000000002,0.5,major"
    assert len(lines) == 3


def test_bifurcation_and_rows_csv(tmp_path):
    diag = RowDiagnostics(steps=12, wall_time=0.5, mass_error=1e-15, mean_drift=0.0)
    rows = [
        SweepRow(0.5, ClusterSet((Cluster(0.0, 1.0),), 1.0, 0.01), True, diag),
        SweepRow(
            2.0,
            ClusterSet((Cluster(-0.9, 0.5), Cluster(0.9, 0.5)), 1.0, 0.01),
            False,
            diag,
        ),
    ]
    sweep = SweepResult("D", DiscordanceSpec(), 500, rows)
    bif = tmp_path / "bifurcation.csv"
    write_bifurcation_csv(bif, sweep)
    lines = bif.read_text().splitlines()
    assert lines[0] == "param,cluster_position,cluster_mass,label"
    assert lines[1] == "0.5,0,1,major"
    assert len(lines) == 4  # 1 + 2 cluster rows

    rows_csv = tmp_path / "rows.csv"
    write_sweep_rows_csv(rows_csv, sweep)
    lines = rows_csv.read_text().splitlines()
    assert lines[0] == "param,converged,steps,wall_time,mass_error,mean_drift"
    assert lines[1].startswith("0.5,1,12,")
    assert lines[2].startswith("2,0,12,")


def test_histogram_csv_and_meta(tmp_path):
    edges = np.linspace(-1.0, 1.0, 5)
    hist = HistogramResult(edges, np.array([0.25, 0.25, 0.25, 0.25]), [], 99)
    csv_path = tmp_path / "h.csv"
    write_histogram_csv(csv_path, hist)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "bin_center,mass"
    assert lines[1] == "-0.75,0.25"
    assert len(lines) == 5

    cfg = EnsembleConfig(n_agents=50, half_width=1.0, realizations=4, master_seed=99)
    meta_path = tmp_path / "h.meta"
    write_histogram_meta(meta_path, hist, cfg)
    text = meta_path.read_text()
    assert text.startswith("[meta]\n")
    assert "master_seed = 99" in text
    assert "frozen = 0" in text and "capped = 0" in text
    assert "n_agents = 50" in text
    assert "init = uniform" in text


def test_manifest_lists_hashes(tmp_path):
    f1 = tmp_path / "one.csv"
    f2 = tmp_path / "two.csv"
    f1.write_text("x\n1\n")
    f2.write_text("y\n2\n")
    manifest = tmp_path / "manifest.txt"
    write_manifest(manifest, [f2, f1], "config text")
    lines = manifest.read_text().splitlines()
    assert lines[0] == f"# config_sha256 = {sha256_of_text('config text')}"
    # sorted by path, sha256sum-compatible two-space layout
    assert lines[1] == f"{sha256_of_file(f1)}  one.csv"
    assert lines[2] == f"{sha256_of_file(f2)}  two.csv"
    expect = hashlib.sha256(f1.read_bytes()).hexdigest()
    assert lines[1].split()[0] == expect
