"""Experiments, artifacts and the command line on small grids."""
import logging

import numpy as np
import pytest

from msdeim.artifacts import (
    BundleError,
    basis_from_bundle,
    load_offline,
    save_offline,
    write_deim_artifacts,
    write_errors,
)
from msdeim.cli import main
from msdeim.config import RANK, default_config, load_config, parse_config
from msdeim.experiments import build_setup, run_experiment, run_fn_approx, run_steady
from msdeim.fem import read_triplets

SMALL = """
[grid]
n_coarse = 3
n_sub = 4
[field]
preset = case1
eta = 4
[experiment]
name = steady
m = 1, 2, rank
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


@pytest.fixture(scope="module")
def small_cfg():
    return default_config("steady", n_coarse=3, n_sub=4, m_values=(1, 2, RANK))


@pytest.fixture(scope="module")
def small_setup(small_cfg):
    return build_setup(small_cfg)


def _read(path):
    return path.read_text().splitlines()


# experiments -------------------------------------------------------------------


def test_steady_small(small_cfg, small_setup):
    t = run_steady(small_cfg, small_setup)
    assert t.m[0] == 1 and len(t) == 3
    assert t.energy[-1] <= 1e-10
    assert t.is_monotone()
    assert not t.diverged
    assert t.info["training_states"] <= small_cfg.cap


def test_fn_approx_small(small_setup):
    cfg = default_config("fn_approx", n_coarse=3, n_sub=4, m_values=(1, 2, RANK))
    tables = run_fn_approx(cfg, small_setup)
    assert set(tables) == {"F1", "F2"}
    for t in tables.values():
        assert t.l2[-1] <= 1e-10


def test_parabolic_small():
    cfg = default_config("parabolic", n_coarse=3, n_sub=4, m_values=(2, RANK), compare_unweighted=True, T=0.05)
    (t,) = run_experiment(cfg)
    assert t.energy[-1] <= 1e-10
    assert "full" in t.reports and f"msdeim-m{t.m[0]}" in t.reports
    assert len(t.info["unweighted"]) == 2
    assert all(len(r.iterations) == 5 for r in t.reports.values())


def test_full_mode_only(small_cfg, small_setup):
    t = run_steady(small_cfg.with_overrides(mode="full"), small_setup)
    assert len(t) == 0 and "full" in t.reports


# artifacts -----------------------------------------------------------------------


def test_bundle_roundtrip(tmp_path, small_cfg, small_setup):
    d = save_offline(tmp_path / "b", small_setup)
    Phi, owner, mode = load_offline(d, small_cfg, small_setup.mesh)
    assert (Phi != small_setup.basis.matrix).nnz == 0
    assert np.array_equal(owner, small_setup.basis.owner) and np.array_equal(mode, small_setup.basis.mode)
    basis = basis_from_bundle(d, small_cfg, small_setup.mesh, small_setup.neighborhoods, small_setup.pu)
    for a, b in zip(basis.index_sets, small_setup.basis.index_sets):
        assert np.array_equal(a, b)
    head = _read(d / "eigenvalues.csv")[0]
    assert head == "coarse_node,k,eigenvalue,kept"


def test_bundle_mismatch(tmp_path, small_cfg, small_setup):
    d = save_offline(tmp_path / "b", small_setup)
    with pytest.raises(BundleError, match="different offline settings"):
        load_offline(d, small_cfg.with_overrides(eta=6.0))
    with open(d / "basis.txt", "a") as fh:
        fh.write("0 0 1.0\n")
    with pytest.raises(BundleError, match="basis.txt"):
        load_offline(d, small_cfg)
    (d / "manifest.txt").unlink()
    with pytest.raises(BundleError, match="manifest"):
        load_offline(d, small_cfg)


def test_deim_artifacts(tmp_path, small_cfg, small_setup):
    t = run_steady(small_cfg.with_overrides(m_values=(2,)), small_setup)
    ops = t.operators[2]
    write_deim_artifacts(tmp_path, ops)
    rows = _read(tmp_path / "deim_indices.csv")
    assert rows[0] == "region_id,rank,fine_local_index,fine_global_index"
    assert len(rows) == 1 + ops.total_points
    for line in rows[1:]:
        region, k, loc, glob = map(int, line.split(","))
        assert ops.regions[region].nodes[loc] == glob
    C = read_triplets(tmp_path / "combine.txt")
    assert C.shape == (small_setup.mesh.n_f, ops.total_points)
    write_errors(tmp_path / "e.csv", [t])
    line = _read(tmp_path / "e.csv")[1].split(",")
    assert line[0] == "steady" and float(line[2]) == t.l2[0]  # 17 digits round-trip


# command line ----------------------------------------------------------------------


def test_cli_unknown_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["steady", "--frobnicate"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_cli_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[grid]\nn_coarse = 1\n")
    assert main(["steady", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["steady", "--config", str(tmp_path / "missing.ini")]) == 2


def test_cli_divergence(tmp_path):
    p = tmp_path / "div.ini"
    p.write_text(SMALL + "[newton]\ntol = 1e-300\nmax_iter = 1\n")
    assert main(["steady", "--config", str(p), "--out", str(tmp_path / "o")]) == 3


def test_cli_run_outputs(tmp_path, cfg_file):
    out = tmp_path / "run"
    assert main(["steady", "--config", str(cfg_file), "--out", str(out)]) == 0
    for name in ("manifest.txt", "errors.csv", "report.csv", "u_steady_full.txt"):
        assert (out / name).exists()
    man = (out / "manifest.txt").read_text()
    assert "[artifacts]" in man and "errors.csv" in man
    # the manifest holds the full configuration
    cfg_back = parse_config(man.split("[artifacts]")[0])
    assert cfg_back == load_config(cfg_file).with_overrides(out=None)
    assert len(_read(out / "errors.csv")) == 4


def test_cli_reruns_bit_identical(tmp_path, cfg_file):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["steady", "--config", str(cfg_file), "--out", str(a)]) == 0
    assert main(["steady", "--config", str(cfg_file), "--out", str(b)]) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_cli_bundle_reuse(tmp_path, cfg_file, caplog):
    out = tmp_path / "d"
    assert main(["offline", "--config", str(cfg_file), "--out", str(out)]) == 0
    assert (out / "offline" / "manifest.txt").exists()
    with caplog.at_level(logging.INFO, logger="msdeim"):
        assert main(["steady", "--config", str(cfg_file), "--out", str(out), "-v"]) == 0
    assert any("reusing offline bundle" in r.message for r in caplog.records)
    # a different contrast does not match the stored space
    assert main(["steady", "--config", str(cfg_file), "--out", str(out), "--eta", "6"]) == 2


def test_cli_single_m(tmp_path):
    out = tmp_path / "one"
    assert main(["steady", "--m", "2", "--eta", "4", "--preset", "case1", "--out", str(out)]) == 0
    rows = _read(out / "errors.csv")
    assert len(rows) == 2 and rows[1].startswith("steady,2,")


def test_cli_verify(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 8
