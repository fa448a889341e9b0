"""Plain-text persistence: offline GMsFEM bundles, DEIM tables and run outputs.

A bundle directory holds ``basis.txt`` (triplets of Phi), ``columns.csv``,
``eigenvalues.csv``, ``field.txt`` and ``manifest.txt``.  The manifest
records the settings that determine the offline space and a SHA-256 of
every file; loading checks both and refuses on any mismatch.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import __version__
from .fem import read_triplets, write_triplets
from .coeff import save_field_grid
from .config import RANK

__all__ = [
    "BundleError",
    "file_digest",
    "save_offline",
    "load_offline",
    "basis_from_bundle",
    "write_deim_artifacts",
    "write_errors",
    "write_reports",
    "write_field",
    "write_manifest",
    "write_run",
]

BUNDLE_FILES = ("basis.txt", "columns.csv", "eigenvalues.csv", "field.txt")


class BundleError(RuntimeError):
    pass


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _key_digest(key: dict) -> str:
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()


def _write_ini(path, sections: dict) -> None:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    for name, items in sections.items():
        cp[name] = {k: str(v) for k, v in items.items()}
    buf = io.StringIO()
    cp.write(buf)
    Path(path).write_text(buf.getvalue())


def _read_ini(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_string(Path(path).read_text())
    return cp


# offline bundle --------------------------------------------------------------------


def save_offline(directory, setup) -> Path:
    """Persist the offline space of ``setup`` (needs the offline spaces)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    basis = setup.basis
    write_triplets(d / "basis.txt", basis.matrix)
    with open(d / "columns.csv", "w") as fh:
        fh.write("column,coarse_node,mode\n")
        for c, (o, k) in enumerate(zip(basis.owner, basis.mode)):
            fh.write(f"{c},{o},{k}\n")
    with open(d / "eigenvalues.csv", "w") as fh:
        fh.write("coarse_node,k,eigenvalue,kept\n")
        for sp_ in setup.spaces or ():
            for k, lam in enumerate(sp_.eigenvalues):
                fh.write(f"{sp_.region},{k},{lam:.17g},{int(k < sp_.m_off)}\n")
    save_field_grid(d / "field.txt", setup.field, setup.mesh)
    key = setup.config.offline_key()
    _write_ini(d / "manifest.txt", {
        "offline": {k: ("" if v is None else v) for k, v in key.items()},
        "digest": {"settings": _key_digest(key), "field": setup.field.digest(), "msdeim": __version__},
        "files": {name: file_digest(d / name) for name in BUNDLE_FILES},
    })
    return d


def load_offline(directory, config, mesh=None):
    """Basis matrix from a bundle built with the same offline settings.

    Raises :class:`BundleError` when the settings or any file hash differ.
    """
    d = Path(directory)
    man = d / "manifest.txt"
    if not man.exists():
        raise BundleError(f"{d}: no manifest.txt")
    cp = _read_ini(man)
    want = _key_digest(config.offline_key())
    have = cp.get("digest", "settings", fallback="")
    if have != want:
        raise BundleError(f"{d}: bundle was built with different offline settings")
    for name in BUNDLE_FILES:
        rec = cp.get("files", name, fallback=None)
        if rec is None or not (d / name).exists() or file_digest(d / name) != rec:
            raise BundleError(f"{d}: {name} is missing or does not match the manifest hash")
    Phi = read_triplets(d / "basis.txt").tocsc()
    cols = np.loadtxt(d / "columns.csv", delimiter=",", skiprows=1, dtype=int, ndmin=2)
    if cols.shape[0] != Phi.shape[1]:
        raise BundleError(f"{d}: columns.csv does not match basis.txt")
    if mesh is not None and Phi.shape[0] != mesh.n_f:
        raise BundleError(f"{d}: basis has {Phi.shape[0]} rows, mesh has {mesh.n_f} nodes")
    return Phi, cols[:, 1], cols[:, 2]


def basis_from_bundle(directory, config, mesh, neighborhoods, pu):
    from .gmsfem import MultiscaleBasis

    Phi, owner, mode = load_offline(directory, config, mesh)
    Phi_r = Phi.tocsr()
    index_sets = tuple(np.unique(Phi_r[nb.fine_nodes].indices) for nb in neighborhoods)
    return MultiscaleBasis(Phi, owner, mode, index_sets, tuple(neighborhoods), pu)


# DEIM artifacts --------------------------------------------------------------------


def write_deim_artifacts(directory, ops) -> list:
    """Per-region interpolation indices, POD eigenvalues and combine matrices."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "deim_indices.csv", "w") as fh:
        fh.write("region_id,rank,fine_local_index,fine_global_index\n")
        for r in ops.regions:
            for k, j in enumerate(r.indices):
                fh.write(f"{r.region},{k},{j},{r.nodes[j]}\n")
    with open(d / "pod_eigenvalues.csv", "w") as fh:
        fh.write("region_id,k,eigenvalue\n")
        for r in ops.regions:
            for k, lam in enumerate(r.pod.eigenvalues):
                fh.write(f"{r.region},{k},{lam:.17g}\n")
    rows, cols, vals = [], [], []
    offset = 0
    with open(d / "combine_columns.csv", "w") as fh:
        fh.write("column,region_id,mode\n")
        for r in ops.regions:
            C = sp.coo_matrix(r.combine)
            rows.append(r.nodes[C.row])
            cols.append(C.col + offset)
            vals.append(C.data)
            for k in range(r.m):
                fh.write(f"{offset + k},{r.region},{k}\n")
            offset += r.m
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(ops.n_f, offset))
    write_triplets(d / "combine.txt", M)
    return ["deim_indices.csv", "pod_eigenvalues.csv", "combine_columns.csv", "combine.txt"]


# run outputs -----------------------------------------------------------------------


def write_errors(path, tables) -> None:
    with open(path, "w") as fh:
        fh.write("label,m,rel_l2,rel_energy\n")
        for t in tables:
            for m, l2, en in t.rows:
                fh.write(f"{t.label},{m},{l2:.17g},{en:.17g}\n")


def write_reports(path, tables) -> None:
    with open(path, "w") as fh:
        fh.write("label,run,t,newton_iters,final_step_norm,eval_count\n")
        for t in tables:
            for run, rep in t.reports.items():
                for tt, k, s, e in zip(rep.times, rep.iterations, rep.step_norms, rep.eval_counts):
                    last = s[-1] if s else float("nan")
                    fh.write(f"{t.label},{run},{tt:.17g},{k},{last:.17g},{e}\n")


def write_field(path, values, mesh) -> None:
    """Nodal values as an (N+1) x (N+1) grid, rows of constant y."""
    n = mesh.n_side + 1
    np.savetxt(path, np.asarray(values).reshape(n, n), fmt="%.17g")


def write_manifest(path, config, files: dict, extra: dict | None = None) -> None:
    text = "# msdeim run manifest\n" + config.to_ini()
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["artifacts"] = files
    if extra:
        cp["run"] = {k: str(v) for k, v in extra.items()}
    buf = io.StringIO()
    cp.write(buf)
    Path(path).write_text(text + buf.getvalue())


def write_run(directory, config, tables, setup) -> Path:
    """errors.csv, report.csv, final fields, DEIM artifacts and the manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = ["errors.csv", "report.csv"]
    write_errors(d / "errors.csv", tables)
    write_reports(d / "report.csv", tables)
    for t in tables:
        for run, U in t.fields.items():
            name = f"u_{t.label}_{run}.txt"
            write_field(d / name, U, setup.mesh)
            names.append(name)
        if t.operators:
            # operators of the largest finite m requested (the rank row can be large)
            top = max((m for m in config.m_values if m != RANK), default=min(t.operators))
            pick = max((k for k in t.operators if k <= top), default=min(t.operators))
            sub = f"deim_{t.label}_m{pick}"
            names += [f"{sub}/{n}" for n in write_deim_artifacts(d / sub, t.operators[pick])]
    files = {n: file_digest(d / n) for n in names}
    extra = {"field_digest": setup.field.digest(), "n_c": setup.basis.n_c, "n_f": setup.basis.n_f,
             "msdeim": __version__, "numpy": np.__version__}
    write_manifest(d / "manifest.txt", config, files, extra)
    return d
