"""Offline GMsFEM coarse space: local harmonic snapshots, the local spectral
problem ``A_off v = lambda S_off v`` and the global downscaling operator Phi.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .counters import tally
from .fem import assemble_mass, assemble_stiffness, local_gradients

__all__ = [
    "SnapshotSpace",
    "OfflineSpace",
    "MultiscaleBasis",
    "build_snapshots",
    "build_offline_space",
    "build_basis",
    "build_multiscale_space",
    "pu_gradient_weight",
    "prolong",
    "restrict",
]

log = logging.getLogger(__name__)

SNAPSHOT_RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SnapshotSpace:
    region: int
    vectors: np.ndarray
    """(n_local, M_snap) discrete harmonic extensions, one per boundary node."""
    stiffness: sp.csr_matrix
    """Local stiffness integrated over the region only (local numbering)."""

    @property
    def count(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True, eq=False)
class OfflineSpace:
    region: int
    eigenvalues: np.ndarray
    """All eigenvalues of the reduced local problem, ascending."""
    coefficients: np.ndarray
    """(M_snap, M_off) eigenvectors in the coordinates of the original snapshots."""
    functions: np.ndarray
    """(n_local, M_off) offline functions ``snapshots @ coefficients``."""
    residuals: np.ndarray

    @property
    def m_off(self) -> int:
        return self.functions.shape[1]


@dataclass(frozen=True, eq=False)
class MultiscaleBasis:
    matrix: sp.csc_matrix
    """Phi, shape (n_f, n_c)."""
    owner: np.ndarray
    """Coarse node owning each column."""
    mode: np.ndarray
    """Local eigen-mode number of each column (0 = smallest eigenvalue)."""
    index_sets: tuple
    """``index_sets[i]``: columns of Phi that are nonzero somewhere in omega_i."""
    neighborhoods: tuple
    pu: object = None
    """The partition of unity used to build the columns."""

    @property
    def n_f(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_c(self) -> int:
        return self.matrix.shape[1]

    @property
    def first_columns(self) -> np.ndarray:
        """Column of the lowest mode for every coarse node."""
        cols = np.full(len(self.neighborhoods), -1)
        sel = self.mode == 0
        cols[self.owner[sel]] = np.flatnonzero(sel)
        return cols

    def local(self, i: int) -> np.ndarray:
        """Dense block ``Phi^{omega_i}``: rows of omega_i, columns of I^{omega_i}."""
        nb = self.neighborhoods[i]
        return self.matrix[nb.fine_nodes][:, self.index_sets[i]].toarray()


def _local(M, nodes):
    return M[nodes][:, nodes].tocsc()


def build_snapshots(nb, field, mesh) -> SnapshotSpace:
    """Discrete kappa-harmonic extensions of unit data at each boundary node of omega_i."""
    A = _local(assemble_stiffness(mesh, field.kappa, elements=nb.elements), nb.fine_nodes)
    I, B = nb.interior_local, nb.boundary_local
    snaps = np.zeros((nb.size, B.size))
    snaps[B, np.arange(B.size)] = 1.0
    if I.size:
        A_II = A[I][:, I].tocsc()
        A_IB = A[I][:, B].toarray()
        try:
            lu = spla.splu(A_II)
        except RuntimeError as exc:  # pragma: no cover - kappa > 0 keeps A_II SPD
            raise RuntimeError(f"region {nb.node}: singular local system") from exc
        snaps[I] = -lu.solve(A_IB)
    return SnapshotSpace(nb.node, snaps, A.tocsr())


def pu_gradient_weight(mesh, pu, H: float) -> np.ndarray:
    """Per-element ``sum_j H^2 |grad chi_j|^2`` for the bilinear partition of unity."""
    grads, _ = local_gradients(mesh.nodes[mesh.triangles])
    chi = pu.chi.tocsc()
    total = np.zeros(mesh.n_elements)
    for j in range(pu.n_regions):
        vals = chi.getrow(j).toarray().ravel()[mesh.triangles]  # (n_t, 3)
        g = np.einsum("ti,tid->td", vals, grads)
        total += (g**2).sum(axis=1)
    return H**2 * total


def build_offline_space(snap: SnapshotSpace, nb, field, mesh, m_off: int, s_weight=None) -> OfflineSpace:
    """Smallest ``m_off`` eigenpairs of the snapshot-space spectral problem.

    The mass-type form uses ``kappa`` unless per-element ``s_weight`` values
    are supplied.
    """
    weight = field.kappa if s_weight is None else s_weight
    S_bar = _local(assemble_mass(mesh, weight=weight, elements=nb.elements), nb.fine_nodes)
    A_bar = snap.stiffness

    U, s, Wt = la.svd(snap.vectors, full_matrices=False)
    r = int(np.sum(s > SNAPSHOT_RANK_TOL * s[0]))
    if m_off > r:
        raise ValueError(f"region {nb.node}: M_off={m_off} exceeds snapshot rank {r}")
    Q = U[:, :r]
    A_off = Q.T @ (A_bar @ Q)
    S_off = Q.T @ (S_bar @ Q)
    A_off = 0.5 * (A_off + A_off.T)
    S_off = 0.5 * (S_off + S_off.T)
    lam, V = la.eigh(A_off, S_off)

    keep = V[:, :m_off]
    res = np.linalg.norm(A_off @ keep - (S_off @ keep) * lam[:m_off], axis=0)
    res /= np.linalg.norm(A_off, 2) * np.linalg.norm(keep, axis=0)
    coeffs = Wt[:r].T @ (keep / s[:r, None])
    return OfflineSpace(nb.node, lam, coeffs, Q @ keep, res)


def build_basis(spaces, pu, mesh, neighborhoods) -> MultiscaleBasis:
    """Assemble Phi: column (i, k) is ``chi_i`` times offline function k of
    omega_i, set to zero on the Dirichlet boundary and scaled to unit max-norm
    (coarse coordinates then carry nodal magnitudes)."""
    rows, cols, vals, owner, mode = [], [], [], [], []
    col = 0
    for sp_, nb in zip(spaces, neighborhoods):
        chi = pu.local_values[nb.node]
        bnd = mesh.boundary_mask[nb.fine_nodes]
        for k in range(sp_.m_off):
            v = chi * sp_.functions[:, k]
            v[bnd] = 0.0
            nz = np.flatnonzero(v)
            if nz.size == 0:
                raise ValueError(f"region {nb.node}, mode {k}: basis function vanishes after PU multiplication")
            v /= np.abs(v).max()
            rows.append(nb.fine_nodes[nz])
            cols.append(np.full(nz.size, col))
            vals.append(v[nz])
            owner.append(nb.node)
            mode.append(k)
            col += 1
    Phi = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(mesh.n_f, col)
    )
    Phi_r = Phi.tocsr()
    index_sets = tuple(np.unique(Phi_r[nb.fine_nodes].indices) for nb in neighborhoods)
    return MultiscaleBasis(Phi, np.array(owner), np.array(mode), index_sets, tuple(neighborhoods), pu)


def build_multiscale_space(mesh, coarse, field, m_off, pu=None, neighborhoods=None, s_form="kappa"):
    """Full offline stage.  ``m_off`` is an int or a per-coarse-node sequence.

    Returns ``(basis, offline_spaces)``.
    """
    from .grid import build_neighborhoods, build_partition_of_unity

    if neighborhoods is None:
        neighborhoods = build_neighborhoods(coarse, mesh)
    if pu is None:
        pu = build_partition_of_unity(coarse, mesh, neighborhoods)
    m = np.broadcast_to(np.asarray(m_off, dtype=int), (len(neighborhoods),))
    if s_form == "kappa":
        s_weight = None
    elif s_form == "pu_gradient":
        s_weight = field.kappa * pu_gradient_weight(mesh, pu, coarse.H)
    else:
        raise ValueError(f"unknown s_form {s_form!r}")
    spaces = []
    for nb, mi in zip(neighborhoods, m):
        snap = build_snapshots(nb, field, mesh)
        spaces.append(build_offline_space(snap, nb, field, mesh, int(mi), s_weight))
    log.info("offline space built: %d regions, n_c=%d", len(spaces), int(m.sum()))
    return build_basis(spaces, pu, mesh, neighborhoods), spaces


def prolong(basis: MultiscaleBasis, z, counter=None) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[0] != basis.n_c:
        raise ValueError(f"coarse vector has length {z.shape[0]}, expected {basis.n_c}")
    tally(counter, "fine_flops", basis.matrix.nnz)
    return basis.matrix @ z


def restrict(basis: MultiscaleBasis, v, counter=None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[0] != basis.n_f:
        raise ValueError(f"fine vector has length {v.shape[0]}, expected {basis.n_f}")
    tally(counter, "fine_flops", basis.matrix.nnz)
    return basis.matrix.T @ v
