"""Weighted POD, greedy DEIM point selection and the region-wise (multiscale)
DEIM approximation ``f(Phi z) ~ sum_i D_i Psi_i (P_i^T Psi_i)^{-1} P_i^T f``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .counters import tally
from .fem import local_gradients

__all__ = [
    "PodBasis",
    "LocalDeim",
    "MultiscaleDeim",
    "DeimWarning",
    "gradient_energy_weight",
    "build_weight",
    "weighted_pod",
    "deim_select",
    "build_local_deim",
    "build_msdeim",
    "apply_msdeim",
    "apply_msdeim_projected",
    "local_snapshots",
]

log = logging.getLogger(__name__)

POD_RANK_TOL = 1e-13
"""Singular values below this fraction of the largest are treated as zero."""
COND_LIMIT = 1e12
WEIGHT_FLOOR = 1e-12


class DeimWarning(UserWarning):
    pass


# weights ---------------------------------------------------------------------


def gradient_energy_weight(mesh, kappa, columns, floor=WEIGHT_FLOOR) -> np.ndarray:
    """Nodal (lumped) weight of ``sum_c kappa |grad phi_c|^2`` over the given
    fine-grid functions (columns of a sparse or dense ``n_f x k`` matrix).

    Entries are floored at ``floor * max`` so the weight stays positive.
    """
    grads, areas = local_gradients(mesh.nodes[mesh.triangles])
    cols = sp.csc_matrix(columns)
    dens = np.zeros(mesh.n_elements)
    for k in range(cols.shape[1]):
        v = cols.getcol(k).toarray().ravel()[mesh.triangles]
        g = np.einsum("ti,tid->td", v, grads)
        dens += (g**2).sum(axis=1)
    dens *= np.broadcast_to(kappa, dens.shape)
    w = np.bincount(mesh.triangles.ravel(), np.repeat(dens * areas / 3.0, 3), minlength=mesh.n_f)
    return np.maximum(w, floor * w.max())


def build_weight(basis, field, mesh) -> np.ndarray:
    """POD weight from the lowest-mode basis function of every coarse node."""
    first = basis.first_columns
    if np.any(first < 0):
        raise ValueError("every coarse node needs a lowest-mode basis function")
    return gradient_energy_weight(mesh, field.kappa, basis.matrix[:, first])


# POD / DEIM ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PodBasis:
    modes: np.ndarray
    """(n, m), orthonormal in the weighted inner product."""
    eigenvalues: np.ndarray
    """All eigenvalues of ``F^T W F``, descending (squared weighted singular values)."""
    rank: int
    weight: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.modes.shape[1]

    def project(self, f):
        """Orthogonal projection onto the span, in the weighted inner product."""
        f = np.asarray(f, dtype=float)
        if self.weight is None:
            return self.modes @ (self.modes.T @ f)
        w = self.weight[:, None] if f.ndim == 2 else self.weight
        return self.modes @ (self.modes.T @ (w * f))


def weighted_pod(F, weight=None, m=None, energy_tol=None, rank_tol=POD_RANK_TOL) -> PodBasis:
    """POD modes of the snapshot columns of ``F`` in the inner product
    ``diag(weight)`` (Euclidean when ``weight`` is None).

    The modes are ``F z_j / sqrt(lambda_j)`` for the dominant eigenpairs of
    ``F^T W F z = lambda z``; they are computed from an SVD of
    ``W^{1/2} F``.  Give either ``m`` or ``energy_tol``.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.ndim != 2 or F.shape[0] == 0:
        raise ValueError("snapshot matrix must be 2-D and nonempty")
    if not np.any(F):
        raise ValueError("all snapshots are zero")
    if weight is not None:
        weight = np.asarray(weight, dtype=float)
        if weight.shape != (F.shape[0],) or np.any(weight <= 0):
            raise ValueError("weight must be a positive vector matching the snapshot length")
        sw = np.sqrt(weight)[:, None]
    else:
        sw = 1.0
    _, s, Vt = la.svd(sw * F, full_matrices=False, lapack_driver="gesvd")
    lam = s**2
    rank = int(np.sum(s > rank_tol * s[0]))

    if energy_tol is not None:
        frac = np.cumsum(lam) / lam.sum()
        m = int(np.searchsorted(frac, 1.0 - energy_tol) + 1)
    if m is None:
        raise ValueError("give m or energy_tol")
    if m < 1:
        raise ValueError("m must be positive")
    if m > rank:
        warnings.warn(f"requested {m} POD modes but snapshot rank is {rank}; truncating", DeimWarning, stacklevel=2)
        m = rank
    modes = F @ (Vt[:m].T / s[:m])
    return PodBasis(modes, lam, rank, weight)


def deim_select(modes) -> np.ndarray:
    """Greedy DEIM interpolation indices for the columns of ``modes``.

    Ties in the argmax go to the lowest index.  If a residual vanishes before
    all columns are used, selection stops there with a warning.
    """
    U = np.asarray(modes, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if U.shape[1] < 1:
        raise ValueError("need at least one mode")
    idx = [int(np.argmax(np.abs(U[:, 0])))]
    if U[idx[0], 0] == 0.0:
        raise ValueError("first mode is identically zero")
    for ell in range(1, U.shape[1]):
        P = np.asarray(idx)
        d = la.solve(U[P, :ell], U[P, ell])
        r = U[:, ell] - U[:, :ell] @ d
        k = int(np.argmax(np.abs(r)))
        if np.abs(r[k]) <= 1e-14 * np.abs(U[:, ell]).max():
            warnings.warn(f"DEIM residual vanished at mode {ell + 1}; keeping {ell} points", DeimWarning, stacklevel=2)
            break
        idx.append(k)
    return np.asarray(idx, dtype=int)


# region-wise operators ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LocalDeim:
    region: int
    nodes: np.ndarray
    """Global fine indices of omega_i (local numbering = position)."""
    cols: np.ndarray
    """I^{omega_i}: coarse columns that are nonzero in omega_i."""
    pod: PodBasis
    indices: np.ndarray
    """Local interpolation indices."""
    lu: tuple
    """LU factors of ``P^T Psi``."""
    cond: float
    interp: np.ndarray
    """``Psi (P^T Psi)^{-1}`` (n_local, m)."""
    combine: np.ndarray
    """``D_i Psi (P^T Psi)^{-1}`` (n_local, m)."""
    proj_rows: np.ndarray
    projected: np.ndarray
    """Rows ``proj_rows`` of ``Phi^T L D_i Psi (P^T Psi)^{-1}``."""
    sample_rows: np.ndarray
    """``Phi[indices, cols]`` (m, |cols|): reconstructs u at the points."""
    tensors: np.ndarray | None = None
    """Optional ``Phi^T A diag(combine[:, l]) Phi`` blocks, shape (m, |proj_rows|, |cols|)."""

    @property
    def m(self) -> int:
        return self.indices.size

    @property
    def global_indices(self) -> np.ndarray:
        return self.nodes[self.indices]

    def coefficients(self, f_at_points):
        """``d = (P^T Psi)^{-1} P^T f``."""
        return la.lu_solve(self.lu, f_at_points)

    def reconstruct(self, f_local):
        """Plain DEIM interpolant ``Psi (P^T Psi)^{-1} P^T f`` of a local vector."""
        return self.interp @ f_local[self.indices]

    def inverse_norm(self) -> float:
        """``||(P^T Psi)^{-1}||_2``."""
        PtPsi = self.pod.modes[self.indices]
        return 1.0 / la.svdvals(PtPsi)[-1]


def local_snapshots(fns, Phi_loc, Z_loc) -> np.ndarray:
    """Columns ``f(Phi_loc z)`` for every function and every training state."""
    U = Phi_loc @ Z_loc
    return np.column_stack([fn.value(U) for fn in fns]) if len(fns) > 1 else fns[0].value(U)


def _as_coef_op(op):
    """A sparse matrix ``A`` stands for the nodal product ``c -> A diag(c)``."""
    if callable(op):
        return op
    return lambda c: op @ sp.diags(c)


def build_local_deim(fns, Phi_loc, Z_loc, weight=None, m=1, *, region=0, nodes=None, cols=None,
                     chi=None, Phi=None, left=None, coef_op=None) -> LocalDeim:
    """POD + DEIM for ``tau -> f(Phi_loc tau)`` on one region.

    ``fns`` is a nonlinear function or a sequence of them (e.g. one per
    training parameter); ``Z_loc`` holds training states in the local coarse
    coordinates, one per column.  ``Phi`` (global basis matrix) and ``left``
    (fine operator applied before projection, identity if None) are needed
    for the projected combine matrix.  ``coef_op`` (``c -> A(c)``, or a
    matrix ``A`` meaning ``A diag(c)``) additionally builds the per-mode
    Galerkin blocks ``Phi^T A(c_l) Phi_I`` used when the interpolated function
    is a diffusion coefficient.
    """
    fns = list(fns) if isinstance(fns, (list, tuple)) else [fns]
    Phi_loc = np.asarray(Phi_loc, dtype=float)
    n_loc = Phi_loc.shape[0]
    nodes = np.arange(n_loc) if nodes is None else np.asarray(nodes)
    cols = np.arange(Phi_loc.shape[1]) if cols is None else np.asarray(cols)
    chi = np.ones(n_loc) if chi is None else np.asarray(chi)
    Z_loc = np.atleast_2d(np.asarray(Z_loc, dtype=float))
    if Z_loc.shape[0] != Phi_loc.shape[1]:
        Z_loc = Z_loc.T

    F = local_snapshots(fns, Phi_loc, Z_loc)
    pod = weighted_pod(F, weight, m=min(m, F.shape[1]))
    while True:
        idx = deim_select(pod.modes)
        if idx.size < pod.m:
            pod = PodBasis(pod.modes[:, : idx.size], pod.eigenvalues, pod.rank, pod.weight)
        PtPsi = pod.modes[idx]
        cond = np.linalg.cond(PtPsi)
        if cond <= COND_LIMIT or pod.m == 1:
            break
        warnings.warn(f"region {region}: cond(P^T Psi)={cond:.2e}; dropping mode {pod.m}", DeimWarning, stacklevel=2)
        pod = PodBasis(pod.modes[:, :-1], pod.eigenvalues, pod.rank, pod.weight)

    lu = la.lu_factor(PtPsi)
    interp = la.solve(PtPsi.T, pod.modes.T).T
    combine = chi[:, None] * interp

    tensors = None
    if Phi is None:
        proj_rows = cols
        projected = Phi_loc.T @ combine
    else:
        k = combine.shape[1]
        E = sp.csr_matrix((combine.ravel(), (np.repeat(nodes, k), np.tile(np.arange(k), n_loc))),
                          shape=(Phi.shape[0], k))
        LE = E if left is None else sp.csr_matrix(left @ E)
        full = np.asarray((Phi.T @ LE).todense())
        used = np.any(full != 0.0, axis=1)
        if coef_op is not None:
            op = _as_coef_op(coef_op)
            PhiI = Phi[:, cols].tocsr()
            blocks = []
            for ell in range(k):
                c = np.zeros(Phi.shape[0])
                c[nodes] = combine[:, ell]
                blocks.append(np.asarray((Phi.T @ (op(c) @ PhiI)).todense()))
            blocks = np.stack(blocks)
            used |= np.any(blocks != 0.0, axis=(0, 2))
        proj_rows = np.flatnonzero(used)
        projected = full[proj_rows]
        if coef_op is not None:
            tensors = blocks[:, proj_rows]

    return LocalDeim(
        region=region,
        nodes=nodes,
        cols=cols,
        pod=pod,
        indices=idx,
        lu=lu,
        cond=float(cond),
        interp=interp,
        combine=combine,
        proj_rows=proj_rows,
        projected=projected,
        sample_rows=Phi_loc[idx],
        tensors=tensors,
    )


class MultiscaleDeim:
    """Region-wise DEIM operators glued by the partition of unity.

    The online methods touch only ``m_i`` fine values per region and
    coarse-sized dense blocks; nothing scales with the fine dimension except
    :meth:`evaluate`, which returns a fine vector by construction.
    """

    def __init__(self, regions, n_f, n_c):
        self.regions = list(regions)
        self.n_f = n_f
        self.n_c = n_c

    @property
    def points_per_region(self) -> np.ndarray:
        return np.array([r.m for r in self.regions])

    @property
    def total_points(self) -> int:
        return int(self.points_per_region.sum())

    def _check(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n_c,):
            raise ValueError(f"coarse vector has shape {z.shape}, expected ({self.n_c},)")
        return z

    def point_values(self, z, counter=None):
        """Downscaled state at the interpolation points of every region."""
        z = self._check(z)
        out = []
        for r in self.regions:
            out.append(r.sample_rows @ z[r.cols])
            tally(counter, "coarse_flops", r.sample_rows.size)
        return out

    def sample(self, fn, z, counter=None):
        """``f`` at the interpolation points; the only nonlinear evaluations."""
        vals = []
        for u in self.point_values(z, counter):
            vals.append(fn.value(u))
            tally(counter, "nonlinear_evals", u.size)
        return vals

    def evaluate(self, fn, z, counter=None):
        out = np.zeros(self.n_f)
        for r, f in zip(self.regions, self.sample(fn, z, counter)):
            out[r.nodes] += r.combine @ f
        return out

    def evaluate_projected(self, fn, z, counter=None):
        out = np.zeros(self.n_c)
        for r, f in zip(self.regions, self.sample(fn, z, counter)):
            out[r.proj_rows] += r.projected @ f
            tally(counter, "coarse_flops", r.projected.size)
        return out

    def jacobian_projected(self, fn, z, counter=None):
        """Derivative of :meth:`evaluate_projected` with respect to ``z``."""
        J = np.zeros((self.n_c, self.n_c))
        for r, u in zip(self.regions, self.point_values(z, counter)):
            dfu = fn.derivative(u)
            tally(counter, "nonlinear_evals", u.size)
            J[np.ix_(r.proj_rows, r.cols)] += r.projected @ (dfu[:, None] * r.sample_rows)
        return J

    def coefficient_action(self, fn, z, counter=None):
        """Interpolated diffusion coefficient inside the stiffness form:
        ``Phi^T A diag(b~(Phi z)) Phi z`` and its Jacobian, using the
        per-mode blocks.  Requires operators built with ``coef_op``."""
        z = self._check(z)
        F = np.zeros(self.n_c)
        J = np.zeros((self.n_c, self.n_c))
        for r, u in zip(self.regions, self.point_values(z, counter)):
            if r.tensors is None:
                raise ValueError("operators were built without stiffness blocks")
            b, db = fn.value(u), fn.derivative(u)
            tally(counter, "nonlinear_evals", u.size)
            zi = z[r.cols]
            Tz = r.tensors @ zi  # (m, |rows|)
            F[r.proj_rows] += b @ Tz
            Jb = np.tensordot(b, r.tensors, axes=1)
            Jb += Tz.T @ (db[:, None] * r.sample_rows)
            J[np.ix_(r.proj_rows, r.cols)] += Jb
            tally(counter, "coarse_flops", r.tensors.size)
        return F, J


def build_msdeim(fns, basis, pu, Z, m, weight=None, left=None, coef_op=None, cap=None) -> MultiscaleDeim:
    """Build a :class:`MultiscaleDeim` from global training states.

    ``Z`` is ``(n_c, n_states)``.  ``m`` is the requested number of points
    per region (an int or a per-region sequence); regions whose snapshot rank
    is smaller keep fewer.  ``cap`` keeps only the last ``cap`` states.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] != basis.n_c:
        Z = Z.T
    if cap is not None and Z.shape[1] > cap:
        Z = Z[:, -cap:]
    ms = np.broadcast_to(np.asarray(m, dtype=int), (len(basis.neighborhoods),))
    Phi = basis.matrix
    regions = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeimWarning)
        for nb, mi in zip(basis.neighborhoods, ms):
            cols = basis.index_sets[nb.node]
            Phi_loc = Phi[nb.fine_nodes][:, cols].toarray()
            w = None if weight is None else weight[nb.fine_nodes]
            regions.append(
                build_local_deim(
                    fns, Phi_loc, Z[cols], w, int(mi), region=nb.node, nodes=nb.fine_nodes, cols=cols,
                    chi=pu.local_values[nb.node], Phi=Phi, left=left, coef_op=coef_op,
                )
            )
    out = MultiscaleDeim(regions, basis.n_f, basis.n_c)
    log.info("multiscale DEIM: %d regions, %d points", len(regions), out.total_points)
    return out


def apply_msdeim(ops: MultiscaleDeim, fn, z, counter=None) -> np.ndarray:
    """Fine-grid approximation ``sum_i D_i Psi_i d_i(z)`` of ``fn(Phi z)``."""
    return ops.evaluate(fn, z, counter)


def apply_msdeim_projected(ops: MultiscaleDeim, fn, z, counter=None) -> np.ndarray:
    """Coarse vector ``Phi^T L f~(Phi z)`` without forming any fine vector."""
    return ops.evaluate_projected(fn, z, counter)
