"""P1 finite elements on a :class:`~msdeim.grid.FineMesh`."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .counters import tally

__all__ = [
    "LinearSolveError",
    "local_gradients",
    "assemble_stiffness",
    "assemble_mass",
    "lumped_mass",
    "assemble_load",
    "apply_dirichlet",
    "solve_linear",
    "nonlinear_apply",
    "CoefficientStiffness",
    "write_triplets",
    "read_triplets",
]

log = logging.getLogger(__name__)


class LinearSolveError(RuntimeError):
    def __init__(self, msg, residuals):
        super().__init__(msg)
        self.residuals = list(residuals)


def local_gradients(points: np.ndarray):
    """Gradients of the three barycentric functions on each triangle.

    ``points`` has shape (n_t, 3, 2).  Returns ``(grads, areas)`` with
    ``grads`` of shape (n_t, 3, 2).
    """
    d1 = points[:, 1] - points[:, 0]
    d2 = points[:, 2] - points[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    # rows of inv(B)^T are grad(lambda_1), grad(lambda_2) with B = [d1 d2]
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    g0 = -g1 - g2
    return np.stack([g0, g1, g2], axis=1), 0.5 * np.abs(det)


def _assemble(triangles, local, n):
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def _element_stiffness(points, kappa):
    grads, areas = local_gradients(points)
    return np.einsum("t,tid,tjd->tij", np.asarray(kappa, float) * areas, grads, grads)


def assemble_stiffness(mesh, kappa, elements=None) -> sp.csr_matrix:
    """Stiffness matrix for a per-element coefficient ``kappa``.

    With ``elements`` given, only those triangles are integrated (the result
    is still indexed by global node numbers).
    """
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (mesh.n_elements,))
    tri = mesh.triangles
    if elements is not None:
        tri, kappa = tri[elements], kappa[elements]
    if not np.all(kappa > 0):
        bad = int(np.flatnonzero(~(kappa > 0))[0])
        raise ValueError(f"coefficient must be positive, element {bad} has {kappa[bad]}")
    K = _element_stiffness(mesh.nodes[tri], kappa)
    return _assemble(tri, K, mesh.n_f)


def assemble_mass(mesh, weight=None, elements=None) -> sp.csr_matrix:
    tri = mesh.triangles
    w = np.ones(mesh.n_elements) if weight is None else np.broadcast_to(weight, (mesh.n_elements,))
    if elements is not None:
        tri, w = tri[elements], w[elements]
    areas = mesh.areas if elements is None else mesh.areas[elements]
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return _assemble(tri, (w * areas)[:, None, None] * ref, mesh.n_f)


def lumped_mass(mesh) -> np.ndarray:
    """Row sums of the mass matrix (vertex quadrature weights)."""
    return np.bincount(mesh.triangles.ravel(), np.repeat(mesh.areas / 3.0, 3), minlength=mesh.n_f)


def assemble_load(mesh, h) -> np.ndarray:
    """Load vector ``int h phi_i`` by vertex quadrature.  ``h`` is a callable
    ``h(x, y)``, a scalar, or nodal values."""
    if callable(h):
        vals = np.broadcast_to(h(mesh.nodes[:, 0], mesh.nodes[:, 1]), (mesh.n_f,))
    else:
        vals = np.broadcast_to(np.asarray(h, float), (mesh.n_f,))
    return lumped_mass(mesh) * vals


def apply_dirichlet(A, rhs, boundary_mask):
    """Symmetric elimination of homogeneous Dirichlet rows/columns."""
    mask = np.asarray(boundary_mask, bool)
    keep = sp.diags((~mask).astype(float))
    A = (keep @ A @ keep + sp.diags(mask.astype(float))).tocsr()
    A.eliminate_zeros()
    rhs = np.where(mask, 0.0, rhs)
    return A, rhs


def solve_linear(A, rhs, tol=1e-10, method="cg", maxiter=None):
    """Solve an SPD system.

    ``method="cg"`` is conjugate gradients on the Jacobi-scaled system
    ``S A S y = S b``, ``S = diag(A)^{-1/2}``; ``tol`` bounds the relative
    residual of that system (the preconditioned residual).  The plain
    residual of a high-contrast system has a round-off floor far above
    1e-10, the scaled one does not.  Failure raises
    :class:`LinearSolveError` with the residual history.
    ``method="direct"`` uses a sparse LU factorization.
    """
    A = sp.csr_matrix(A)
    rhs = np.asarray(rhs, dtype=float)
    if method == "direct":
        return spla.splu(A.tocsc()).solve(rhs)
    if method != "cg":
        raise ValueError(f"unknown method {method!r}")

    d = A.diagonal()
    if np.any(d <= 0):
        raise ValueError("matrix diagonal must be positive")
    s = 1.0 / np.sqrt(d)
    As = sp.diags(s) @ A @ sp.diags(s)
    bs = s * rhs
    bnorm = np.linalg.norm(bs)
    if bnorm == 0.0:
        return np.zeros_like(rhs)
    history = []

    def record(yk):
        history.append(np.linalg.norm(bs - As @ yk) / bnorm)

    maxiter = maxiter or 10 * A.shape[0]
    y = np.zeros_like(rhs)
    # the recursive CG residual can drift from the true one; restart on it
    for _ in range(4):
        y, info = spla.cg(As, bs, x0=y, rtol=tol, atol=0.0, maxiter=maxiter, callback=record)
        res = np.linalg.norm(bs - As @ y) / bnorm
        if info != 0 or res <= tol:
            break
    if info != 0 or res > tol:
        raise LinearSolveError(
            f"CG stopped after {len(history)} iterations with relative residual {res:.3e}", history
        )
    return s * y


def nonlinear_apply(A, U, b, counter=None):
    """``A (b(U) * U)``, i.e. ``A Lambda_1(U) U`` with ``Lambda_1 = diag(b(u_j))``."""
    U = np.asarray(U, dtype=float)
    vals = b(U)
    tally(counter, "nonlinear_evals", U.size)
    tally(counter, "fine_flops", A.nnz + U.size)
    return A @ (vals * U)


class CoefficientStiffness:
    """Stiffness with a nodal coefficient ``c`` multiplying ``kappa``::

        A(c) = sum_e kappa_e cbar_e K_e,   cbar_e = mean of c over the vertices of e

    so ``A(b(U)) U`` discretizes ``-div(kappa b(u) grad u)``.  ``A`` is linear
    in ``c`` and ``c`` may have any sign (DEIM modes do).
    """

    def __init__(self, mesh, kappa):
        kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (mesh.n_elements,))
        if not np.all(kappa > 0):
            raise ValueError("coefficient must be positive")
        self.tri = mesh.triangles
        self.n = mesh.n_f
        self.K = _element_stiffness(mesh.nodes[self.tri], kappa)
        self._rows = np.repeat(self.tri, 3, axis=1).ravel()
        self._cols = np.tile(self.tri, (1, 3)).ravel()

    def _mean(self, c):
        c = np.asarray(c, dtype=float)
        if c.shape != (self.n,):
            raise ValueError(f"nodal coefficient has shape {c.shape}, expected ({self.n},)")
        return c[self.tri].mean(axis=1)

    def __call__(self, c) -> sp.csr_matrix:
        cbar = self._mean(c)
        on = np.flatnonzero(cbar)  # DEIM modes live on one region
        vals = self.K[on] * cbar[on, None, None]
        rows = np.repeat(self.tri[on], 3, axis=1).ravel()
        cols = np.tile(self.tri[on], (1, 3)).ravel()
        return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(self.n, self.n))

    def apply(self, c, u) -> np.ndarray:
        """``A(c) u`` without forming the matrix."""
        ue = np.asarray(u, dtype=float)[self.tri]
        loc = np.einsum("tij,tj->ti", self.K, ue) * self._mean(c)[:, None]
        return np.bincount(self.tri.ravel(), loc.ravel(), minlength=self.n)

    def jacobian(self, c, dc, u) -> sp.csr_matrix:
        """Derivative of ``u -> A(c(u)) u`` given nodal ``c`` and ``dc = c'(u)``."""
        ue = np.asarray(u, dtype=float)[self.tri]
        Ku = np.einsum("tij,tj->ti", self.K, ue)  # (n_t, 3)
        dce = np.asarray(dc, dtype=float)[self.tri] / 3.0
        G = Ku[:, :, None] * dce[:, None, :]
        return self(c) + sp.csr_matrix((G.ravel(), (self._rows, self._cols)), shape=(self.n, self.n))


def write_triplets(path, M) -> None:
    """Plain-text dump: header ``rows cols nnz`` then ``i j v`` per line."""
    M = sp.coo_matrix(np.atleast_2d(M) if not sp.issparse(M) else M)
    with open(path, "w") as fh:
        fh.write(f"{M.shape[0]} {M.shape[1]} {M.nnz}\n")
        for i, j, v in zip(M.row, M.col, M.data):
            fh.write(f"{i} {j} {v:.17g}\n")


def read_triplets(path) -> sp.csr_matrix:
    lines = Path(path).read_text().splitlines()
    rows, cols, nnz = (int(t) for t in lines[0].split())
    if nnz == 0:
        return sp.csr_matrix((rows, cols))
    data = np.loadtxt(lines[1:], ndmin=2)
    if data.shape[0] != nnz:
        raise ValueError(f"{path}: header says {nnz} entries, found {data.shape[0]}")
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(rows, cols))
