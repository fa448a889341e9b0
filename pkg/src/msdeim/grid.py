"""Structured fine/coarse grids on the unit square, coarse neighborhoods and
the bilinear partition of unity subordinated to them.

Fine nodes are numbered row-major, ``j = iy * (N + 1) + ix`` with
``N = n_coarse * n_sub`` fine squares per side.  Every fine square is split
along its lower-left to upper-right diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "FineMesh",
    "CoarseGrid",
    "Neighborhood",
    "PartitionOfUnity",
    "build_grids",
    "build_neighborhoods",
    "build_partition_of_unity",
]


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FineMesh:
    n_coarse: int
    n_sub: int
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_mask: np.ndarray

    @property
    def n_side(self) -> int:
        """Fine squares per side."""
        return self.n_coarse * self.n_sub

    @property
    def h(self) -> float:
        return 1.0 / self.n_side

    @property
    def n_f(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return _frozen(0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]))

    @cached_property
    def centroids(self) -> np.ndarray:
        return _frozen(self.nodes[self.triangles].mean(axis=1))

    @cached_property
    def interior(self) -> np.ndarray:
        return _frozen(np.flatnonzero(~self.boundary_mask))

    def node_index(self, ix, iy):
        return np.asarray(iy) * (self.n_side + 1) + np.asarray(ix)


@dataclass(frozen=True, eq=False)
class CoarseGrid:
    n_coarse: int
    n_sub: int
    coarse_nodes: np.ndarray
    """(n_nodes, 2) coordinates, row-major like the fine grid."""
    fine_index: np.ndarray
    """Fine node index of every coarse node."""
    blocks: np.ndarray
    """(n_blocks, 4) coarse node ids of every block (ll, lr, ur, ul)."""
    node_blocks: tuple
    """For every coarse node, the ids of its adjacent blocks."""

    @property
    def n_nodes(self) -> int:
        return self.coarse_nodes.shape[0]

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def H(self) -> float:
        return 1.0 / self.n_coarse


@dataclass(frozen=True, eq=False)
class Neighborhood:
    """Coarse neighborhood ``omega_i``: the union of blocks around coarse node i."""

    node: int
    fine_nodes: np.ndarray
    """Sorted global indices of the fine nodes in the closed region."""
    elements: np.ndarray
    """Global ids of the fine triangles inside the region."""
    boundary_local: np.ndarray
    """Local indices of fine nodes on the region boundary."""
    interior_local: np.ndarray
    box: tuple
    """Fine index box ``(ix0, ix1, iy0, iy1)``, inclusive."""
    global_to_local: dict = field(repr=False)

    @property
    def size(self) -> int:
        return self.fine_nodes.size

    def local(self, global_ids):
        return np.array([self.global_to_local[int(g)] for g in np.atleast_1d(global_ids)])


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    """Nodal values ``chi_i(x_j)``; row ``i`` of ``chi`` is the diagonal of D_i."""

    chi: sp.csr_matrix
    local_values: tuple
    """``local_values[i]`` is ``chi_i`` on ``neighborhoods[i].fine_nodes``."""

    @property
    def n_regions(self) -> int:
        return self.chi.shape[0]

    def D(self, i: int) -> sp.dia_matrix:
        return sp.diags(self.chi.getrow(i).toarray().ravel())

    def total(self) -> np.ndarray:
        return np.asarray(self.chi.sum(axis=0)).ravel()


def build_grids(n_coarse: int, n_sub: int) -> tuple[FineMesh, CoarseGrid]:
    """Uniform triangulation of [0,1]^2 with ``n_coarse`` blocks per side,
    each block made of ``n_sub x n_sub`` fine squares."""
    if int(n_coarse) != n_coarse or int(n_sub) != n_sub:
        raise ValueError("grid sizes must be integers")
    n_coarse, n_sub = int(n_coarse), int(n_sub)
    if n_coarse < 2 or n_sub < 2:
        raise ValueError(f"need n_coarse >= 2 and n_sub >= 2, got ({n_coarse}, {n_sub})")

    N = n_coarse * n_sub
    t = np.linspace(0.0, 1.0, N + 1)
    X, Y = np.meshgrid(t, t)  # Y varies along rows -> row-major in (y, x)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    iy, ix = np.divmod(np.arange((N + 1) ** 2), N + 1)
    boundary = (ix == 0) | (ix == N) | (iy == 0) | (iy == N)

    sy, sx = np.divmod(np.arange(N * N), N)
    a = sy * (N + 1) + sx
    b = a + 1
    c = a + N + 2
    d = a + N + 1
    tri = np.empty((2 * N * N, 3), dtype=np.int64)
    tri[0::2] = np.column_stack([a, b, c])
    tri[1::2] = np.column_stack([a, c, d])

    mesh = FineMesh(n_coarse, n_sub, _frozen(nodes), _frozen(tri), _frozen(boundary))

    Nc = n_coarse
    T = np.linspace(0.0, 1.0, Nc + 1)
    CX, CY = np.meshgrid(T, T)
    coarse_nodes = np.column_stack([CX.ravel(), CY.ravel()])
    cj, ci = np.divmod(np.arange((Nc + 1) ** 2), Nc + 1)
    fine_index = (cj * n_sub) * (N + 1) + ci * n_sub

    by, bx = np.divmod(np.arange(Nc * Nc), Nc)
    ll = by * (Nc + 1) + bx
    blocks = np.column_stack([ll, ll + 1, ll + Nc + 2, ll + Nc + 1])
    node_blocks = [[] for _ in range((Nc + 1) ** 2)]
    for k, corners in enumerate(blocks):
        for c_ in corners:
            node_blocks[c_].append(k)
    coarse = CoarseGrid(
        n_coarse,
        n_sub,
        _frozen(coarse_nodes),
        _frozen(fine_index),
        _frozen(blocks),
        tuple(_frozen(np.array(sorted(v))) for v in node_blocks),
    )
    return mesh, coarse


def build_neighborhoods(coarse: CoarseGrid, mesh: FineMesh) -> list[Neighborhood]:
    N, ns, Nc = mesh.n_side, mesh.n_sub, coarse.n_coarse
    out = []
    for i in range(coarse.n_nodes):
        J, I = divmod(i, Nc + 1)
        ix0, ix1 = max(I - 1, 0) * ns, min(I + 1, Nc) * ns
        iy0, iy1 = max(J - 1, 0) * ns, min(J + 1, Nc) * ns
        gy, gx = np.meshgrid(np.arange(iy0, iy1 + 1), np.arange(ix0, ix1 + 1), indexing="ij")
        fine = (gy * (N + 1) + gx).ravel()  # already sorted
        on_bnd = ((gx == ix0) | (gx == ix1) | (gy == iy0) | (gy == iy1)).ravel()

        sy, sx = np.meshgrid(np.arange(iy0, iy1), np.arange(ix0, ix1), indexing="ij")
        sq = (sy * N + sx).ravel()
        elements = np.column_stack([2 * sq, 2 * sq + 1]).ravel()

        out.append(
            Neighborhood(
                node=i,
                fine_nodes=_frozen(fine),
                elements=_frozen(elements),
                boundary_local=_frozen(np.flatnonzero(on_bnd)),
                interior_local=_frozen(np.flatnonzero(~on_bnd)),
                box=(ix0, ix1, iy0, iy1),
                global_to_local={int(g): k for k, g in enumerate(fine)},
            )
        )
    return out


def _hat(x, center, H):
    return np.clip(1.0 - np.abs(x - center) / H, 0.0, None)


def build_partition_of_unity(
    coarse: CoarseGrid, mesh: FineMesh, neighborhoods: list[Neighborhood] | None = None
) -> PartitionOfUnity:
    """Bilinear coarse hat functions sampled at the fine nodes."""
    if neighborhoods is None:
        neighborhoods = build_neighborhoods(coarse, mesh)
    H = coarse.H
    rows, cols, vals, local = [], [], [], []
    for nb in neighborhoods:
        cx, cy = coarse.coarse_nodes[nb.node]
        p = mesh.nodes[nb.fine_nodes]
        chi = _hat(p[:, 0], cx, H) * _hat(p[:, 1], cy, H)
        local.append(_frozen(chi))
        nz = chi != 0.0
        rows.append(np.full(nz.sum(), nb.node))
        cols.append(nb.fine_nodes[nz])
        vals.append(chi[nz])
    chi = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(coarse.n_nodes, mesh.n_f),
    )
    return PartitionOfUnity(chi, tuple(local))
