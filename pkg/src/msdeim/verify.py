"""Quick self-check of the core identities on a small grid (``msdeim verify``)."""
from __future__ import annotations

import warnings

import numpy as np

from .coeff import b_exp, forcing, generate_permeability
from .gmsfem import build_multiscale_space, prolong, restrict
from .grid import build_grids, build_neighborhoods, build_partition_of_unity
from .interp import DeimWarning, build_msdeim, weighted_pod
from .solver import (
    _fd_jacobian,
    jacobian_reduced,
    jacobian_steady,
    parabolic_model,
    residual_reduced,
    residual_steady,
    steady_model,
)
from .counters import OpCounter

__all__ = ["run_checks"]


def run_checks(seed: int = 0, n_coarse: int = 3, n_sub: int = 4) -> list:
    """Returns ``[(name, passed, detail), ...]``."""
    rng = np.random.default_rng(seed)
    mesh, coarse = build_grids(n_coarse, n_sub)
    nbs = build_neighborhoods(coarse, mesh)
    pu = build_partition_of_unity(coarse, mesh, nbs)
    field = generate_permeability("case1", 4.0, mesh)
    basis, _ = build_multiscale_space(mesh, coarse, field, 3, pu, nbs)
    out = []

    err = float(np.abs(pu.total() - 1.0).max())
    out.append(("partition of unity", err <= 1e-12, f"max |sum chi - 1| = {err:.2e}"))

    v = rng.standard_normal(basis.n_f)
    z = rng.standard_normal(basis.n_c)
    gap = abs(prolong(basis, z) @ v - z @ restrict(basis, v))
    out.append(("prolong/restrict adjoint", gap <= 1e-10 * (1 + abs(z @ restrict(basis, v))), f"gap {gap:.2e}"))

    Z = rng.uniform(0.0, 0.1, (basis.n_c, 25))
    b = b_exp(5.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeimWarning)
        ops = build_msdeim(b, basis, pu, Z, 3)
    worst = 0.0
    for r in ops.regions:
        g = r.pod.modes @ rng.standard_normal(r.m)
        worst = max(worst, float(np.abs(r.reconstruct(g) - g).max() / np.abs(g).max()))
    out.append(("DEIM exactness on span(Psi)", worst <= 1e-10, f"max rel error {worst:.2e}"))

    ok, slack = True, 0.0
    for r in ops.regions:
        Q, _ = np.linalg.qr(r.pod.modes)
        f = rng.standard_normal(r.nodes.size)
        lhs = np.linalg.norm(f - r.reconstruct(f))
        rhs = r.inverse_norm() * np.linalg.norm(f - Q @ (Q.T @ f)) if r.pod.weight is None else np.inf
        ok &= bool(lhs <= rhs * (1 + 1e-8))
        slack = max(slack, lhs / rhs if rhs > 0 else 0.0)
    out.append(("DEIM error bound", ok, f"max lhs/rhs {slack:.3f}"))

    F = rng.standard_normal((40, 12)) @ np.diag(0.5 ** np.arange(12)) @ rng.standard_normal((12, 30))
    pod = weighted_pod(F, m=4)
    resid = np.linalg.norm(F - pod.project(F)) ** 2
    tail = float(pod.eigenvalues[4:].sum())
    out.append(("POD truncation = eigenvalue tail", abs(resid - tail) <= 1e-8 * max(tail, 1e-300),
                f"{resid:.6e} vs {tail:.6e}"))

    h = lambda x, y: 1.0 + np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)  # noqa: E731
    model = parabolic_model(mesh, basis, field, b, h)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeimWarning)
        deim_model = model.with_mode("msdeim", model.build_deim(b, Z, 3))
    g = forcing(0.7)
    steady = steady_model(mesh, basis, field, g)
    for name, md, res, jac in (
        ("parabolic FULL", model, lambda m, v: residual_reduced(m, v, 0 * v, 0.01),
         lambda m, v: jacobian_reduced(m, v, 0.01)),
        ("parabolic MSDEIM", deim_model, lambda m, v: residual_reduced(m, v, 0 * v, 0.01),
         lambda m, v: jacobian_reduced(m, v, 0.01)),
        ("steady FULL", steady, residual_steady, jacobian_steady),
    ):
        zz = rng.uniform(0.0, 0.05, basis.n_c)
        J = jac(md, zz)
        Jfd = _fd_jacobian(lambda v: res(md, v), zz)
        e = float(np.abs(J - Jfd).max() / np.abs(J).max())
        out.append((f"Jacobian vs finite differences ({name})", e <= 1e-5, f"rel error {e:.2e}"))

    c = OpCounter()
    residual_reduced(deim_model, Z[:, 0], Z[:, 0], 0.01, c)
    want = deim_model.deim.total_points
    out.append(("online evaluation count", c["nonlinear_evals"] == want,
                f"{c['nonlinear_evals']} evaluations, sum m_i = {want}"))
    return out
