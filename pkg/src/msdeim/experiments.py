"""End-to-end experiments: function approximation, steady and parabolic
problems, and the parameter sweep.  Each returns :class:`ErrorTable` rows
over the configured numbers of DEIM points."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from dataclasses import field as dc_field

import numpy as np

from .coeff import b_exp, f1, f2, forcing, generate_permeability
from .config import RANK, RunConfig
from .fem import assemble_load, assemble_stiffness
from .gmsfem import build_multiscale_space
from .grid import build_grids, build_neighborhoods, build_partition_of_unity
from .interp import build_msdeim, build_weight
from .metrics import ErrorTable, error_energy, error_l2
from .solver import (
    MSDEIM,
    NewtonConfig,
    NewtonDivergenceError,
    backward_euler_march,
    collect_states,
    parabolic_model,
    solve_steady,
    steady_model,
)

__all__ = [
    "Setup",
    "build_setup",
    "parabolic_source",
    "approx_training_states",
    "run_fn_approx",
    "run_steady",
    "run_parabolic",
    "run_param_sweep",
    "run_experiment",
]

log = logging.getLogger(__name__)


def parabolic_source(x, y):
    return 1.0 + np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)


@dataclass(eq=False)
class Setup:
    config: RunConfig
    mesh: object
    coarse: object
    neighborhoods: tuple
    pu: object
    field: object
    basis: object
    spaces: list | None
    stiffness: object

    _weight: np.ndarray | None = dc_field(default=None, init=False, repr=False)

    @property
    def weight(self):
        if self._weight is None:
            self._weight = build_weight(self.basis, self.field, self.mesh)
        return self._weight


def build_setup(config: RunConfig, basis=None) -> Setup:
    """Grids, permeability and the offline multiscale space (built unless
    ``basis`` is supplied, e.g. reloaded from a bundle)."""
    mesh, coarse = build_grids(config.n_coarse, config.n_sub)
    nbs = build_neighborhoods(coarse, mesh)
    pu = build_partition_of_unity(coarse, mesh, nbs)
    field = generate_permeability(config.field_source, config.eta, mesh, config.kappa_min, config.seed)
    spaces = None
    if basis is None:
        basis, spaces = build_multiscale_space(mesh, coarse, field, config.m_off, pu, nbs, config.s_form)
    return Setup(config, mesh, coarse, nbs, pu, field, basis, spaces, assemble_stiffness(mesh, field.kappa))


def _newton(config):
    return NewtonConfig(tol=config.tol, max_iter=config.max_iter)


def _points(ops) -> int:
    return int(ops.points_per_region.max())


# function approximation ----------------------------------------------------------


def approx_training_states(setup: Setup) -> tuple[np.ndarray, np.ndarray]:
    """Coarse solutions of ``-div(kappa grad u) = s`` for ``s = 1`` and
    ``s = 1 + sin(p pi x) sin(q pi y)``, p, q = 1..3.

    Returns ``(Z, z_unit)``; ``Z`` has the unit-source state first.
    """
    Phi = setup.basis.matrix
    K = np.asarray((Phi.T @ setup.stiffness @ Phi).todense())
    sources = [1.0]
    for p in (1, 2, 3):
        for q in (1, 2, 3):
            sources.append(lambda x, y, p=p, q=q: 1.0 + np.sin(p * np.pi * x) * np.sin(q * np.pi * y))
    Z = np.column_stack([np.linalg.solve(K, Phi.T @ assemble_load(setup.mesh, s)) for s in sources])
    return Z, Z[:, 0].copy()


def run_fn_approx(config: RunConfig, setup: Setup | None = None) -> dict:
    """DEIM approximation of F1 and F2 at the multiscale solution of the
    unit-source elliptic problem; training over ``mu_train`` and the
    source family of :func:`approx_training_states`."""
    setup = setup or build_setup(config)
    Z, z = approx_training_states(setup)
    U = setup.basis.matrix @ z
    weight = setup.weight if config.weighted else None
    tables = {}
    for name, factory in (("F1", f1), ("F2", f2)):
        fns = [factory(mu) for mu in config.mu_train]
        test = factory(config.mu_test)
        exact = test.value(U)
        table = ErrorTable(name)
        for m in config.m_values:
            ops = build_msdeim(fns, setup.basis, setup.pu, Z, m, weight)
            if table.rows and _points(ops) <= table.rows[-1][0]:
                continue
            approx = ops.evaluate(test, z)
            table.add(_points(ops), error_l2(exact, approx), error_energy(exact, approx, setup.stiffness))
            table.operators[_points(ops)] = ops
        tables[name] = table
        log.info("%s errors: %s", name, ["%.2e" % e for e in table.l2])
    return tables


# steady problem ----------------------------------------------------------------------


def run_steady(config: RunConfig, setup: Setup | None = None) -> ErrorTable:
    """Steady problem with forcing ``g(u; mu)``: FULL solves at the training
    parameters give the snapshots; each m compares the MSDEIM solution with
    the FULL one at ``mu_test``."""
    setup = setup or build_setup(config)
    ncfg = _newton(config)
    table = ErrorTable("steady")
    states, fns = [], []
    for mu in config.mu_train:
        model = steady_model(setup.mesh, setup.basis, setup.field, forcing(mu))
        _, rep = solve_steady(model, ncfg)
        states.extend(rep.states)
        fns.append(forcing(mu))
    model = steady_model(setup.mesh, setup.basis, setup.field, forcing(config.mu_test))
    z_full, rep = solve_steady(model, ncfg)
    table.reports["full"] = rep
    U = setup.basis.matrix @ z_full
    table.fields["full"] = U
    if config.mode == "full":
        return table
    Z = collect_states(states, config.cap)
    table.info["training_states"] = Z.shape[1]
    weight = setup.weight if config.weighted else None

    def solve(ops):
        return solve_steady(model.with_mode(MSDEIM, ops), ncfg)

    _sweep_m(config, table, lambda m, w: model.build_deim(fns, Z, m, w), solve, U, setup, weight)
    return table


def _sweep_m(config, table, build, solve, U, setup, weight):
    """Shared loop over m: build operators, run, tabulate."""
    for m in config.m_values:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ops = build(m, weight)
        pts = _points(ops)
        if table.rows and pts <= table.rows[-1][0]:
            log.info("m=%s gives %d points per region, already tabulated", "rank" if m == RANK else m, pts)
            continue
        label = f"msdeim-m{pts}"
        try:
            z, rep = solve(ops)
        except NewtonDivergenceError as exc:
            log.warning("%s: %s", label, exc)
            table.reports[label] = exc.report
            table.diverged.append(label)
            table.add(pts, np.inf, np.inf)
            continue
        Ud = setup.basis.matrix @ z
        table.reports[label] = rep
        table.fields[label] = Ud
        table.operators[pts] = ops
        table.add(pts, error_l2(U, Ud), error_energy(U, Ud, setup.stiffness))
        if config.compare_unweighted and weight is not None:
            _unweighted(table, build, solve, m, pts, U, setup)


def _unweighted(table, build, solve, m, pts, U, setup):
    label = f"unweighted-m{pts}"
    ops = build(m, None)
    res = table.info.setdefault("unweighted", [])
    try:
        z, rep = solve(ops)
    except NewtonDivergenceError as exc:
        log.warning("%s diverged: %s", label, exc)
        table.reports[label] = exc.report
        table.info.setdefault("unweighted_diverged", []).append(label)
        res.append((pts, np.inf))
        return
    table.reports[label] = rep
    res.append((pts, error_energy(U, setup.basis.matrix @ z, setup.stiffness)))


# parabolic problem and parameter sweep -----------------------------------------------


def _march(model, config):
    z0 = np.zeros(model.n_c)
    _, traj, rep = backward_euler_march(model, z0, config.dt, config.T, _newton(config))
    return traj[-1], rep


def _parabolic(config: RunConfig, setup: Setup | None, label: str) -> ErrorTable:
    setup = setup or build_setup(config)
    h = parabolic_source
    table = ErrorTable(label)
    states, fns, full_reports = [], [], {}

    def model_for(mu):
        return parabolic_model(setup.mesh, setup.basis, setup.field, b_exp(mu), h,
                               target=config.target, form=config.form)

    for mu in config.mu_train:
        z, rep = _march(model_for(mu), config)
        full_reports[mu] = (z, rep)
        states.extend(rep.states)
        fns.append(b_exp(mu))
    model = model_for(config.mu_test)
    if config.mu_test in full_reports:
        z_full, rep = full_reports[config.mu_test]
    else:
        z_full, rep = _march(model, config)
    table.reports["full"] = rep
    U = setup.basis.matrix @ z_full
    table.fields["full"] = U
    if config.mode == "full":
        return table
    Z = collect_states(states, config.cap)
    table.info["training_states"] = Z.shape[1]
    weight = setup.weight if config.weighted else None
    _sweep_m(config, table, lambda m, w: model.build_deim(fns, Z, m, w),
             lambda ops: _march(model.with_mode(MSDEIM, ops), config), U, setup, weight)
    return table


def run_parabolic(config: RunConfig, setup: Setup | None = None) -> ErrorTable:
    """``u_t - div(kappa e^{mu u} grad u) = h`` to time T; errors at the final time."""
    return _parabolic(config, setup, "parabolic")


def run_param_sweep(config: RunConfig, setup: Setup | None = None) -> ErrorTable:
    """As :func:`run_parabolic`, with snapshots pooled over ``mu_train`` and
    the test parameter ``mu_test`` outside the training set."""
    return _parabolic(config, setup, "param_sweep")


def run_experiment(config: RunConfig, setup: Setup | None = None) -> list:
    """Run the configured experiment; returns a list of tables."""
    if config.experiment == "fn_approx":
        return list(run_fn_approx(config, setup).values())
    runner = {"steady": run_steady, "parabolic": run_parabolic, "param_sweep": run_param_sweep}[config.experiment]
    return [runner(config, setup)]
