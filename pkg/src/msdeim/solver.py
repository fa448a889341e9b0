"""Coarse (GMsFEM) Newton solvers with full or multiscale-DEIM nonlinear terms.

Parabolic problem, backward Euler in coarse coordinates::

    R(z) = z - z_n + dt M~^{-1} (F~(z) - H~),   F~(z) = Phi^T A(b(Phi z)) Phi z

where ``A(c)`` is the stiffness matrix of the coefficient ``kappa c``.

Steady problem ``div(kappa grad u) = g(u)`` with homogeneous Dirichlet data::

    R(z) = Phi^T A Phi z + Phi^T M_L g(Phi z)

where ``M_L`` is the lumped mass.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .coeff import NonlinearFn
from .counters import OpCounter
from .fem import CoefficientStiffness, assemble_load, assemble_mass, assemble_stiffness, lumped_mass

__all__ = [
    "NewtonConfig",
    "SolveReport",
    "NewtonDivergenceError",
    "ReducedModel",
    "state_product",
    "collect_states",
    "parabolic_model",
    "steady_model",
    "residual_reduced",
    "jacobian_reduced",
    "residual_steady",
    "jacobian_steady",
    "newton_solve",
    "solve_steady",
    "backward_euler_march",
]

log = logging.getLogger(__name__)

FULL, MSDEIM = "full", "msdeim"


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-8
    max_iter: int = 30
    fd_check: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class SolveReport:
    iterations: list = field(default_factory=list)
    """Newton iterations per solve (time step)."""
    residual_norms: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    eval_counts: list = field(default_factory=list)
    """Cumulative nonlinear evaluations after each solve."""
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    """Every Newton iterate visited (coarse vectors), for snapshot training."""
    converged: bool = True
    wall_time: float = 0.0
    counter: OpCounter = field(default_factory=OpCounter)

    @property
    def total_evals(self) -> int:
        return self.counter["nonlinear_evals"]

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,newton_iters,final_step_norm,eval_count\n")
            for t, k, s, e in zip(self.times, self.iterations, self.step_norms, self.eval_counts):
                last = s[-1] if s else float("nan")
                fh.write(f"{t:.17g},{k},{last:.17g},{e}\n")


class NewtonDivergenceError(RuntimeError):
    def __init__(self, msg, report, trajectory=None):
        super().__init__(msg)
        self.report = report
        self.trajectory = trajectory


def state_product(fn: NonlinearFn) -> NonlinearFn:
    """``u -> fn(u) * u`` with its derivative."""
    return NonlinearFn(
        f"{fn.name}*u",
        fn.mu,
        lambda u, mu: fn.value_fn(u, mu) * u,
        lambda u, mu: fn.value_fn(u, mu) + fn.deriv_fn(u, mu) * u,
    )


@dataclass(eq=False)
class ReducedModel:
    problem: str
    """``"parabolic"`` or ``"steady"``."""
    basis: object
    nonlinearity: NonlinearFn
    """``b`` (parabolic) or ``g`` (steady)."""
    stiffness: sp.csr_matrix
    """Fine stiffness ``A`` for the permeability field."""
    lumped: np.ndarray
    stiff_c: np.ndarray
    mass_c: np.ndarray
    load_c: np.ndarray
    mode: str = FULL
    deim: object = None
    target: str = "b"
    """Interpolated quantity in the parabolic case: ``"b"`` (the diffusion
    coefficient) or ``"w"`` (the nodal product b(u) u, nodal form only)."""
    form: str = "coefficient"
    """Parabolic discretization: ``"coefficient"`` assembles
    ``A(b(U)) U`` with b averaged per element, ``"nodal"`` uses
    ``A diag(b(U)) U``."""
    coef: CoefficientStiffness | None = None

    def __post_init__(self):
        if self.mode not in (FULL, MSDEIM):
            raise ValueError(f"mode must be 'full' or 'msdeim', got {self.mode!r}")
        if self.mode == MSDEIM and self.deim is None:
            raise ValueError("msdeim mode needs DEIM operators")
        if self.target not in ("w", "b"):
            raise ValueError("target must be 'w' or 'b'")
        if self.form not in ("coefficient", "nodal"):
            raise ValueError("form must be 'coefficient' or 'nodal'")
        if self.problem == "parabolic" and self.form == "coefficient":
            if self.target == "w":
                raise ValueError("the 'w' target needs the nodal form")
            if self.coef is None:
                raise ValueError("coefficient form needs a CoefficientStiffness")
        self._mass_cho = la.cho_factor(self.mass_c)
        self._w = state_product(self.nonlinearity)

    @property
    def n_c(self) -> int:
        return self.stiff_c.shape[0]

    def with_mode(self, mode, deim=None, target=None):
        return replace(self, mode=mode, deim=deim, target=self.target if target is None else target)

    def with_nonlinearity(self, fn):
        return replace(self, nonlinearity=fn)

    def coef_op(self):
        """``c -> A(c)`` matching the discretization of the diffusion term."""
        if self.form == "coefficient":
            return self.coef
        A = self.stiffness
        return lambda c: A @ sp.diags(c)

    def build_deim(self, fns, Z, m, weight=None, cap=None):
        """Multiscale DEIM operators matching this model's nonlinear term.

        ``fns`` are the training nonlinearities (one per sampled parameter),
        ``Z`` the training states (n_c, n_states).
        """
        from .interp import build_msdeim

        basis = self.basis
        pu = _basis_pu(basis)
        if self.problem == "steady":
            return build_msdeim(fns, basis, pu, Z, m, weight, left=sp.diags(self.lumped), cap=cap)
        if self.target == "b":
            return build_msdeim(fns, basis, pu, Z, m, weight, coef_op=self.coef_op(), cap=cap)
        fns = [state_product(f) for f in (fns if isinstance(fns, (list, tuple)) else [fns])]
        return build_msdeim(fns, basis, pu, Z, m, weight, left=self.stiffness, cap=cap)

    def mass_solve(self, v):
        return la.cho_solve(self._mass_cho, v)

    # coarse nonlinear terms ------------------------------------------------

    def nonlinear_term(self, z, counter=None, jacobian=False):
        """``(F~(z), DF~(z))``; the Jacobian is None unless requested."""
        if self.problem == "parabolic":
            return self._diffusion(z, counter, jacobian)
        return self._forcing(z, counter, jacobian)

    def _diffusion(self, z, counter, jacobian):
        if self.mode == MSDEIM:
            if self.target == "b":
                F, J = self.deim.coefficient_action(self.nonlinearity, z, counter)
                return F, (J if jacobian else None)
            F = self.deim.evaluate_projected(self._w, z, counter)
            J = self.deim.jacobian_projected(self._w, z, counter) if jacobian else None
            return F, J
        Phi = self.basis.matrix
        u = Phi @ z
        b = self.nonlinearity.value(u)
        _count_full(counter, u.size)
        if self.form == "coefficient":
            F = Phi.T @ self.coef.apply(b, u)
        else:
            F = Phi.T @ (self.stiffness @ (b * u))
        J = None
        if jacobian:
            db = self.nonlinearity.derivative(u)
            _count_full(counter, u.size)
            if self.form == "coefficient":
                Jf = self.coef.jacobian(b, db, u)
            else:
                Jf = self.stiffness @ sp.diags(b + db * u)
            J = np.asarray((Phi.T @ (Jf @ Phi)).todense())
        return F, J

    def _forcing(self, z, counter, jacobian):
        g = self.nonlinearity
        if self.mode == MSDEIM:
            F = self.deim.evaluate_projected(g, z, counter)
            J = self.deim.jacobian_projected(g, z, counter) if jacobian else None
            return F, J
        Phi = self.basis.matrix
        u = Phi @ z
        F = Phi.T @ (self.lumped * g.value(u))
        _count_full(counter, u.size)
        J = None
        if jacobian:
            d = g.derivative(u)
            _count_full(counter, u.size)
            J = np.asarray((Phi.T @ (sp.diags(self.lumped * d) @ Phi)).todense())
        return F, J


def _basis_pu(basis):
    if basis.pu is None:
        raise ValueError("basis carries no partition of unity")
    return basis.pu


def _count_full(counter, n):
    if counter is not None:
        counter.add("nonlinear_evals", n)
        counter.add("fine_flops", n)


def _coarse_ops(mesh, basis, field, h):
    A = assemble_stiffness(mesh, field.kappa)
    Phi = basis.matrix
    stiff_c = np.asarray((Phi.T @ A @ Phi).todense())
    mass_c = np.asarray((Phi.T @ assemble_mass(mesh) @ Phi).todense())
    load_c = Phi.T @ assemble_load(mesh, h) if h is not None else np.zeros(basis.n_c)
    return A, stiff_c, mass_c, load_c


def parabolic_model(mesh, basis, field, b, h, mode=FULL, deim=None, target="b", form="coefficient") -> ReducedModel:
    """Coarse model of ``u_t - div(kappa b(u) grad u) = h`` with zero Dirichlet data."""
    A, stiff_c, mass_c, load_c = _coarse_ops(mesh, basis, field, h)
    coef = CoefficientStiffness(mesh, field.kappa) if form == "coefficient" else None
    return ReducedModel("parabolic", basis, b, A, lumped_mass(mesh), stiff_c, mass_c, load_c,
                        mode, deim, target, form, coef)


def steady_model(mesh, basis, field, g, mode=FULL, deim=None) -> ReducedModel:
    """Coarse model of ``div(kappa grad u) = g(u)`` with zero Dirichlet data."""
    A, stiff_c, mass_c, load_c = _coarse_ops(mesh, basis, field, None)
    return ReducedModel("steady", basis, g, A, lumped_mass(mesh), stiff_c, mass_c, load_c, mode, deim)


def collect_states(states, cap=None) -> np.ndarray:
    """Training matrix (n_c, k) from visited iterates: exact repeats removed
    (first occurrence kept), then only the newest ``cap`` retained."""
    seen, keep = set(), []
    for z in states:
        key = np.asarray(z, dtype=float).tobytes()
        if key not in seen:
            seen.add(key)
            keep.append(np.asarray(z, dtype=float))
    if cap is not None:
        keep = keep[-cap:]
    return np.array(keep).T


# residuals and Jacobians -----------------------------------------------------


def residual_reduced(model, z_new, z_old, dt, counter=None):
    if not dt > 0:
        raise ValueError("dt must be positive")
    F, _ = model.nonlinear_term(z_new, counter)
    return z_new - z_old + dt * model.mass_solve(F - model.load_c)


def jacobian_reduced(model, z_new, dt, counter=None):
    """``I + dt M~^{-1} DF~(z)`` with the exact derivative of ``F~``."""
    _, DF = model.nonlinear_term(z_new, counter, jacobian=True)
    return np.eye(model.n_c) + dt * model.mass_solve(DF)


def residual_steady(model, z, counter=None):
    G, _ = model.nonlinear_term(z, counter)
    return model.stiff_c @ z + G


def jacobian_steady(model, z, counter=None):
    _, DG = model.nonlinear_term(z, counter, jacobian=True)
    return model.stiff_c + DG


def _fd_jacobian(fun, z, h=1e-6):
    J = np.empty((z.size, z.size))
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = h
        J[:, k] = (fun(z + e) - fun(z - e)) / (2 * h)
    return J


# Newton ----------------------------------------------------------------------


def newton_solve(model, z_init, config=NewtonConfig(), dt=None, z_old=None, report=None, t=0.0):
    """Newton iteration ``J dz = -R``, ``z <- z + dz``.

    Returns the first iterate whose computed update satisfies
    ``||dz||_2 < tol``; the iteration count is the number of updates
    applied.  Steady residual when ``dt`` is None, backward Euler otherwise
    (``z_old`` defaults to ``z_init``).
    """
    report = SolveReport() if report is None else report
    counter = report.counter
    z = np.array(z_init, dtype=float)
    if dt is None:
        res = lambda v, c=None: residual_steady(model, v, c)  # noqa: E731
        jac = lambda v, c=None: jacobian_steady(model, v, c)  # noqa: E731
    else:
        z_old = z.copy() if z_old is None else np.asarray(z_old, dtype=float)
        res = lambda v, c=None: residual_reduced(model, v, z_old, dt, c)  # noqa: E731
        jac = lambda v, c=None: jacobian_reduced(model, v, dt, c)  # noqa: E731

    t0 = time.perf_counter()
    rnorms, snorms = [], []
    report.states.append(z.copy())
    for k in range(config.max_iter + 1):
        with np.errstate(over="raise", invalid="raise"):
            try:
                R = res(z, counter)
                J = jac(z, counter)
                dz = la.solve(J, -R)
            except (FloatingPointError, la.LinAlgError, ValueError) as exc:
                return _fail(report, k, rnorms, snorms, t, t0, f"Newton failed at iteration {k}: {exc}")
        if config.fd_check and k == 0:
            Jfd = _fd_jacobian(res, z)
            err = np.abs(Jfd - J).max() / max(np.abs(J).max(), 1e-300)
            log.info("Jacobian finite-difference check: relative error %.2e", err)
        rnorms.append(float(np.linalg.norm(R)))
        snorms.append(float(np.linalg.norm(dz)))
        if not np.all(np.isfinite(dz)):
            return _fail(report, k, rnorms, snorms, t, t0, "non-finite Newton update")
        if snorms[-1] < config.tol:
            break
        if k == config.max_iter:
            return _fail(report, k, rnorms, snorms, t, t0,
                         f"no convergence in {config.max_iter} iterations (|dz|={snorms[-1]:.3e})")
        z = z + dz
        report.states.append(z.copy())
    _log_solve(report, k, rnorms, snorms, t, t0)
    return z, report


def _log_solve(report, k, rnorms, snorms, t, t0):
    report.iterations.append(k)
    report.residual_norms.append(rnorms)
    report.step_norms.append(snorms)
    report.eval_counts.append(report.counter["nonlinear_evals"])
    report.times.append(t)
    report.wall_time += time.perf_counter() - t0


def _fail(report, k, rnorms, snorms, t, t0, msg):
    _log_solve(report, k, rnorms, snorms, t, t0)
    report.converged = False
    raise NewtonDivergenceError(msg, report)


def solve_steady(model, config=NewtonConfig(), z_init=None, report=None):
    if model.problem != "steady":
        raise ValueError("model is not a steady problem")
    z0 = np.zeros(model.n_c) if z_init is None else z_init
    return newton_solve(model, z0, config, report=report)


def backward_euler_march(model, z0, dt, T, config=NewtonConfig(), stride=1, report=None):
    """March ``ceil(T/dt)`` backward Euler steps from ``z0``.

    Returns ``(times, trajectory, report)`` with the states stored every
    ``stride`` steps (the final state is always kept).  A diverging step
    raises :class:`NewtonDivergenceError` carrying the partial trajectory.
    """
    if not dt > 0 or T < dt:
        raise ValueError("need dt > 0 and T >= dt")
    n_steps = math.ceil(T / dt - 1e-9)
    report = SolveReport() if report is None else report
    z = np.array(z0, dtype=float)
    times, traj = [0.0], [z.copy()]
    for n in range(1, n_steps + 1):
        try:
            z, _ = newton_solve(model, z, config, dt=dt, z_old=z, report=report, t=n * dt)
        except NewtonDivergenceError as exc:
            exc.trajectory = (np.array(times), np.array(traj))
            raise
        if n % stride == 0 or n == n_steps:
            times.append(n * dt)
            traj.append(z.copy())
    return np.array(times), np.array(traj), report
