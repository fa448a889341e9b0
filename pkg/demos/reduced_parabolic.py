"""March the nonlinear parabolic problem with the full coarse model and with
localized DEIM, then compare accuracy against cost.

Run with ``python demos/reduced_parabolic.py``.  About half a minute.
"""
import warnings

import numpy as np

from msdeim.coeff import b_exp
from msdeim.config import default_config
from msdeim.experiments import build_setup, parabolic_source
from msdeim.metrics import error_energy
from msdeim.solver import NewtonConfig, backward_euler_march, collect_states, parabolic_model

warnings.simplefilter("ignore")
cfg = default_config("parabolic")
s = build_setup(cfg)
newton = NewtonConfig(tol=cfg.tol)

model = parabolic_model(s.mesh, s.basis, s.field, b_exp(10.0), parabolic_source)
z0 = np.zeros(s.basis.n_c)
_, traj, full = backward_euler_march(model, z0, cfg.dt, cfg.T, newton)
U = s.basis.matrix @ traj[-1]
print(f"full coarse model: {full.total_evals} nonlinear evaluations, iterations {full.iterations}")

Z = collect_states(full.states, cfg.cap)
for m in (1, 2, 3, 4):
    ops = model.build_deim([b_exp(10.0)], Z, m, s.weight)
    reduced = model.with_mode("msdeim", ops)
    _, traj_r, rep = backward_euler_march(reduced, z0, cfg.dt, cfg.T, newton)
    err = error_energy(U, s.basis.matrix @ traj_r[-1], s.stiffness)
    print(f"m={m}: {ops.total_points:4d} points, {rep.total_evals:6d} evaluations "
          f"({rep.total_evals / full.total_evals:.3f} of full), energy error {err:.2e}")
