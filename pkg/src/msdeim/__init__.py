"""Multiscale DEIM: reduced-order solvers for nonlinear PDEs in high-contrast
media, combining a GMsFEM coarse space with region-wise discrete empirical
interpolation of the nonlinear terms."""

__version__ = "0.1.0"

from .grid import build_grids, build_neighborhoods, build_partition_of_unity  # noqa: E402
from .coeff import generate_permeability, make_nonlinear  # noqa: E402
from .gmsfem import build_multiscale_space, prolong, restrict  # noqa: E402
from .interp import build_msdeim, apply_msdeim, apply_msdeim_projected, weighted_pod, deim_select  # noqa: E402
from .solver import (  # noqa: E402
    NewtonConfig,
    NewtonDivergenceError,
    parabolic_model,
    steady_model,
    newton_solve,
    solve_steady,
    backward_euler_march,
)
from .metrics import ErrorTable, error_l2, error_energy  # noqa: E402
from .config import RunConfig, load_config, default_config  # noqa: E402

__all__ = [
    "build_grids",
    "build_neighborhoods",
    "build_partition_of_unity",
    "generate_permeability",
    "make_nonlinear",
    "build_multiscale_space",
    "prolong",
    "restrict",
    "build_msdeim",
    "apply_msdeim",
    "apply_msdeim_projected",
    "weighted_pod",
    "deim_select",
    "NewtonConfig",
    "NewtonDivergenceError",
    "parabolic_model",
    "steady_model",
    "newton_solve",
    "solve_steady",
    "backward_euler_march",
    "ErrorTable",
    "error_l2",
    "error_energy",
    "RunConfig",
    "load_config",
    "default_config",
]
