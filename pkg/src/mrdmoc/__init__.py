"""Multirate variational simulation and optimal control for a flexible
spacecraft (rigid hub with two cantilever appendages)."""

__version__ = "0.1.0"

from .spacecraft import ModeBasis, SpacecraftParams, SystemMatrices, assemble_system, eval_mode_shape
from .modal import ModalState, ModalSystem, from_modal, solve_modal, to_modal
from .integrator import (
    Diagnostics,
    MomentumPair,
    MultirateGrid,
    MultirateTrajectory,
    diagnostics,
    discrete_forces,
    discrete_lagrangian,
    simulate,
    slot_derivatives,
    step,
)
from .ocp import (
    OcpSolution,
    OcpSpec,
    QpProblem,
    VariableLayout,
    assemble,
    discrete_cost,
    rotation_maneuver_spec,
    solve,
    solve_maneuver,
)
from .reference import (
    ErrorReport,
    error_metrics,
    fine_grid_reference,
    free_response,
    lq_tpbvp_reference,
    rk4_energy_series,
)

__all__ = [name for name in dir() if not name.startswith("_")]
