"""Independent ground-truth generators and the max-node error metrics.

Everything here deliberately avoids the multirate discretization: the free
response is the per-mode closed form, the optimal-control reference solves
the continuous first-order optimality system through the Hamiltonian
state-transition matrix, and the fine-grid reference is a single-rate
transcription at a much smaller step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.linalg

from .errors import NumericError
from .modal import ModalState, ModalSystem
from .ocp import OcpSolution, OcpSpec, solve_maneuver

__all__ = [
    "ErrorReport",
    "free_response",
    "LqReference",
    "lq_tpbvp_reference",
    "fine_grid_reference",
    "error_metrics",
    "rk4_energy_series",
]


def free_response(msys: ModalSystem, initial: ModalState, t: float) -> ModalState:
    """Unforced closed-form response of the decoupled modal oscillators.

    Modes with positive eigenvalue rotate at their natural frequency; the
    rigid (zero-eigenvalue) mode drifts linearly.
    """
    if t < 0.0:
        raise ValueError("time must be nonnegative")
    lam = msys.eigenvalues
    q0, qd0 = initial.q, initial.qdot
    q = np.empty_like(q0)
    qd = np.empty_like(qd0)
    positive = lam > 0.0
    w = np.sqrt(lam[positive])
    q[positive] = q0[positive] * np.cos(w * t) + qd0[positive] * np.sin(w * t) / w
    qd[positive] = -q0[positive] * w * np.sin(w * t) + qd0[positive] * np.cos(w * t)
    q[~positive] = q0[~positive] + qd0[~positive] * t
    qd[~positive] = qd0[~positive]
    return ModalState(q=q, qdot=qd, split_index=initial.split_index)


def free_response_series(msys: ModalSystem, initial: ModalState, times: np.ndarray):
    """(len(times), N+1) arrays (q, qdot) of the closed-form free response."""
    times = np.asarray(times, float)
    lam = msys.eigenvalues
    pos = lam > 0.0
    w = np.sqrt(lam[pos])
    q = np.empty((times.size, lam.size))
    qd = np.empty_like(q)
    phase = np.outer(times, w)
    q[:, pos] = initial.q[pos] * np.cos(phase) + (initial.qdot[pos] / w) * np.sin(phase)
    qd[:, pos] = -initial.q[pos] * w * np.sin(phase) + initial.qdot[pos] * np.cos(phase)
    q[:, ~pos] = initial.q[~pos] + np.outer(times, initial.qdot[~pos])
    qd[:, ~pos] = initial.qdot[~pos]
    return q, qd


@dataclass
class LqReference:
    """Continuous-time optimal solution sampled on a time grid."""

    times: np.ndarray
    states: np.ndarray  # (n_t, 2(N+1)), stacked [q, qdot]
    costates: np.ndarray
    controls: np.ndarray
    cost: float


def _first_order_matrices(spec: OcpSpec):
    lam = spec.msys.eigenvalues
    n = lam.size
    a = np.zeros((2 * n, 2 * n))
    a[:n, n:] = np.eye(n)
    a[n:, :n] = -np.diag(lam)
    b = np.zeros(2 * n)
    b[n:] = spec.msys.input_vector
    return a, b


def _hamiltonian(spec: OcpSpec):
    a, b = _first_order_matrices(spec)
    n2 = a.shape[0]
    h = np.zeros((2 * n2, 2 * n2))
    h[:n2, :n2] = a
    h[:n2, n2:] = -np.outer(b, b) / spec.control_weight
    h[n2:, :n2] = -spec.state_weight
    h[n2:, n2:] = -a.T
    return h, b


def _boundary_states(spec: OcpSpec):
    from .modal import to_modal

    start = to_modal(spec.msys, spec.xi_start, spec.xidot_start)
    end = to_modal(spec.msys, spec.xi_end, spec.xidot_end)
    x0 = np.concatenate([start.q, start.qdot])
    xf = np.concatenate([end.q, end.qdot])
    return x0, xf


def _propagate(ham: np.ndarray, y0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Sample exp(ham * t) @ y0 on sorted times; transition matrices are
    cached per unique gap, so uniform grids cost one matrix exponential."""
    out = np.empty((times.size, y0.size))
    cache: dict[float, np.ndarray] = {}
    y = y0
    t_prev = 0.0
    for i, t in enumerate(times):
        gap = t - t_prev
        if gap != 0.0:
            phi = cache.get(gap)
            if phi is None:
                phi = scipy.linalg.expm(ham * gap)
                cache[gap] = phi
            y = phi @ y
            t_prev = t
        out[i] = y
    return out


def lq_tpbvp_reference(spec: OcpSpec, sample_times) -> LqReference:
    """Continuous optimal-control reference via the Hamiltonian two-point
    boundary value problem.

    The unknown initial costate follows from the state-transition matrix
    over the horizon; states, costates and the control are then sampled,
    and the cost is integrated with composite Simpson quadrature on a grid
    fine enough to resolve the stiffest mode.
    """
    times = np.asarray(sample_times, float)
    if times.size and (times.min() < spec.grid.t0 - 1e-12 or times.max() > spec.grid.tf + 1e-12):
        raise ValueError("sample times outside the horizon")
    ham, b = _hamiltonian(spec)
    n2 = b.size
    horizon = spec.grid.tf - spec.grid.t0
    x0, xf = _boundary_states(spec)

    phi = scipy.linalg.expm(ham * horizon)
    phi_xx = phi[:n2, :n2]
    phi_xl = phi[:n2, n2:]
    cond = np.linalg.cond(phi_xl)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericError(
            f"boundary solve ill-conditioned (cond {cond:.3e}); "
            "shorten the horizon or use a higher-precision path"
        )
    lam0 = np.linalg.solve(phi_xl, xf - phi_xx @ x0)
    y0 = np.concatenate([x0, lam0])

    order = np.argsort(times)
    sampled = np.empty((times.size, 2 * n2))
    sampled[order] = _propagate(ham, y0, times[order] - spec.grid.t0)
    states = sampled[:, :n2]
    costates = sampled[:, n2:]
    controls = -(costates @ b) / spec.control_weight

    # Cost quadrature: ~40 points per period of the fastest mode.
    w_max = float(np.max(np.sqrt(np.maximum(spec.msys.eigenvalues, 0.0))))
    n_quad = int(max(4096, 40 * horizon * max(w_max, 1.0) / (2.0 * np.pi)))
    n_quad += n_quad % 2  # Simpson needs an even interval count
    t_quad = np.linspace(0.0, horizon, n_quad + 1)
    dense = _propagate(ham, y0, t_quad)
    xq = dense[:, :n2]
    uq = -(dense[:, n2:] @ b) / spec.control_weight
    integrand = 0.5 * (
        np.einsum("ij,jk,ik->i", xq, spec.state_weight, xq) + spec.control_weight * uq**2
    )
    cost = float(scipy.integrate.simpson(integrand, x=t_quad))

    return LqReference(times=times, states=states, costates=costates, controls=controls, cost=cost)


def fine_grid_reference(spec: OcpSpec, refinement: int) -> OcpSolution:
    """Single-rate transcription at micro step dt/refinement, used as a
    discrete oracle where the analytic reference is impractical."""
    if refinement < 1:
        raise ValueError("refinement must be >= 1")
    from .integrator import MultirateGrid

    grid = spec.grid
    fine = MultirateGrid(
        t0=grid.t0,
        tf=grid.tf,
        micro_step=grid.micro_step / refinement,
        micro_count=1,
    )
    fine_spec = OcpSpec(
        msys=spec.msys,
        grid=fine,
        xi_start=spec.xi_start,
        xi_end=spec.xi_end,
        xidot_start=spec.xidot_start,
        xidot_end=spec.xidot_end,
        state_weight=spec.state_weight,
        control_weight=spec.control_weight,
    )
    return solve_maneuver(fine_spec)


@dataclass(frozen=True)
class ErrorReport:
    """Max-over-nodes infinity-norm errors against a reference.

    ``absolute`` is max_k ||x_k - x_ref(t_k)||_inf over the supplied nodes;
    ``relative`` divides by max_k ||x_ref(t_k)||_inf.  ``groups`` carries
    the same pair per named variable group.
    """

    absolute: float
    relative: float
    groups: dict
    n_nodes: int


def _max_node_norm(values: np.ndarray) -> float:
    return float(np.max(np.max(np.abs(values), axis=1)))


def error_metrics(candidate: dict, reference: dict) -> ErrorReport:
    """Errors between matching groups of node samples.

    Both arguments map group name -> (n_nodes, dim) arrays on shared node
    times.  A zero reference makes the relative error undefined and raises.
    """
    if set(candidate) != set(reference):
        raise ValueError("candidate and reference groups differ")
    groups = {}
    diffs = []
    refs = []
    n_nodes = None
    for name in candidate:
        cand = np.atleast_2d(np.asarray(candidate[name], float))
        ref = np.atleast_2d(np.asarray(reference[name], float))
        if cand.shape != ref.shape:
            raise ValueError(f"group '{name}' shape mismatch {cand.shape} vs {ref.shape}")
        if cand.shape[0] == 0:
            raise ValueError("empty node set")
        if n_nodes is None:
            n_nodes = cand.shape[0]
        abs_err = _max_node_norm(cand - ref)
        ref_norm = _max_node_norm(ref)
        if ref_norm == 0.0:
            raise ValueError(f"relative error undefined: reference group '{name}' is identically zero")
        groups[name] = {"absolute": abs_err, "relative": abs_err / ref_norm}
        diffs.append(abs_err)
        refs.append(ref_norm)
    absolute = max(diffs)
    relative = max(d / r for d, r in zip(diffs, refs))
    return ErrorReport(absolute=absolute, relative=relative, groups=groups, n_nodes=n_nodes)


def rk4_energy_series(msys: ModalSystem, initial: ModalState, dt: float, n_steps: int):
    """Total-energy series of classical fixed-step RK4 on the unforced modal
    system; the non-symplectic comparator for conservation studies.

    For this linear system one RK4 step is exactly multiplication by the
    degree-4 truncation of exp(A*dt), so the series is generated by powers
    of that constant matrix.
    """
    n = msys.n_coords
    a = np.zeros((2 * n, 2 * n))
    a[:n, n:] = np.eye(n)
    a[n:, :n] = -np.diag(msys.eigenvalues)
    step = np.eye(2 * n)
    term = np.eye(2 * n)
    for i in range(1, 5):
        term = term @ (a * dt) / i
        step = step + term

    states = np.empty((n_steps + 1, 2 * n))
    states[0] = np.concatenate([initial.q, initial.qdot])
    y = states[0]
    for k in range(1, n_steps + 1):
        y = step @ y
        states[k] = y
    energy = 0.5 * (states[:, :n] ** 2 @ msys.eigenvalues + np.sum(states[:, n:] ** 2, axis=1))
    times = dt * np.arange(n_steps + 1)
    return times, energy
