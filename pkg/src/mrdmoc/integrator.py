"""Multirate variational integrator on macro/micro time grids.

Slow modal coordinates live on macro nodes (step DT = p*dt), fast ones on
micro nodes (step dt), both interpolated piecewise-linearly.  The action
over one macro step is approximated with the midpoint rule per micro
interval; stationarity of the forced discrete action gives the stepping
equations, and discrete Legendre transforms give node momenta used for
start-up, boundary conditions and conservation diagnostics.

The modal model is linear, so each macro step reduces to one exact Newton
update; the iteration loop is retained so the contract survives nonlinear
Lagrangians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .modal import ModalState, ModalSystem

__all__ = [
    "MultirateGrid",
    "MultirateTrajectory",
    "MomentumPair",
    "DiscreteForms",
    "discrete_forms",
    "discrete_lagrangian",
    "slot_derivatives",
    "discrete_forces",
    "step",
    "simulate",
    "diagnostics",
    "momentum_pair",
    "trajectory_residual",
    "Diagnostics",
]

_NEWTON_TOL = 1e-12
_NEWTON_MAXIT = 20


@dataclass(frozen=True)
class MultirateGrid:
    """Macro/micro grid: DT = p*dt exactly, n_macro macro steps cover [t0, tf].

    p = 1 degenerates to a single-rate grid.
    """

    t0: float
    tf: float
    micro_step: float
    micro_count: int

    def __post_init__(self):
        if self.micro_count < 1:
            raise ValueError("micro_count must be >= 1")
        if self.micro_step <= 0.0:
            raise ValueError("micro_step must be positive")
        span = self.tf - self.t0
        if span <= 0.0:
            raise ValueError("tf must exceed t0")
        n = round(span / self.macro_step)
        if n < 1 or abs(n * self.macro_step - span) > 1e-12 * span:
            raise ValueError(
                f"horizon {span} is not an integer number of macro steps "
                f"{self.macro_step} (p={self.micro_count}, dt={self.micro_step})"
            )

    @property
    def macro_step(self) -> float:
        return self.micro_count * self.micro_step

    @property
    def n_macro(self) -> int:
        return round((self.tf - self.t0) / self.macro_step)

    @property
    def n_micro_total(self) -> int:
        return self.n_macro * self.micro_count

    def macro_times(self) -> np.ndarray:
        return self.t0 + self.macro_step * np.arange(self.n_macro + 1)

    def micro_times(self) -> np.ndarray:
        return self.t0 + self.micro_step * np.arange(self.n_micro_total + 1)

    def micro_midpoint_times(self) -> np.ndarray:
        return self.t0 + self.micro_step * (np.arange(self.n_micro_total) + 0.5)


@dataclass
class MultirateTrajectory:
    """Discrete trajectory on a multirate grid.

    slow:     (n_macro+1, r) macro-node values of the slow coordinates.
    fast:     (n_macro*p+1, n_fast) micro-node values; the node shared by
              consecutive macro intervals is stored once.
    controls: (n_macro, p) torques at micro-interval midpoints.
    """

    grid: MultirateGrid
    slow: np.ndarray
    fast: np.ndarray
    controls: np.ndarray

    def fast_nodes(self, k: int) -> np.ndarray:
        """The p+1 fast nodes of macro interval k (view)."""
        p = self.grid.micro_count
        return self.fast[k * p : (k + 1) * p + 1]

    def fast_at_macro_nodes(self) -> np.ndarray:
        return self.fast[:: self.grid.micro_count]

    def modal_at_macro_nodes(self) -> np.ndarray:
        """(n_macro+1, N+1) full modal configuration on macro nodes."""
        return np.hstack([self.slow, self.fast_at_macro_nodes()])


@dataclass(frozen=True)
class MomentumPair:
    """Slow and fast conjugate momenta at one macro node."""

    slow: np.ndarray
    fast: np.ndarray


@dataclass(frozen=True)
class DiscreteForms:
    """Linear coefficients of the slot derivatives of the discrete action.

    The discrete Lagrangian is quadratic and separable, so every slot
    gradient is diagonal per mode:

      d/d(first slow slot)  = d0*s_k + d1*s_{k+1}
      d/d(second slow slot) = d1*s_k + c1*s_{k+1}
      fast chain gradient   = tridiagonal with end coefficient u, interior
                              diagonal 2u and off-diagonal v

    Discrete left/right forces scale the control by force_scale = dt/2.
    These same coefficients fill the optimal-control constraint matrix, so
    the stepper and the transcription share one discretization.
    """

    grid: MultirateGrid
    d0: np.ndarray
    d1: np.ndarray
    c1: np.ndarray
    u: np.ndarray
    v: np.ndarray
    z_slow: np.ndarray
    z_fast: np.ndarray
    force_scale: float
    slow_weights: np.ndarray  # midpoint weights (2m+1)/(2p), m = 0..p-1

    @property
    def n_slow(self) -> int:
        return self.d0.size

    @property
    def n_fast(self) -> int:
        return self.u.size


def discrete_forms(msys: ModalSystem, grid: MultirateGrid) -> DiscreteForms:
    """Precompute the per-mode gradient coefficients for (msys, grid)."""
    p = grid.micro_count
    dt = grid.micro_step
    dT = grid.macro_step
    lam_s = msys.lambda_slow
    lam_f = msys.lambda_fast
    # Sums of the midpoint interpolation weights over one macro step.
    a0 = (4.0 * p**2 - 1.0) / (12.0 * p)  # sum (1-w_m)^2 = sum w_m^2
    a1 = (2.0 * p**2 + 1.0) / (12.0 * p)  # sum w_m (1-w_m)
    return DiscreteForms(
        grid=grid,
        d0=1.0 / dT - dt * a0 * lam_s,
        d1=-1.0 / dT - dt * a1 * lam_s,
        c1=1.0 / dT - dt * a0 * lam_s,
        u=1.0 / dt - 0.25 * dt * lam_f,
        v=-1.0 / dt - 0.25 * dt * lam_f,
        z_slow=msys.input_slow.copy(),
        z_fast=msys.input_fast.copy(),
        force_scale=0.5 * dt,
        slow_weights=(2.0 * np.arange(p) + 1.0) / (2.0 * p),
    )


def _check_slots(msys: ModalSystem, grid: MultirateGrid, s0, s1, fnodes):
    r, nf, p = msys.n_slow, msys.n_fast, grid.micro_count
    if s0.shape != (r,) or s1.shape != (r,):
        raise ValueError("slow slot dimension mismatch")
    if fnodes.shape != (p + 1, nf):
        raise ValueError(f"fast slots must have shape ({p + 1}, {nf})")


def discrete_lagrangian(msys: ModalSystem, grid: MultirateGrid, s0, s1, fnodes) -> float:
    """Midpoint-quadrature action over one macro step along the linear
    interpolants of the slow/fast discrete paths."""
    s0 = np.asarray(s0, float)
    s1 = np.asarray(s1, float)
    fnodes = np.asarray(fnodes, float)
    _check_slots(msys, grid, s0, s1, fnodes)
    p, dt, dT = grid.micro_count, grid.micro_step, grid.macro_step

    v_s = (s1 - s0) / dT
    kinetic = dT * 0.5 * np.dot(v_s, v_s)
    v_f = np.diff(fnodes, axis=0) / dt
    kinetic += dt * 0.5 * np.sum(v_f * v_f)

    w = (2.0 * np.arange(p) + 1.0) / (2.0 * p)
    s_mid = s0[None, :] + w[:, None] * (s1 - s0)[None, :]
    f_mid = 0.5 * (fnodes[:-1] + fnodes[1:])
    potential = dt * 0.5 * np.sum(s_mid**2 @ msys.lambda_slow)
    potential += dt * 0.5 * np.sum(f_mid**2 @ msys.lambda_fast)
    return float(kinetic - potential)


def slot_derivatives(msys: ModalSystem, grid: MultirateGrid, s0, s1, fnodes):
    """Analytic gradients of the one-step discrete action.

    Returns (d_first_slow, d_second_slow, d_fast) where d_fast has one row
    per fast node m = 0..p.
    """
    s0 = np.asarray(s0, float)
    s1 = np.asarray(s1, float)
    fnodes = np.asarray(fnodes, float)
    _check_slots(msys, grid, s0, s1, fnodes)
    f = discrete_forms(msys, grid)
    p = grid.micro_count

    g_first = f.d0 * s0 + f.d1 * s1
    g_second = f.d1 * s0 + f.c1 * s1
    g_fast = np.empty_like(fnodes)
    g_fast[0] = f.u * fnodes[0] + f.v * fnodes[1]
    g_fast[p] = f.v * fnodes[p - 1] + f.u * fnodes[p]
    for m in range(1, p):
        g_fast[m] = f.v * fnodes[m - 1] + 2.0 * f.u * fnodes[m] + f.v * fnodes[m + 1]
    return g_first, g_second, g_fast


def discrete_forces(msys: ModalSystem, grid: MultirateGrid, tau):
    """Discrete left/right control forces of one macro interval.

    Left and right values coincide for this parametrization: the slow
    force carries the summed micro impulses, each fast force half of a
    single micro impulse.  Returns (slow_force, fast_forces) with
    fast_forces of shape (p, n_fast).
    """
    tau = np.asarray(tau, float)
    if tau.shape != (grid.micro_count,):
        raise ValueError(f"expected {grid.micro_count} controls, got shape {tau.shape}")
    scale = 0.5 * grid.micro_step
    slow_force = msys.input_slow * (scale * np.sum(tau))
    fast_forces = scale * tau[:, None] * msys.input_fast[None, :]
    return slow_force, fast_forces


def _advance_fast_chain(forms: DiscreteForms, fnodes: np.ndarray, tau: np.ndarray):
    """Fill fast nodes m = 2..p from the interior stationarity relations,
    given nodes 0 and 1; fnodes is modified in place."""
    u, v = forms.u, forms.v
    zf = forms.z_fast * forms.force_scale
    for m in range(1, forms.grid.micro_count):
        rhs = -(zf * (tau[m] + tau[m - 1])) - v * fnodes[m - 1] - 2.0 * u * fnodes[m]
        fnodes[m + 1] = rhs / v


def _step_residual(forms, s_prev, s_cur, s_next, f_prev, f_cur, tau_prev, tau_cur):
    """Stacked residual of the interior stepping equations at macro node k."""
    p = forms.grid.micro_count
    zs = forms.z_slow * forms.force_scale
    zf = forms.z_fast * forms.force_scale
    res_slow = (
        forms.d1 * s_prev
        + (forms.c1 + forms.d0) * s_cur
        + forms.d1 * s_next
        + zs * (np.sum(tau_cur) + np.sum(tau_prev))
    )
    res_fast0 = (
        forms.v * f_prev[p - 1]
        + 2.0 * forms.u * f_cur[0]
        + forms.v * f_cur[1]
        + zf * (tau_cur[0] + tau_prev[p - 1])
    )
    res_interior = [
        forms.v * f_cur[m - 1]
        + 2.0 * forms.u * f_cur[m]
        + forms.v * f_cur[m + 1]
        + zf * (tau_cur[m] + tau_cur[m - 1])
        for m in range(1, p)
    ]
    return np.concatenate([res_slow, res_fast0] + res_interior)


class _StepOperator:
    """Cached one-macro-step solver (forms are grid/system constants)."""

    def __init__(self, msys: ModalSystem, grid: MultirateGrid):
        self.msys = msys
        self.grid = grid
        self.forms = discrete_forms(msys, grid)
        if np.any(self.forms.d1 == 0.0) or np.any(self.forms.v == 0.0):
            raise NumericError(
                "singular step operator: a midpoint coefficient vanished "
                "(micro step hits a resonance degeneracy)"
            )

    def advance(self, s_prev, s_cur, f_prev, tau_prev, tau_cur):
        """Solve the stepping equations for (s_next, fast nodes of interval k).

        One Newton update is exact here; the residual is re-checked and
        polished until it meets the tolerance.
        """
        forms = self.forms
        p = self.grid.micro_count
        f_cur = np.empty((p + 1, self.msys.n_fast))
        f_cur[0] = f_prev[p]

        zs = forms.z_slow * forms.force_scale
        zf = forms.z_fast * forms.force_scale
        rhs_slow = -(
            forms.d1 * s_prev
            + (forms.c1 + forms.d0) * s_cur
            + zs * (np.sum(tau_cur) + np.sum(tau_prev))
        )
        s_next = rhs_slow / forms.d1
        rhs_fast = -(
            forms.v * f_prev[p - 1]
            + 2.0 * forms.u * f_cur[0]
            + zf * (tau_cur[0] + tau_prev[p - 1])
        )
        f_cur[1] = rhs_fast / forms.v
        _advance_fast_chain(forms, f_cur, tau_cur)

        scale = 1.0 + max(np.max(np.abs(rhs_slow), initial=0.0), np.max(np.abs(rhs_fast), initial=0.0))
        for _ in range(_NEWTON_MAXIT):
            res = _step_residual(forms, s_prev, s_cur, s_next, f_prev, f_cur, tau_prev, tau_cur)
            if np.max(np.abs(res), initial=0.0) <= _NEWTON_TOL * scale:
                return s_next, f_cur
            r = self.msys.n_slow
            s_next -= res[:r] / forms.d1
            # Correct the fast chain front-to-back against the tridiagonal
            # structure (exact for the chain ordering used in res).
            delta = np.zeros_like(f_cur)
            nf = self.msys.n_fast
            delta[1] = res[r : r + nf] / forms.v
            for m in range(1, p):
                block = res[r + m * nf : r + (m + 1) * nf]
                delta[m + 1] = (block - forms.v * delta[m - 1] - 2.0 * forms.u * delta[m]) / forms.v
            f_cur -= delta
        raise NumericError("step iteration failed to meet residual tolerance")

    def start(self, state: ModalState, tau0):
        """First macro interval from the momentum form of the initial
        condition (modal mass is the identity, so momenta equal rates)."""
        forms = self.forms
        p = self.grid.micro_count
        f_cur = np.empty((p + 1, self.msys.n_fast))
        f_cur[0] = state.q_fast
        zs = forms.z_slow * forms.force_scale
        zf = forms.z_fast * forms.force_scale
        # -d(action)/d(first slow slot) - slow force = initial slow momentum
        s_next = -(state.qdot_slow + forms.d0 * state.q_slow + zs * np.sum(tau0)) / forms.d1
        f_cur[1] = -(state.qdot_fast + forms.u * f_cur[0] + zf * tau0[0]) / forms.v
        _advance_fast_chain(forms, f_cur, tau0)
        return s_next, f_cur


def step(msys: ModalSystem, grid: MultirateGrid, s_prev, s_cur, f_prev, tau_prev, tau_cur):
    """Advance one macro step given the previous interval's data.

    Returns (next slow node, fast nodes of the new interval, shape (p+1, n_fast)).
    """
    s_prev = np.asarray(s_prev, float)
    s_cur = np.asarray(s_cur, float)
    f_prev = np.asarray(f_prev, float)
    tau_prev = np.asarray(tau_prev, float)
    tau_cur = np.asarray(tau_cur, float)
    _check_slots(msys, grid, s_prev, s_cur, f_prev)
    return _StepOperator(msys, grid).advance(s_prev, s_cur, f_prev, tau_prev, tau_cur)


def simulate(
    msys: ModalSystem,
    grid: MultirateGrid,
    initial: ModalState,
    controls=None,
) -> MultirateTrajectory:
    """March the stepping equations over the whole grid.

    controls has shape (n_macro, p); None means free response.
    """
    n_s, p = grid.n_macro, grid.micro_count
    r, nf = msys.n_slow, msys.n_fast
    if initial.q.size != msys.n_coords or initial.split_index != msys.split_index:
        raise ValueError("initial state does not match the modal system")
    if controls is None:
        controls = np.zeros((n_s, p))
    controls = np.asarray(controls, float)
    if controls.shape != (n_s, p):
        raise ValueError(f"controls must have shape ({n_s}, {p})")

    op = _StepOperator(msys, grid)
    slow = np.empty((n_s + 1, r))
    fast = np.empty((n_s * p + 1, nf))
    slow[0] = initial.q_slow
    fast[0] = initial.q_fast

    s_next, f_cur = op.start(initial, controls[0])
    slow[1] = s_next
    fast[1 : p + 1] = f_cur[1:]
    for k in range(1, n_s):
        s_next, f_cur = op.advance(
            slow[k - 1], slow[k], fast[(k - 1) * p : k * p + 1], controls[k - 1], controls[k]
        )
        slow[k + 1] = s_next
        fast[k * p + 1 : (k + 1) * p + 1] = f_cur[1:]
    return MultirateTrajectory(grid=grid, slow=slow, fast=fast, controls=controls)


def momentum_pair(msys: ModalSystem, grid: MultirateGrid, traj: MultirateTrajectory, k: int, side: str) -> MomentumPair:
    """Discrete Legendre-transform momenta at macro node k.

    side='minus' uses the interval starting at k (defined for k < n_macro),
    side='plus' the interval ending at k (defined for k > 0).  On any
    trajectory satisfying the stepping equations the two sides agree at
    interior nodes.
    """
    forms = discrete_forms(msys, grid)
    p = grid.micro_count
    zs = forms.z_slow * forms.force_scale
    zf = forms.z_fast * forms.force_scale
    if side == "minus":
        if not 0 <= k < grid.n_macro:
            raise ValueError("minus momentum needs an interval starting at k")
        f = traj.fast_nodes(k)
        tau = traj.controls[k]
        p_slow = -(forms.d0 * traj.slow[k] + forms.d1 * traj.slow[k + 1]) - zs * np.sum(tau)
        p_fast = -(forms.u * f[0] + forms.v * f[1]) - zf * tau[0]
    elif side == "plus":
        if not 0 < k <= grid.n_macro:
            raise ValueError("plus momentum needs an interval ending at k")
        f = traj.fast_nodes(k - 1)
        tau = traj.controls[k - 1]
        p_slow = forms.d1 * traj.slow[k - 1] + forms.c1 * traj.slow[k] + zs * np.sum(tau)
        p_fast = forms.v * f[p - 1] + forms.u * f[p] + zf * tau[p - 1]
    else:
        raise ValueError("side must be 'minus' or 'plus'")
    return MomentumPair(slow=p_slow, fast=p_fast)


def node_momenta(msys: ModalSystem, grid: MultirateGrid, traj: MultirateTrajectory) -> np.ndarray:
    """(n_macro+1, N+1) modal momenta: minus side at nodes 0..n-1, plus side
    at the final node."""
    forms = discrete_forms(msys, grid)
    p = grid.micro_count
    zs = forms.z_slow * forms.force_scale
    zf = forms.z_fast * forms.force_scale
    slow, fast, tau = traj.slow, traj.fast, traj.controls

    out = np.empty((grid.n_macro + 1, msys.n_coords))
    impulses = np.sum(tau, axis=1)
    out[:-1, : msys.n_slow] = (
        -(forms.d0 * slow[:-1] + forms.d1 * slow[1:]) - impulses[:, None] * zs[None, :]
    )
    f0 = fast[:-1:p]
    f1 = fast[1::p]
    out[:-1, msys.n_slow :] = -(forms.u * f0 + forms.v * f1) - tau[:, :1] * zf[None, :]
    out[-1, : msys.n_slow] = forms.d1 * slow[-2] + forms.c1 * slow[-1] + np.sum(tau[-1]) * zs
    out[-1, msys.n_slow :] = forms.v * fast[-2] + forms.u * fast[-1] + tau[-1, -1] * zf
    return out


def trajectory_residual(msys: ModalSystem, grid: MultirateGrid, traj: MultirateTrajectory) -> float:
    """Max-norm residual of the interior stepping equations along a
    trajectory (independent re-check used on optimization output)."""
    forms = discrete_forms(msys, grid)
    p = grid.micro_count
    worst = 0.0
    for k in range(1, grid.n_macro):
        res = _step_residual(
            forms,
            traj.slow[k - 1],
            traj.slow[k],
            traj.slow[k + 1],
            traj.fast_nodes(k - 1),
            traj.fast_nodes(k),
            traj.controls[k - 1],
            traj.controls[k],
        )
        worst = max(worst, float(np.max(np.abs(res), initial=0.0)))
    # Interior fast relations of the first interval (start-up rows).
    zf = forms.z_fast * forms.force_scale
    f = traj.fast_nodes(0)
    tau = traj.controls[0]
    for m in range(1, p):
        res = forms.v * f[m - 1] + 2.0 * forms.u * f[m] + forms.v * f[m + 1] + zf * (tau[m] + tau[m - 1])
        worst = max(worst, float(np.max(np.abs(res), initial=0.0)))
    return worst


@dataclass
class Diagnostics:
    """Conservation diagnostics along a trajectory.

    energy is sampled at micro-interval midpoints (where the discrete
    velocities and midpoint configurations live); hub momentum and the
    forced conservation defect are sampled at macro nodes.
    """

    energy_times: np.ndarray
    energy: np.ndarray
    macro_times: np.ndarray
    hub_momentum: np.ndarray
    conservation_defect: np.ndarray
    modal_momenta: np.ndarray = field(repr=False, default=None)


def diagnostics(msys: ModalSystem, traj: MultirateTrajectory) -> Diagnostics:
    """Total energy, hub angular momentum p_theta and the forced
    conservation defect Psi along a trajectory.

    Psi at node k compares the hub-momentum change against the control
    impulse accumulated over the k completed macro intervals; it vanishes
    identically on solutions of the stepping equations.
    """
    grid = traj.grid
    p, dt = grid.micro_count, grid.micro_step
    r = msys.n_slow

    v_f = np.diff(traj.fast, axis=0) / dt
    f_mid = 0.5 * (traj.fast[:-1] + traj.fast[1:])
    v_s = np.diff(traj.slow, axis=0) / grid.macro_step
    w = (2.0 * np.arange(p) + 1.0) / (2.0 * p)
    # (n_macro, p, r) slow midpoints, flattened to the micro-interval axis.
    s_mid = traj.slow[:-1, None, :] + w[None, :, None] * np.diff(traj.slow, axis=0)[:, None, :]
    s_mid = s_mid.reshape(-1, r)
    v_s = np.repeat(v_s, p, axis=0)

    energy = 0.5 * (
        np.sum(v_s**2, axis=1)
        + np.sum(v_f**2, axis=1)
        + s_mid**2 @ msys.lambda_slow
        + f_mid**2 @ msys.lambda_fast
    )

    momenta = node_momenta(msys, grid, traj)
    # Physical momenta satisfy E^T [p_theta; p_eta] = p_modal, so
    # p_theta = first column of E^{-T} dotted with the modal momenta.
    hub_momentum = momenta @ msys.inverse_modal_matrix[:, 0]
    impulses = dt * np.sum(traj.controls, axis=1)
    defect = hub_momentum - hub_momentum[0]
    defect[1:] -= np.cumsum(impulses)

    return Diagnostics(
        energy_times=grid.micro_midpoint_times(),
        energy=energy,
        macro_times=grid.macro_times(),
        hub_momentum=hub_momentum,
        conservation_defect=defect,
        modal_momenta=momenta,
    )
