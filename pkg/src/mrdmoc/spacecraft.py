"""Physical model of the hub + two-beam spacecraft.

A rigid hub with two identical cantilever Euler-Bernoulli appendages
(tip masses included) is reduced to N+1 generalized coordinates
``xi = [theta, eta_1 .. eta_N]`` with the assumed-modes expansion
``w(x, t) = sum_j phi_j(x) eta_j(t)``.  This module provides the mode-shape
basis and assembles the mass matrix M, stiffness matrix K and torque input
map D in those physical coordinates.

All quantities are in the slug-ft-s-lb unit system; unit conversions
(inches to feet) belong to config ingestion, not here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError

__all__ = ["SpacecraftParams", "ModeBasis", "SystemMatrices", "eval_mode_shape", "assemble_system"]


@dataclass(frozen=True)
class SpacecraftParams:
    """Structural parameters of the hub-beam-tip-mass system.

    Attributes:
        hub_radius: hub radius R [ft].
        hub_inertia: hub rotary inertia J_h [slug-ft^2].
        tip_mass: mass of each tip body m_t [slug].
        tip_inertia: rotary inertia of each tip body J_t [slug-ft^2].
        beam_length: appendage length L [ft].
        beam_linear_density: rho*A [slug/ft].
        flexural_rigidity: EI [lb-ft^2].
        num_modes: number N of assumed modes per appendage.
    """

    hub_radius: float
    hub_inertia: float
    tip_mass: float
    tip_inertia: float
    beam_length: float
    beam_linear_density: float
    flexural_rigidity: float
    num_modes: int

    def __post_init__(self):
        strictly_positive = {
            "hub_radius": self.hub_radius,
            "tip_mass": self.tip_mass,
            "beam_length": self.beam_length,
            "beam_linear_density": self.beam_linear_density,
            "flexural_rigidity": self.flexural_rigidity,
        }
        for name, value in strictly_positive.items():
            if not value > 0.0:
                raise ValueError(f"{name} must be strictly positive, got {value}")
        if self.hub_inertia < 0.0 or self.tip_inertia < 0.0:
            raise ValueError("hub_inertia and tip_inertia must be nonnegative")
        if self.num_modes < 1:
            raise ValueError(f"num_modes must be >= 1, got {self.num_modes}")


def rectangular_rigidity(elastic_modulus: float, height_ft: float, thickness_ft: float) -> float:
    """EI of a rectangular section bending about its stiff axis (deflection
    across the thin dimension): I = h*t^3/12."""
    return elastic_modulus * height_ft * thickness_ft**3 / 12.0


@dataclass(frozen=True)
class ModeBasis:
    """Clamped-free assumed-mode shapes on [0, L].

    phi_j(x) = 1 - cos(j*pi*x/L) + (1/2)(-1)^(j+1) (j*pi*x/L)^2.

    Each shape and its slope vanish at the clamped end x = 0.
    """

    length: float
    num_modes: int

    def __post_init__(self):
        if self.length <= 0.0:
            raise ValueError("length must be positive")
        if self.num_modes < 1:
            raise ValueError("num_modes must be >= 1")

    def evaluate(self, j: int, x, deriv: int = 0):
        """phi_j, phi_j' or phi_j'' at x (scalar or array), for 1 <= j <= N."""
        if not 1 <= j <= self.num_modes:
            raise ValueError(f"mode index {j} outside 1..{self.num_modes}")
        if deriv not in (0, 1, 2):
            raise ValueError(f"deriv must be 0, 1 or 2, got {deriv}")
        x = np.asarray(x, dtype=float)
        if np.any(x < 0.0) or np.any(x > self.length):
            raise ValueError("position outside beam span [0, L]")
        a = j * np.pi / self.length
        sign = 0.5 * (-1.0) ** (j + 1)
        if deriv == 0:
            out = 1.0 - np.cos(a * x) + sign * (a * x) ** 2
        elif deriv == 1:
            out = a * np.sin(a * x) + 2.0 * sign * a**2 * x
        else:
            out = a**2 * np.cos(a * x) + 2.0 * sign * a**2
        return out if out.ndim else float(out)


def eval_mode_shape(basis: ModeBasis, j: int, x: float, deriv: int = 0) -> float:
    """Evaluate the j-th assumed mode shape (or a derivative) at position x."""
    return basis.evaluate(j, x, deriv)


@dataclass(frozen=True)
class SystemMatrices:
    """Mass/stiffness/input triple in physical coordinates xi = [theta, eta].

    M is symmetric positive definite, K symmetric positive semidefinite with
    a vanishing first row/column (the rigid rotation is unstiffened), and
    D = [1, 0, ..., 0]^T maps the hub torque into generalized forces.
    """

    mass: np.ndarray
    stiffness: np.ndarray
    input_map: np.ndarray

    @property
    def n_coords(self) -> int:
        return self.mass.shape[0]


_BASE_QUAD_ORDER = 32
_MAX_QUAD_ORDER = 512
_QUAD_RTOL = 1e-12


def _gauss_nodes(order: int, length: float):
    """Gauss-Legendre nodes/weights mapped from [-1, 1] to [0, L]."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return 0.5 * length * (nodes + 1.0), 0.5 * length * weights


def _assemble_at_order(params: SpacecraftParams, basis: ModeBasis, order: int):
    n = params.num_modes
    R, L = params.hub_radius, params.beam_length
    mt, Jt = params.tip_mass, params.tip_inertia
    rho_a, ei = params.beam_linear_density, params.flexural_rigidity

    x, w = _gauss_nodes(order, L)
    # Tabulate shapes once: rows are modes 1..N.
    phi = np.array([basis.evaluate(j, x, 0) for j in range(1, n + 1)])
    curv = np.array([basis.evaluate(j, x, 2) for j in range(1, n + 1)])
    tip_val = np.array([basis.evaluate(j, L, 0) for j in range(1, n + 1)])
    tip_slope = np.array([basis.evaluate(j, L, 1) for j in range(1, n + 1)])

    mass = np.zeros((n + 1, n + 1))
    stiff = np.zeros((n + 1, n + 1))

    mass[0, 0] = params.hub_inertia + 2.0 * (
        Jt + mt * (R + L) ** 2 + np.dot(w, rho_a * (R + x) ** 2)
    )
    coupling = (
        2.0 * mt * (R + L) * tip_val
        + 2.0 * Jt * tip_slope
        + 2.0 * (phi * (rho_a * (R + x) * w)) @ np.ones_like(x)
    )
    mass[0, 1:] = coupling
    mass[1:, 0] = coupling

    # Upper triangle once, then mirror, so M == M.T and K == K.T exactly.
    for i in range(n):
        for j in range(i, n):
            m_ij = (
                2.0 * mt * tip_val[i] * tip_val[j]
                + 2.0 * Jt * tip_slope[i] * tip_slope[j]
                + 2.0 * np.dot(w, rho_a * phi[i] * phi[j])
            )
            k_ij = 2.0 * ei * np.dot(w, curv[i] * curv[j])
            mass[1 + i, 1 + j] = m_ij
            mass[1 + j, 1 + i] = m_ij
            stiff[1 + i, 1 + j] = k_ij
            stiff[1 + j, 1 + i] = k_ij
    return mass, stiff


def assemble_system(params: SpacecraftParams) -> SystemMatrices:
    """Assemble M, K, D for the given parameters.

    Beam integrals use fixed-order Gauss-Legendre quadrature with an
    automatic order-doubling check; the order escalates until doubling
    changes no entry by more than 1e-12 relative.
    """
    basis = ModeBasis(params.beam_length, params.num_modes)
    order = _BASE_QUAD_ORDER
    mass, stiff = _assemble_at_order(params, basis, order)
    while True:
        mass2, stiff2 = _assemble_at_order(params, basis, 2 * order)
        scale_m = np.max(np.abs(mass2)) or 1.0
        scale_k = np.max(np.abs(stiff2)) or 1.0
        drift = max(
            np.max(np.abs(mass - mass2)) / scale_m,
            np.max(np.abs(stiff - stiff2)) / scale_k,
        )
        if drift < _QUAD_RTOL:
            mass, stiff = mass2, stiff2
            break
        if 2 * order >= _MAX_QUAD_ORDER:
            raise NumericError(
                f"beam quadrature did not stabilize to {_QUAD_RTOL:g} "
                f"relative by order {2 * order} (drift {drift:.3e})"
            )
        order *= 2
        mass, stiff = mass2, stiff2

    input_map = np.zeros(params.num_modes + 1)
    input_map[0] = 1.0
    return SystemMatrices(mass=mass, stiffness=stiff, input_map=input_map)
