"""Modal decomposition and the slow/fast coordinate split.

Solving K e = lambda M e with mass-normalized eigenvectors (E^T M E = I)
decouples the linear dynamics into N+1 oscillators qdd_j + lambda_j q_j = Z_j tau.
The first ``r`` modal coordinates (lowest frequencies, including the rigid
rotation at lambda = 0) form the slow subsystem, the rest the fast one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ModelError, NumericError
from .spacecraft import SystemMatrices

__all__ = ["ModalSystem", "ModalState", "solve_modal", "to_modal", "from_modal"]

_ORTHO_TOL = 1e-10
_DIAG_TOL = 1e-8
_ZERO_EIG_TOL = 1e-10


@dataclass(frozen=True)
class ModalSystem:
    """Eigenstructure of (M, K) plus the slow/fast partition.

    Attributes:
        eigenvalues: lambda_1 <= ... <= lambda_{N+1} [rad^2/s^2]; lambda_1 is
            clamped to exactly 0 (rigid mode).
        modal_matrix: columns e_j, mass-normalized, deterministic signs.
        input_vector: Z = E^T D.
        split_index: r, number of slow coordinates (1 <= r <= N+1).
        inverse_modal_matrix: E^{-1} = E^T M, cached so transforms never
            invert E explicitly.
    """

    eigenvalues: np.ndarray
    modal_matrix: np.ndarray
    input_vector: np.ndarray
    split_index: int
    inverse_modal_matrix: np.ndarray

    @property
    def n_coords(self) -> int:
        return self.eigenvalues.size

    @property
    def n_slow(self) -> int:
        return self.split_index

    @property
    def n_fast(self) -> int:
        return self.n_coords - self.split_index

    @property
    def lambda_slow(self) -> np.ndarray:
        return self.eigenvalues[: self.split_index]

    @property
    def lambda_fast(self) -> np.ndarray:
        return self.eigenvalues[self.split_index :]

    @property
    def input_slow(self) -> np.ndarray:
        return self.input_vector[: self.split_index]

    @property
    def input_fast(self) -> np.ndarray:
        return self.input_vector[self.split_index :]

    @property
    def frequencies(self) -> np.ndarray:
        """Natural frequencies w_j = sqrt(lambda_j) [rad/s]."""
        return np.sqrt(np.maximum(self.eigenvalues, 0.0))


@dataclass(frozen=True)
class ModalState:
    """Modal configuration and rate, with slow/fast views."""

    q: np.ndarray
    qdot: np.ndarray
    split_index: int

    def __post_init__(self):
        if self.q.shape != self.qdot.shape or self.q.ndim != 1:
            raise ValueError("q and qdot must be 1-d arrays of equal length")
        if not 1 <= self.split_index <= self.q.size:
            raise ValueError("split index outside 1..N+1")

    @property
    def q_slow(self) -> np.ndarray:
        return self.q[: self.split_index]

    @property
    def q_fast(self) -> np.ndarray:
        return self.q[self.split_index :]

    @property
    def qdot_slow(self) -> np.ndarray:
        return self.qdot[: self.split_index]

    @property
    def qdot_fast(self) -> np.ndarray:
        return self.qdot[self.split_index :]


def _deterministic_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry is positive; magnitude
    ties resolve to the lowest row index."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        lead = np.argmax(np.abs(col))  # argmax returns the first maximizer
        if col[lead] < 0.0:
            out[:, j] = -col
    return out


def solve_modal(sys: SystemMatrices, r: int) -> ModalSystem:
    """Solve the generalized symmetric eigenproblem and build the modal system.

    Reduction is by Cholesky of M (scipy.linalg.eigh does L^{-1} K L^{-T}
    internally), which yields mass-normalized eigenvectors directly.
    """
    n = sys.n_coords
    if not 1 <= r <= n:
        raise ValueError(f"split index {r} outside 1..{n}")
    try:
        np.linalg.cholesky(sys.mass)
    except np.linalg.LinAlgError as exc:
        raise ModelError("mass matrix is not positive definite") from exc
    try:
        eigvals, eigvecs = scipy.linalg.eigh(sys.stiffness, sys.mass)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericError("generalized eigensolver failed to converge") from exc

    eigvecs = _deterministic_signs(eigvecs)
    lam_max = float(np.max(np.abs(eigvals)))
    eigvals = eigvals.copy()
    eigvals[np.abs(eigvals) <= _ZERO_EIG_TOL * lam_max] = 0.0

    ortho = eigvecs.T @ sys.mass @ eigvecs - np.eye(n)
    if np.max(np.abs(ortho)) > _ORTHO_TOL:
        raise NumericError("modal matrix failed mass-normalization check")
    diag = eigvecs.T @ sys.stiffness @ eigvecs - np.diag(eigvals)
    if np.max(np.abs(diag)) > _DIAG_TOL * max(lam_max, 1.0):
        raise NumericError("modal matrix failed stiffness-diagonalization check")

    return ModalSystem(
        eigenvalues=eigvals,
        modal_matrix=eigvecs,
        input_vector=eigvecs.T @ sys.input_map,
        split_index=r,
        inverse_modal_matrix=eigvecs.T @ sys.mass,
    )


def to_modal(msys: ModalSystem, xi: np.ndarray, xidot: np.ndarray) -> ModalState:
    """Map physical (xi, xidot) to modal coordinates via E^{-1} = E^T M."""
    xi = np.asarray(xi, dtype=float)
    xidot = np.asarray(xidot, dtype=float)
    if xi.shape != (msys.n_coords,) or xidot.shape != (msys.n_coords,):
        raise ValueError("physical state dimension mismatch")
    e_inv = msys.inverse_modal_matrix
    return ModalState(q=e_inv @ xi, qdot=e_inv @ xidot, split_index=msys.split_index)


def from_modal(msys: ModalSystem, state: ModalState):
    """Map a modal state back to physical coordinates: xi = E q."""
    if state.q.shape != (msys.n_coords,):
        raise ValueError("modal state dimension mismatch")
    e = msys.modal_matrix
    return e @ state.q, e @ state.qdot
