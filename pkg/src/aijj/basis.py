"""Frozen single-particle bases and the atom-ion coupling tensor.

The correlated dynamics expands each boson orbital on the eigenstates |m> of
the bare double well at a fixed reference separation q_ref, and the ion on
the harmonic-oscillator states |n> of its trap.  The atom-ion interaction
enters through the tensor W[m, n, n', m'] = <m, n| V_ai(z - Z) |n', m'>.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid, check_boundary_amplitude, kinetic_matrix
from .potentials import (
    AtomIonModelParams,
    DoubleWellParams,
    IonTrapParams,
    eval_atom_ion,
    eval_double_well,
)

log = logging.getLogger(__name__)

DEFAULT_Q_REF = 3.5
ORTHONORMALITY_TOL = 1e-8


class BasisResolutionError(ValueError):
    pass


def hermite_functions(x: np.ndarray, n_max: int) -> np.ndarray:
    """Orthonormal oscillator eigenfunctions h_0..h_n_max of -d^2+x^2.

    Stable three-term recurrence on the normalized functions.
    """
    h = np.zeros((n_max + 1, x.size))
    h[0] = np.pi**-0.25 * np.exp(-0.5 * x**2)
    if n_max >= 1:
        h[1] = math.sqrt(2.0) * x * h[0]
    for n in range(2, n_max + 1):
        h[n] = math.sqrt(2.0 / n) * x * h[n - 1] - math.sqrt((n - 1) / n) * h[n - 2]
    return h


@dataclass
class IonBasis:
    """Harmonic-trap eigenstates of the ion on its own (fine, local) grid."""

    trap: IonTrapParams
    z: np.ndarray          # ion coordinate samples
    states: np.ndarray     # (n_i+1, len(z)), real orthonormal
    energies: np.ndarray   # (n+1/2) omega

    @property
    def n_levels(self) -> int:
        return self.states.shape[0]

    @property
    def dz(self) -> float:
        return float(self.z[1] - self.z[0])


@dataclass
class BosonBasis:
    """Double-well eigenstates at the frozen reference separation."""

    grid: Grid
    dw_ref: DoubleWellParams
    states: np.ndarray     # (n_a+1, n_points), real orthonormal
    energies: np.ndarray
    z2: np.ndarray         # <m|z^2|m'>, for the moving-well compensation
    z4: np.ndarray         # <m|z^4|m'>

    @property
    def n_levels(self) -> int:
        return self.states.shape[0]

    def project(self, values: np.ndarray) -> np.ndarray:
        """Expansion coefficients of grid fields; batched over leading axes."""
        return values @ self.states.T * self.grid.dz

    def reconstruct(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs @ self.states

    def completeness(self, values: np.ndarray) -> float:
        """Fraction of the field norm captured by the truncated basis."""
        total = self.grid.dz * np.sum(np.abs(values) ** 2)
        kept = np.sum(np.abs(self.project(values)) ** 2)
        return float(kept / total)

    def well_compensation(self, q: float) -> np.ndarray:
        """<m| V_dw(q_ref) - V_dw(q) |m'>, exact in the z^2/z^4 moments.

        V_dw(z; q) = b (z^4/q^4 - 2 z^2/q^2 + 1); the constant cancels.
        """
        b, qr = self.dw_ref.b, self.dw_ref.q
        c4 = b * (qr**-4 - q**-4)
        c2 = -2.0 * b * (qr**-2 - q**-2)
        return c4 * self.z4 + c2 * self.z2


def build_ion_basis(trap: IonTrapParams, n_i: int, points_per_length: int = 32) -> IonBasis:
    ell = trap.ground_length
    half_span = (math.sqrt(2.0 * n_i + 1.0) + 8.0) * ell
    n_pts = int(points_per_length * 2 * half_span / ell) | 1  # odd, includes Z=0
    z = np.linspace(-half_span, half_span, n_pts)
    states = hermite_functions(z / ell, n_i) / math.sqrt(ell)
    energies = np.array([trap.level_energy(n) for n in range(n_i + 1)])
    gram = (states * (z[1] - z[0])) @ states.T
    if np.abs(gram - np.eye(n_i + 1)).max() > ORTHONORMALITY_TOL:
        raise BasisResolutionError("ion basis not orthonormal on its grid")
    return IonBasis(trap=trap, z=z, states=states, energies=energies)


def build_boson_basis(
    grid: Grid,
    dw: DoubleWellParams,
    n_a: int,
    q_ref: float = DEFAULT_Q_REF,
) -> BosonBasis:
    """Diagonalize -d^2/dz^2 + V_dw(q_ref) and keep the lowest n_a+1 states."""
    dw_ref = dw.with_q(q_ref)
    h = kinetic_matrix(grid)
    h[np.diag_indices_from(h)] += eval_double_well(dw_ref, grid.z)
    w, vecs = np.linalg.eigh(h)
    states = vecs[:, : n_a + 1].T / math.sqrt(grid.dz)
    # deterministic sign: largest-magnitude sample positive
    for m in range(n_a + 1):
        peak = np.argmax(np.abs(states[m]))
        if states[m, peak] < 0:
            states[m] = -states[m]
    try:
        check_boundary_amplitude(states[n_a])
    except ValueError as exc:
        raise BasisResolutionError(f"boson basis state {n_a} unresolved: {exc}") from exc
    dz = grid.dz
    zw = grid.z
    z2 = (states * zw**2) @ states.T * dz
    z4 = (states * zw**4) @ states.T * dz
    return BosonBasis(
        grid=grid, dw_ref=dw_ref, states=states, energies=w[: n_a + 1], z2=z2, z4=z4
    )


def build_bases(
    dw: DoubleWellParams,
    trap: IonTrapParams,
    grid: Grid,
    n_a: int,
    n_i: int,
    q_ref: float = DEFAULT_Q_REF,
):
    return build_boson_basis(grid, dw, n_a, q_ref), build_ion_basis(trap, n_i)


def coupling_tensor(
    bosons: BosonBasis,
    ions: IonBasis,
    ai: AtomIonModelParams,
    check_convergence: bool = True,
) -> np.ndarray:
    """W[m, n, n', m'] by 2D quadrature over the boson and ion grids.

    The ion-averaged potentials V_nn'(z) = <phi_n| V_ai(z - Z) |phi_n'> are
    computed on the fine ion grid, then sandwiched between boson states.
    W does not depend on the well separation q.
    """
    na1, ni1 = bosons.n_levels, ions.n_levels
    w = np.zeros((na1, ni1, ni1, na1))
    vmat = eval_atom_ion(ai, bosons.grid.z[:, None] - ions.z[None, :])
    dz_b = bosons.grid.dz
    for n in range(ni1):
        for np_ in range(n, ni1):
            pair = ions.states[n] * ions.states[np_] * ions.dz
            v_line = vmat @ pair
            block = (bosons.states * v_line) @ bosons.states.T * dz_b
            w[:, n, np_, :] = block
            if np_ != n:
                w[:, np_, n, :] = block.T
    if check_convergence:
        fine = build_ion_basis(ions.trap, ions.n_levels - 1, points_per_length=64)
        vmat_f = eval_atom_ion(ai, bosons.grid.z[:, None] - fine.z[None, :])
        pair = fine.states[0] ** 2 * fine.dz
        v_line = vmat_f @ pair
        ref = dz_b * np.sum(bosons.states[0] * v_line * bosons.states[0])
        err = abs(ref - w[0, 0, 0, 0]) / max(abs(ref), 1e-300)
        if err > 1e-6:
            raise BasisResolutionError(
                f"coupling quadrature not converged: relative change {err:.2e} "
                "under ion-grid refinement"
            )
    return w
