"""Finite-temperature truncated-Wigner machinery.

Thermal initial conditions are sampled in the particle-number-conserving
Bogoliubov basis around the initial condensate: each stochastic field is
sqrt(N) phi_0 + sum_k (beta_k u_k + beta_k* v_k*) with complex Gaussian
beta_k of variance nbar_k + 1/2.  One-body density matrices are Wigner
averages with the half-quantum vacuum diagonal removed: in dimensionless
form, dz <f(z) f*(z')> - delta_zz'/2, i.e. subtracting n_q = 1/(2 dz) from
the kernel diagonal.  Clipping the negative remainder and renormalizing to
unit trace makes the subtraction exact for any sampled mode count.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .coupled import CoupledSystem, _run_with_dt_control
from .gpe import GpeParams, propagate_fields, static_potential
from .grid import ComplexField, Grid, spectral_second_derivative, kinetic_matrix
from .linalg import clip_psd
from .potentials import TransportSchedule

log = logging.getLogger(__name__)

EPS_FLOOR = 1e-4
IMAG_TOL = 1e-7


class DynamicalInstabilityError(RuntimeError):
    pass


@dataclass
class BogoliubovModes:
    """Positive-norm excitation modes around a stationary condensate."""

    grid: Grid
    u: np.ndarray          # (M, n_points)
    v: np.ndarray          # (M, n_points)
    eps: np.ndarray        # (M,), ascending, > 0
    mu: float
    n_dropped: int         # sub-floor / negative-norm modes excluded

    @property
    def n_modes(self) -> int:
        return self.eps.size


@dataclass
class WignerEnsemble:
    """Stochastic initial (or evolved) matter-wave fields."""

    grid: Grid
    fields: np.ndarray     # (N_s, n_points), O(sqrt(N)) amplitudes
    kt: float
    seed: int
    n_atoms: int
    n_modes: int
    noncondensed_expected: float

    @property
    def n_trajectories(self) -> int:
        return self.fields.shape[0]

    def squared_norms(self) -> np.ndarray:
        return self.grid.dz * np.sum(np.abs(self.fields) ** 2, axis=-1)

    def mirrored(self) -> "WignerEnsemble":
        """Parity image z -> -z (the grid is symmetric)."""
        return WignerEnsemble(
            grid=self.grid, fields=self.fields[:, ::-1].copy(), kt=self.kt,
            seed=self.seed, n_atoms=self.n_atoms, n_modes=self.n_modes,
            noncondensed_expected=self.noncondensed_expected,
        )


def _real_condensate(condensate: ComplexField) -> np.ndarray:
    vals = condensate.normalized().values
    peak = vals[np.argmax(np.abs(vals))]
    vals = vals * (peak.conjugate() / abs(peak))
    if np.max(np.abs(vals.imag)) > 1e-8:
        raise ValueError("condensate must be real up to a global phase")
    return vals.real


def bogoliubov_modes(
    condensate: ComplexField,
    p: GpeParams,
    n_modes: int,
    nonlin_coeff: Optional[float] = None,
    eps_floor: float = EPS_FLOOR,
    basis_size: Optional[int] = None,
) -> BogoliubovModes:
    """Lowest positive-energy Bogoliubov modes, condensate projected out.

    The linearization uses the O(N) convention c = g N (matching the
    truncated-Wigner propagation of sqrt(N)-normalized fields), so the
    condensate is a zero mode of L - c phi^2 when it solves that GPE.  The
    eigenproblem is solved in the subspace of the lowest single-particle
    states orthogonal to the condensate; modes with |eps| below `eps_floor`
    or negative Bogoliubov norm (Landau partners of a metastable condensate,
    e.g. the empty-well transfer mode) are excluded and counted.
    """
    grid = condensate.grid
    phi = _real_condensate(condensate)
    c = p.g * p.n_atoms if nonlin_coeff is None else nonlin_coeff
    v_ext = static_potential(grid, p.dw, p.ai)
    dens = phi**2
    kin = np.real(np.vdot(phi, spectral_second_derivative(grid, phi)))
    mu = float(grid.dz * (kin + np.sum(v_ext * dens) + c * np.sum(dens**2)))

    h_sp = kinetic_matrix(grid)
    h_sp[np.diag_indices_from(h_sp)] += v_ext + 2.0 * c * dens
    n_grid = grid.n_points
    k_red = min(n_grid, basis_size or max(2 * n_modes + 60, 160))
    w_sp, vec_sp = scipy.linalg.eigh(h_sp, subset_by_index=[0, k_red - 1])

    # orthonormal subspace perpendicular to the condensate (l2 vectors)
    phi_l2 = phi * math.sqrt(grid.dz)
    perp = vec_sp - np.outer(phi_l2, phi_l2 @ vec_sp)
    u_svd, s_svd, _ = np.linalg.svd(perp, full_matrices=False)
    sub = u_svd[:, s_svd > 1e-8]

    l_red = sub.T @ (h_sp @ sub) - mu * np.eye(sub.shape[1])
    p_red = sub.T @ (c * dens[:, None] * sub)
    bdg = np.block([[l_red, p_red], [-p_red, -l_red]])
    evals, evecs = scipy.linalg.eig(bdg)

    scale = max(np.abs(evals).max(), 1.0)
    bad = np.abs(evals.imag) > IMAG_TOL * scale
    if np.any(bad):
        raise DynamicalInstabilityError(
            f"complex Bogoliubov energies: {np.sort_complex(evals[bad])[:6]}"
        )

    order = np.argsort(evals.real)
    u_list, v_list, e_list, dropped = [], [], [], 0
    k_sub = sub.shape[1]
    for idx in order:
        e = evals[idx].real
        if e <= 0.0:
            continue
        xu = evecs[:k_sub, idx]
        xv = evecs[k_sub:, idx]
        u_l2 = sub @ xu
        v_l2 = sub @ xv
        s_norm = float(np.sum(np.abs(u_l2) ** 2) - np.sum(np.abs(v_l2) ** 2))
        if e <= eps_floor or s_norm <= 0.0:
            dropped += 1
            continue
        scale_uv = 1.0 / math.sqrt(s_norm)
        u_list.append(u_l2 * scale_uv / math.sqrt(grid.dz))
        v_list.append(v_l2 * scale_uv / math.sqrt(grid.dz))
        e_list.append(e)
        if len(e_list) == n_modes:
            break
    if len(e_list) < n_modes:
        raise ValueError(
            f"only {len(e_list)} positive-norm modes available; "
            "increase basis_size or lower n_modes"
        )
    if dropped:
        log.info("bogoliubov_modes: excluded %d sub-floor/negative-norm modes", dropped)
    return BogoliubovModes(
        grid=grid,
        u=np.array(u_list),
        v=np.array(v_list),
        eps=np.array(e_list),
        mu=mu,
        n_dropped=dropped,
    )


def thermal_mode_occupations(modes: BogoliubovModes, kt: float) -> np.ndarray:
    """Bose factors nbar_k = 1/(exp(eps_k/kT) - 1)."""
    if kt <= 0.0:
        raise ValueError("kT must be positive")
    with np.errstate(over="ignore"):
        return 1.0 / np.expm1(np.minimum(modes.eps / kt, 700.0))


def expected_noncondensed(modes: BogoliubovModes, kt: float) -> float:
    """sum_k [ (nbar_k + 1/2) int(|u_k|^2 + |v_k|^2) - 1/2 ]."""
    var = thermal_mode_occupations(modes, kt) + 0.5
    weight = modes.grid.dz * np.sum(np.abs(modes.u) ** 2 + np.abs(modes.v) ** 2, axis=-1)
    return float(np.sum(var * weight - 0.5))


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream, bit-reproducible per (seed, index)."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))
    )


def sample_thermal_ensemble(
    condensate: ComplexField,
    modes: BogoliubovModes,
    kt: float,
    n_atoms: int,
    n_traj: int,
    seed: int,
    omega0: Optional[float] = None,
) -> WignerEnsemble:
    """Draw the stochastic initial fields of the truncated-Wigner method."""
    grid = condensate.grid
    phi = _real_condensate(condensate)
    var = thermal_mode_occupations(modes, kt) + 0.5
    noncond = expected_noncondensed(modes, kt)
    if omega0 is not None and kt < omega0:
        log.warning("kT = %.3g below hbar*omega0 = %.3g: outside the validity window",
                    kt, omega0)
    if noncond > 0.2 * n_atoms:
        log.warning("noncondensed fraction %.2f of N: Bogoliubov sampling marginal",
                    noncond / n_atoms)
    amp = np.sqrt(0.5 * var)
    fields = np.empty((n_traj, grid.n_points), dtype=np.complex128)
    base = math.sqrt(n_atoms) * phi
    for i in range(n_traj):
        rng = trajectory_rng(seed, i)
        xi = rng.standard_normal((2, modes.n_modes))
        beta = amp * (xi[0] + 1j * xi[1])
        fields[i] = base + beta @ modes.u + beta.conj() @ modes.v.conj()
    return WignerEnsemble(
        grid=grid, fields=fields, kt=kt, seed=seed, n_atoms=n_atoms,
        n_modes=modes.n_modes, noncondensed_expected=noncond,
    )


# -- density matrices -----------------------------------------------------------

def density_matrix_from_fields(fields: np.ndarray, dz: float) -> np.ndarray:
    """Unit-trace occupation matrix dz <f f^dagger> - I/2, clipped PSD.

    Subtracting half the identity removes the symmetric-ordering half quantum
    from every sampled mode; unsampled directions land at -1/2 and are
    removed by the PSD clip.
    """
    avg = fields.T @ fields.conj() / fields.shape[0]
    occ = dz * avg
    occ[np.diag_indices_from(occ)] -= 0.5
    return clip_psd(occ)


def goal_density_matrix(ensemble: WignerEnsemble, mirror: bool = False) -> np.ndarray:
    src = ensemble.mirrored() if mirror else ensemble
    return density_matrix_from_fields(src.fields, src.grid.dz)


def expected_thermal_density_matrix(
    condensate: ComplexField, modes: BogoliubovModes, kt: float, n_atoms: int
) -> np.ndarray:
    """Ensemble-expectation of the sampled density matrix (no Monte Carlo).

    Used by the mode-cutoff convergence gate, where sampling noise would
    swamp the truncation effect being measured.
    """
    grid = condensate.grid
    phi = _real_condensate(condensate)
    var = thermal_mode_occupations(modes, kt) + 0.5
    occ = n_atoms * np.outer(phi, phi).astype(complex)
    occ += (modes.u.T * var) @ modes.u.conj()
    occ += (modes.v.T.conj() * var) @ modes.v
    occ = occ * grid.dz
    occ[np.diag_indices_from(occ)] -= 0.5
    return clip_psd(occ)


# -- propagation ----------------------------------------------------------------

def propagate_ensemble_static(
    ensemble: WignerEnsemble,
    p: GpeParams,
    schedule: TransportSchedule,
    dt: Optional[float] = None,
) -> WignerEnsemble:
    """Evolve every trajectory with the time-dependent GPE (static ion).

    The nonlinear term is g times the field's own density; the fields carry
    the atom number themselves, so no (N - 1) factor appears.
    """
    out = propagate_fields(
        ensemble.grid, ensemble.fields, p.dw, p.ai, schedule,
        nonlin=p.g, dt=p.dt_real if dt is None else dt,
    )
    return WignerEnsemble(
        grid=ensemble.grid, fields=out, kt=ensemble.kt, seed=ensemble.seed,
        n_atoms=ensemble.n_atoms, n_modes=ensemble.n_modes,
        noncondensed_expected=ensemble.noncondensed_expected,
    )


@dataclass
class CoupledEnsembleResult:
    c: np.ndarray                 # (N_s, n_i+1) final amplitudes
    b: np.ndarray                 # (N_s, n_i+1, n_a+1) final orbitals
    times: np.ndarray
    occupancy_mean: np.ndarray    # (n_times, n_i+1) Wigner-averaged |c_n|^2

    def mean_occupancies(self) -> np.ndarray:
        return np.mean(np.abs(self.c) ** 2, axis=0)


def propagate_ensemble_coupled(
    ensemble: WignerEnsemble,
    sys: CoupledSystem,
    c0: np.ndarray,
    observer_stride: int = 50,
) -> CoupledEnsembleResult:
    """Evolve the stochastic fields under the norm-corrected coupled equations.

    Each field is projected onto the boson basis (all ion branches start with
    the same orbital) and the whole ensemble is propagated as one batch.
    """
    if not sys.norm_corrected:
        raise ValueError("ensemble propagation requires a norm-corrected system")
    coeffs = ensemble.fields @ sys.bosons.states.T * sys.bosons.grid.dz
    comp = np.sum(np.abs(coeffs) ** 2, axis=-1) / ensemble.squared_norms()
    if comp.min() < 0.98:
        log.warning("basis captures only %.4f of the worst stochastic field", comp.min())
    n_i1 = sys.ions.n_levels
    b0 = np.repeat(coeffs[:, None, :], n_i1, axis=1)
    c_vec = np.asarray(c0, dtype=np.complex128)
    c_vec = c_vec / np.linalg.norm(c_vec)
    c0_batch = np.tile(c_vec, (ensemble.n_trajectories, 1))

    times: list = []
    occ: list = []

    def make_observer():
        times.clear()
        occ.clear()

        def watch(t, c_arr, b_arr):
            times.append(t)
            occ.append(np.mean(np.abs(c_arr) ** 2, axis=0))

        return watch

    c_fin, b_fin, _ = _run_with_dt_control(
        sys, c0_batch, b0, 0.0, sys.schedule.total,
        make_observer=make_observer, observer_stride=observer_stride,
    )
    return CoupledEnsembleResult(
        c=c_fin, b=b_fin, times=np.array(times), occupancy_mean=np.array(occ)
    )


def coupled_one_body_density(result: CoupledEnsembleResult, sys: CoupledSystem) -> np.ndarray:
    """Wigner-averaged one-body matrix: sum_n <|c_n|^2> (dz <psi_n psi_n*> - I/2)."""
    dz = sys.bosons.grid.dz
    weights = np.mean(np.abs(result.c) ** 2, axis=0)
    occ = np.zeros((sys.bosons.grid.n_points,) * 2, dtype=complex)
    for n in range(sys.ions.n_levels):
        psi = result.b[:, n, :] @ sys.bosons.states
        occ += weights[n] * (dz * (psi.T @ psi.conj()) / psi.shape[0])
    occ[np.diag_indices_from(occ)] -= 0.5 * weights.sum()
    return clip_psd(occ)
