"""Hermitian-matrix utilities shared by the density-matrix consumers.

Density matrices appear in two discretizations: kernels rho(z, z') on a grid,
where the operator trace is sum(diag) * dz, and plain matrices in a discrete
basis (weight 1).  Helpers below take the quadrature weight explicitly so both
cases go through the same code.
"""

from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)

HERMITICITY_TOL = 1e-12
PSD_TOL = 1e-10


class NotPositiveSemidefiniteError(ValueError):
    pass


def check_hermitian(mat: np.ndarray, tol: float = HERMITICITY_TOL) -> None:
    scale = max(np.abs(mat).max(), 1e-300)
    dev = np.abs(mat - mat.conj().T).max() / scale
    if dev > tol:
        raise ValueError(f"matrix is not Hermitian (relative deviation {dev:.3e})")


def hermitian_sqrt(mat: np.ndarray, psd_tol: float = PSD_TOL) -> np.ndarray:
    """Principal square root of a Hermitian PSD matrix.

    Eigenvalues in [-psd_tol, 0) are clipped to zero; anything below raises.
    """
    mat = np.asarray(mat)
    check_hermitian(mat)
    w, v = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    floor = -psd_tol * max(1.0, abs(w[-1]))
    if w[0] < floor:
        raise NotPositiveSemidefiniteError(
            f"not PSD: smallest eigenvalue {w[0]:.3e} below {floor:.3e}"
        )
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def clip_psd(mat: np.ndarray, weight: float = 1.0) -> np.ndarray:
    """Project onto the PSD cone and renormalize to unit trace.

    Wigner-averaged density matrices carry small negative eigenvalues (and,
    after the vacuum subtraction, exactly -1/2 in unsampled directions); the
    clipped mass is logged for diagnostics.  `weight` is the quadrature weight
    of the discretization (dz for kernels, 1 for discrete bases).
    """
    mat = np.asarray(mat)
    w, v = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    clipped = -w[w < 0.0].sum() * weight
    if clipped > 0.0:
        log.debug("clip_psd: removed negative mass %.3e", clipped)
    w = np.clip(w, 0.0, None)
    out = (v * w) @ v.conj().T
    tr = np.trace(out).real * weight
    if tr <= 0.0:
        raise NotPositiveSemidefiniteError("matrix has no positive mass")
    return out / tr
