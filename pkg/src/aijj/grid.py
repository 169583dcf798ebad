"""Uniform 1D grid, complex fields and spectral operators.

Everything in the package works in polarization-potential units: lengths in
R*, energies in E* = hbar^2 / (2 m R*^2) and times in hbar/E*, where m is the
boson mass.  In these units the boson kinetic operator is -d^2/dz^2 and a
harmonic well of (angular) frequency w has potential w^2 z^2 / 4 and level
spacing w.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

SNAPSHOT_MAGIC = b"AIJJ"
SNAPSHOT_VERSION = 1

# Fields propagated spectrally must be dead at the box edges.
BOUNDARY_AMPLITUDE_TOL = 1e-8


class GridMismatchError(ValueError):
    """Raised when two fields do not share the same grid."""


@dataclass(frozen=True)
class Grid:
    """Uniform spatial lattice on [z_min, z_max], endpoints included."""

    z_min: float
    z_max: float
    n_points: int
    z: np.ndarray = field(init=False, repr=False, compare=False)
    k: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_points < 64 or self.n_points % 2:
            raise ValueError("n_points must be even and >= 64")
        if not self.z_max > self.z_min:
            raise ValueError("z_max must exceed z_min")
        z = np.linspace(self.z_min, self.z_max, self.n_points)
        # FFT wavenumbers of the periodic continuation (period n*dz).
        k = 2.0 * np.pi * sfft.fftfreq(self.n_points, d=z[1] - z[0])
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "k", k)

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / (self.n_points - 1)

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and self.z_min == other.z_min
            and self.z_max == other.z_max
            and self.n_points == other.n_points
        )

    def __hash__(self):
        return hash((self.z_min, self.z_max, self.n_points))


@dataclass
class ComplexField:
    """A wavefunction sampled on a grid (dimension length^-1/2)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != (self.grid.n_points,):
            raise ValueError("field length does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def norm(self) -> float:
        return float(np.sqrt(self.grid.dz * np.sum(np.abs(self.values) ** 2)))

    def normalized(self) -> "ComplexField":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize the zero field")
        return ComplexField(self.grid, self.values / n)

    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def copy(self) -> "ComplexField":
        return ComplexField(self.grid, self.values.copy())


def inner_product(a: ComplexField, b: ComplexField) -> complex:
    """Discrete <a|b> = dz * sum(conj(a) b); antilinear in the first slot."""
    if a.grid != b.grid:
        raise GridMismatchError("fields live on different grids")
    return complex(a.grid.dz * np.vdot(a.values, b.values))


def spectral_second_derivative(grid: Grid, values: np.ndarray) -> np.ndarray:
    """-d^2/dz^2 via FFT; acts along the last axis, batch-friendly."""
    return sfft.ifft(grid.k**2 * sfft.fft(values, axis=-1), axis=-1)


def apply_kinetic(f: ComplexField, mass_factor: float = 1.0) -> ComplexField:
    """Kinetic operator -mass_factor * d^2/dz^2 (positive spectrum)."""
    if mass_factor == 0.0:
        return ComplexField(f.grid, np.zeros_like(f.values))
    return ComplexField(
        f.grid, mass_factor * spectral_second_derivative(f.grid, f.values)
    )


def kinetic_matrix(grid: Grid, mass_factor: float = 1.0) -> np.ndarray:
    """Dense, symmetric matrix of the spectral -d^2/dz^2 operator."""
    eye = np.eye(grid.n_points)
    mat = sfft.ifft(grid.k[:, None] ** 2 * sfft.fft(eye, axis=0), axis=0)
    mat = mass_factor * mat.real
    return 0.5 * (mat + mat.T)


def check_boundary_amplitude(values: np.ndarray, tol: float = BOUNDARY_AMPLITUDE_TOL):
    """Spectral propagation needs |field| ~ 0 at the box edges."""
    vals = np.atleast_2d(values)
    edge = max(np.abs(vals[..., 0]).max(), np.abs(vals[..., -1]).max())
    peak = np.abs(vals).max()
    if peak > 0 and edge > tol * peak:
        raise ValueError(
            f"field boundary amplitude {edge:.3e} exceeds {tol:.1e} of peak; "
            "enlarge the grid"
        )


def gaussian_field(grid: Grid, center: float, width: float) -> ComplexField:
    """Normalized Gaussian exp(-(z-center)^2/(2 width^2))."""
    psi = np.exp(-((grid.z - center) ** 2) / (2.0 * width**2))
    return ComplexField(grid, psi.astype(complex)).normalized()


# -- binary snapshot format ---------------------------------------------------
# Little-endian: magic "AIJJ", u32 version, u32 n_points, f64 z_min, f64 z_max,
# then n_points (re, im) f64 pairs.


def write_field(path, f: ComplexField) -> None:
    header = struct.pack(
        "<4sIIdd",
        SNAPSHOT_MAGIC,
        SNAPSHOT_VERSION,
        f.grid.n_points,
        f.grid.z_min,
        f.grid.z_max,
    )
    data = np.empty(2 * f.grid.n_points, dtype="<f8")
    data[0::2] = f.values.real
    data[1::2] = f.values.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def read_field(path) -> ComplexField:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, n, z_min, z_max = struct.unpack_from("<4sIIdd", raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError("not an AIJJ snapshot")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    data = np.frombuffer(raw, dtype="<f8", offset=struct.calcsize("<4sIIdd"))
    if data.size != 2 * n:
        raise ValueError("snapshot payload truncated")
    values = data[0::2] + 1j * data[1::2]
    return ComplexField(Grid(z_min, z_max, n), values)
