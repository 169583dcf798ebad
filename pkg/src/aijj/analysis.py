"""Fidelity metrics, Fourier diagnostics, spectra and sweep orchestration."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .basis import BosonBasis, IonBasis
from .grid import ComplexField, inner_product
from .linalg import hermitian_sqrt
from .potentials import TransportSchedule, transport_q

log = logging.getLogger(__name__)


def uhlmann_fidelity(rho: np.ndarray, sigma: np.ndarray, weight: float = 1.0) -> float:
    """Tr sqrt( sqrt(rho) sigma sqrt(rho) ) for unit-trace PSD matrices.

    `weight` is the quadrature weight of the discretization (dz for grid
    kernels, 1 for matrices that already carry it); both inputs must use the
    same convention.
    """
    rho = np.asarray(rho) * weight
    sigma = np.asarray(sigma) * weight
    if rho.shape != sigma.shape:
        raise ValueError("density matrices differ in dimension")
    root = hermitian_sqrt(rho)
    inner = root @ sigma @ root
    evals = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    f = float(np.sqrt(np.clip(evals, 0.0, None)).sum())
    return min(f, 1.0 + 1e-9)


def fidelity_to_pure(goal: ComplexField, rho: np.ndarray, weight: float = 1.0) -> float:
    """Uhlmann fidelity against a pure goal: sqrt(<goal|rho|goal>)."""
    g = goal.normalized().values
    val = np.real(weight**2 * np.vdot(g, rho @ g))
    return float(math.sqrt(max(val, 0.0)))


def overlap_fidelity(goal: ComplexField, psi: ComplexField) -> float:
    """|<goal|psi>| for normalized pure states; phase invariant."""
    return abs(inner_product(goal.normalized(), psi.normalized()))


def target_fidelity_estimate(
    f_up: float, f_down: float, c_up: complex, c_down: complex
) -> float:
    """Superposition-target estimate |c_up|^2 F_up + |c_down|^2 F_down.

    The weights must form a (near-)normalized pair; a deficit of up to 2%
    (population escaped to higher levels when the weights are measured
    occupancies) is tolerated and the combination is taken as given.
    """
    w_up, w_down = abs(c_up) ** 2, abs(c_down) ** 2
    if abs(w_up + w_down - 1.0) > 0.02:
        raise ValueError(f"weights sum to {w_up + w_down:.4f}, not 1")
    for f in (f_up, f_down):
        if not (0.0 <= f <= 1.0 + 1e-9):
            raise ValueError("fidelities must lie in [0, 1]")
    return float(w_up * f_up + w_down * f_down)


def fourier_peak(t: np.ndarray, series: np.ndarray) -> float:
    """Dominant angular frequency of a uniformly sampled real series.

    Mean-subtracted rectangular-window DFT; the winning bin is refined by
    quadratic interpolation over its two neighbours.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(series, dtype=float)
    if t.size < 16:
        raise ValueError("need at least 16 samples")
    dt = np.diff(t)
    if np.max(np.abs(dt - dt[0])) > 1e-9 * abs(dt[0]):
        raise ValueError("samples must be uniform")
    y = y - y.mean()
    if np.max(np.abs(y)) < 1e-12 or np.var(y) < 1e-12:
        raise ValueError("no oscillation: series is flat")
    amp = np.abs(np.fft.rfft(y))
    freqs = 2.0 * np.pi * np.fft.rfftfreq(y.size, d=dt[0])
    k = 1 + int(np.argmax(amp[1:]))
    if 0 < k < amp.size - 1:
        a, b, c = amp[k - 1], amp[k], amp[k + 1]
        denom = a - 2.0 * b + c
        shift = 0.0 if denom == 0 else 0.5 * (a - c) / denom
        shift = float(np.clip(shift, -0.5, 0.5))
    else:
        shift = 0.0
    return float(freqs[k] + shift * (freqs[1] - freqs[0]))


# -- single atom + ion spectrum vs separation ------------------------------------

def coupled_hamiltonian(
    bosons: BosonBasis, ions: IonBasis, w_tensor: np.ndarray, q: float
) -> np.ndarray:
    """Frozen-basis Hamiltonian of one atom and the ion at separation q.

    Index layout: |n_ion, m_atom> flattened with the atom index fastest.
    """
    na1, ni1 = bosons.n_levels, ions.n_levels
    h_at = np.diag(bosons.energies) - bosons.well_compensation(q)
    h = np.kron(np.eye(ni1), h_at)
    h += np.kron(np.diag(ions.energies), np.eye(na1))
    # W[m, n, n', m'] -> block (n, m), (n', m')
    h += np.transpose(w_tensor, (1, 0, 2, 3)).reshape(ni1 * na1, ni1 * na1)
    return h


def spectrum_vs_q(
    bosons: BosonBasis,
    ions: IonBasis,
    w_tensor: np.ndarray,
    q_values: Sequence[float],
    n_curves: int = 8,
):
    """Adiabatically labelled energy curves E_j(q) of the atom-ion pair.

    Curves are connected across q by maximal-overlap matching of the
    eigenvectors (ties broken by energy order); avoided crossings show up as
    gap minima along the curves.
    """
    q_values = np.asarray(q_values, dtype=float)
    dim = bosons.n_levels * ions.n_levels
    n_curves = min(n_curves, dim)
    energies = np.zeros((q_values.size, n_curves))
    prev_vecs = None
    for i, q in enumerate(q_values):
        w, vecs = np.linalg.eigh(coupled_hamiltonian(bosons, ions, w_tensor, q))
        if prev_vecs is None:
            sel = np.arange(n_curves)
        else:
            overlap = np.abs(prev_vecs.conj().T @ vecs)
            sel = np.full(n_curves, -1)
            taken = set()
            for j in range(n_curves):
                order = np.argsort(-overlap[j])
                for cand in order:
                    if cand not in taken:
                        sel[j] = cand
                        taken.add(cand)
                        break
        energies[i] = w[sel]
        prev_vecs = vecs[:, sel]
    return q_values, energies


# -- sweep orchestration ----------------------------------------------------------

@dataclass(frozen=True)
class SweepAxis:
    name: str
    values: tuple

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.size == 0:
            raise ValueError("axis needs at least one value")
        if vals.size > 1 and not (np.all(np.diff(vals) > 0) or np.all(np.diff(vals) < 0)):
            raise ValueError(f"axis {self.name} must be strictly monotone")


@dataclass(frozen=True)
class SweepSpec:
    axis1: SweepAxis
    axis2: SweepAxis
    fixed: dict = field(default_factory=dict)
    metrics: tuple = ()


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list

    def table(self) -> np.ndarray:
        """(len1 * len2, 2 + n_metrics) array, row-major over (axis1, axis2)."""
        width = 2 + len(self.spec.metrics)
        out = np.full((len(self.rows), width), np.nan)
        for i, row in enumerate(self.rows):
            out[i, 0] = row[self.spec.axis1.name]
            out[i, 1] = row[self.spec.axis2.name]
            for j, m in enumerate(self.spec.metrics):
                if row.get("status") == "ok":
                    out[i, 2 + j] = row.get(m, np.nan)
        return out

    def metric_grid(self, metric: str) -> np.ndarray:
        n1 = len(self.spec.axis1.values)
        n2 = len(self.spec.axis2.values)
        col = [
            row.get(metric, np.nan) if row.get("status") == "ok" else np.nan
            for row in self.rows
        ]
        return np.asarray(col, dtype=float).reshape(n1, n2)


def run_sweep(spec: SweepSpec, runner: Callable[[dict], dict]) -> SweepResult:
    """Run `runner` on every grid point; failures are recorded, not fatal.

    The runner receives the fixed parameters plus the two axis values and
    returns a dict of metric values.
    """
    rows = []
    for v1 in spec.axis1.values:
        for v2 in spec.axis2.values:
            point = dict(spec.fixed)
            point[spec.axis1.name] = float(v1)
            point[spec.axis2.name] = float(v2)
            row = {spec.axis1.name: float(v1), spec.axis2.name: float(v2)}
            try:
                row.update(runner(point))
                row["status"] = "ok"
            except Exception as exc:  # keep sweeping
                log.error("sweep point %s failed: %s", point, exc)
                row["status"] = f"error: {exc}"
            rows.append(row)
    return SweepResult(spec=spec, rows=rows)


def count_local_maxima(series: np.ndarray) -> int:
    """Strict interior local maxima of a 1D series."""
    y = np.asarray(series, dtype=float)
    return int(np.sum((y[1:-1] >= y[:-2]) & (y[1:-1] >= y[2:]) &
                      ((y[1:-1] > y[:-2]) | (y[1:-1] > y[2:]))))


def revival_period(t_wait: np.ndarray, fidelity: np.ndarray) -> float:
    """Period of the fidelity revivals along the waiting time."""
    return 2.0 * math.pi / fourier_peak(t_wait, fidelity)
