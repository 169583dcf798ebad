"""1D simulator of a trapped ion coupled to a bosonic Josephson junction."""

__version__ = "0.1.0"

from .grid import ComplexField, Grid, apply_kinetic, inner_product
from .potentials import (
    SPIN_DOWN,
    SPIN_UP,
    AtomIonModelParams,
    DoubleWellParams,
    IonTrapParams,
    TransportSchedule,
)

__all__ = [
    "ComplexField",
    "Grid",
    "apply_kinetic",
    "inner_product",
    "AtomIonModelParams",
    "DoubleWellParams",
    "IonTrapParams",
    "TransportSchedule",
    "SPIN_DOWN",
    "SPIN_UP",
    "__version__",
]
