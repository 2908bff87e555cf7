"""Verification toolchain for gain-scheduled discrete-time controllers."""
from .config import DEFAULT, Tolerances
from .ellipsoid import Ellipsoid, SectorBound
from .lmi import LmiKind, LmiProblem, LyapunovCertificate, Status, check_certificate, solve
from .model import OperatingPoint, StateSpace, load_fixture
from .numerics import SymMatrix

__version__ = "0.1.0"

__all__ = [
    "DEFAULT",
    "Ellipsoid",
    "LmiKind",
    "LmiProblem",
    "LyapunovCertificate",
    "OperatingPoint",
    "SectorBound",
    "StateSpace",
    "Status",
    "SymMatrix",
    "Tolerances",
    "check_certificate",
    "load_fixture",
    "solve",
]
