"""Tolerance defaults shared by every module.

A single :class:`Tolerances` record holds all numeric thresholds so that tests
and the command line can tighten or loosen them in one place.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path


@dataclass(frozen=True)
class Tolerances:
    """Numeric thresholds used across the toolchain.

    Attributes
    ----------
    eig_residual : float
        Relative residual bound ``||m v - lam v|| <= eig_residual * ||m||``.
    psd_margin : float
        Default margin for positive definiteness tests.
    symmetry_abs : float
        Largest asymmetry accepted when parsing symmetric matrix files.
    lmi_margin : float
        Strict LMI blocks must reach ``lambda_max <= -lmi_margin`` (relative
        to ``||P||``) for the solver to report feasibility.
    lmi_pd : float
        Smallest eigenvalue of a normalized certificate.
    brl_tol : float
        Slack allowed on the semidefinite bounded real blocks.
    containment : float
        Slack in ``lambda_max(Q_img Q_post^-1) <= 1 + containment``.
    hull_rel : float
        Relative spread below which an entry counts as constant.
    solver_max_iter : int
        Newton iteration cap of the barrier solver.
    invariance_p_max : float
        Upper bound ``P <= p_max I`` used for the non-homogeneous LMI kinds.
    """

    eig_residual: float = 1e-10
    psd_margin: float = 0.0
    symmetry_abs: float = 1e-9
    lmi_margin: float = 1e-8
    lmi_pd: float = 1e-9
    brl_tol: float = 1e-9
    containment: float = 1e-9
    hull_rel: float = 1e-12
    solver_max_iter: int = 500
    invariance_p_max: float = 1e6

    def updated(self, **changes) -> "Tolerances":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Tolerances":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown tolerance keys: {sorted(unknown)}")
        return replace(cls(), **data)

    @classmethod
    def from_file(cls, path: str | Path) -> "Tolerances":
        return cls.from_dict(json.loads(Path(path).read_text()))


DEFAULT = Tolerances()
