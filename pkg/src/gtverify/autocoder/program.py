"""Syntax tree of an annotated straight-line step function."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TACTICS = ("AffineEllipsoid", "SProcedure")
ROLES = ("state", "input", "output")


@dataclass(frozen=True)
class Declaration:
    """A scalar variable. ``name`` is the spelling used in expressions."""

    name: str
    role: str
    ctype: str = "REAL"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class Assignment:
    """``lhs = sum(coef * var) + const``. Zero coefficients are dropped."""

    lhs: str
    terms: tuple[tuple[float, str], ...]
    const: float = 0.0

    def __post_init__(self):
        terms = tuple((float(c), str(v)) for c, v in self.terms if float(c) != 0.0)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "const", float(self.const))

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(v for _, v in self.terms))

    def coefficient(self, var: str) -> float:
        return sum(c for c, v in self.terms if v == var)


@dataclass(frozen=True)
class EllipsoidRef:
    """``in_ellipsoidQ(QMat_k, vect_of_N_scalar(vars))``."""

    qmat: int
    vars: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "vars", tuple(self.vars))


@dataclass(frozen=True)
class Ball:
    """``in_ball(vect_of_N_scalar(vars), bound)``: the fresh bounded inputs."""

    vars: tuple[str, ...]
    bound: float

    def __post_init__(self):
        object.__setattr__(self, "vars", tuple(self.vars))
        object.__setattr__(self, "bound", float(self.bound))


@dataclass(frozen=True)
class ProofTactic:
    name: str
    lam: float | None = None

    def __post_init__(self):
        if self.lam is not None:
            object.__setattr__(self, "lam", float(self.lam))

    @property
    def known(self) -> bool:
        return self.name in TACTICS


AFFINE = ProofTactic("AffineEllipsoid")


@dataclass(frozen=True)
class Behavior:
    """Annotation of one statement."""

    label: str
    pre: EllipsoidRef
    post: EllipsoidRef
    tactic: ProofTactic
    assumes: Ball | None = None


@dataclass(frozen=True)
class AnnotatedProgram:
    """Straight-line step function with ellipsoid contracts.

    ``qmats`` maps matrix ids to row tuples so that equality is exact.
    ``behaviors[k]`` annotates ``statements[k]``.
    """

    function: str
    declarations: tuple[Declaration, ...]
    statements: tuple[Assignment, ...]
    requires: EllipsoidRef
    ensures: EllipsoidRef
    behaviors: tuple[Behavior, ...]
    qmats: tuple[tuple[int, tuple[tuple[float, ...], ...]], ...]
    valid: tuple[str, ...] = ()
    state_type: str = "t_step_state"
    io_type: str = "t_step_io"

    def __post_init__(self):
        for name in ("declarations", "statements", "behaviors", "valid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        # canonical order: states, inputs, outputs
        decls = sorted(self.declarations, key=lambda d: ROLES.index(d.role))
        object.__setattr__(self, "declarations", tuple(decls))
        qm = tuple(
            (int(k), tuple(tuple(float(x) for x in row) for row in rows)) for k, rows in self.qmats
        )
        object.__setattr__(self, "qmats", qm)
        self.validate()

    def validate(self) -> None:
        if len(self.behaviors) != len(self.statements):
            raise ValueError("every statement needs exactly one annotation")
        names = [d.name for d in self.declarations]
        if len(set(names)) != len(names):
            raise ValueError("duplicate declaration")
        declared = set(names)
        ids = [k for k, _ in self.qmats]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate QMat id")
        table = dict(self.qmats)
        refs = [self.requires, self.ensures] + [r for b in self.behaviors for r in (b.pre, b.post)]
        for ref in refs:
            for v in ref.vars:
                if v not in declared:
                    raise ValueError(f"undeclared variable {v} in ellipsoid vector")
            if ref.qmat not in table:
                raise ValueError(f"QMat_{ref.qmat} is not defined")
            rows = table[ref.qmat]
            if len(rows) != len(ref.vars) or any(len(r) != len(ref.vars) for r in rows):
                raise ValueError(f"QMat_{ref.qmat} does not match a vector of {len(ref.vars)} scalars")
        for b in self.behaviors:
            if b.assumes is not None:
                for v in b.assumes.vars:
                    if v not in declared:
                        raise ValueError(f"undeclared variable {v} in input bound")
        for s in self.statements:
            for v in (s.lhs,) + s.variables:
                if v not in declared:
                    raise ValueError(f"undeclared variable {v} in statement")

    def qmat(self, k: int) -> np.ndarray:
        return np.array(dict(self.qmats)[k], dtype=float)

    def role(self, name: str) -> str:
        for d in self.declarations:
            if d.name == name:
                return d.role
        raise KeyError(name)

    def names(self, role: str) -> tuple[str, ...]:
        return tuple(d.name for d in self.declarations if d.role == role)


def qmat_rows(Q) -> tuple[tuple[float, ...], ...]:
    a = np.asarray(Q, dtype=float)
    return tuple(tuple(float(x) for x in row) for row in a)
