"""Ellipsoid calculus: membership, affine images, bounded-input steps and the
limiter sector bound."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (
    NumericsError,
    SymMatrix,
    as_array,
    block_diag,
    cholesky,
    condition_number,
    lambda_max,
    spd_inverse,
    sym,
)

LIMITER_LO = 0.07
LIMITER_HI = 0.098


class EllipsoidError(ValueError):
    pass


class InvarianceError(NumericsError):
    """The bounded-input block matrix is not negative definite."""

    def __init__(self, message: str, eigenvalue: float):
        super().__init__(message)
        self.eigenvalue = eigenvalue


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """The set ``{x : (x - c)^T Q^-1 (x - c) <= level}``.

    Parameters
    ----------
    Q : SymMatrix or array_like
        Positive definite shape matrix.
    center : array_like, optional
        Defaults to the origin.
    level : float
        Positive level, default 1.
    """

    Q: SymMatrix
    center: np.ndarray | None = None
    level: float = 1.0

    def __post_init__(self):
        q = self.Q if isinstance(self.Q, SymMatrix) else SymMatrix(self.Q)
        object.__setattr__(self, "Q", q)
        c = np.zeros(q.n) if self.center is None else np.array(self.center, dtype=float).reshape(-1)
        if c.shape != (q.n,):
            raise EllipsoidError(f"center has length {c.size}, expected {q.n}")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        if not self.level > 0:
            raise EllipsoidError("level must be positive")
        if cholesky(q.array) is None:
            raise EllipsoidError("shape matrix Q is not positive definite")

    @property
    def n(self) -> int:
        return self.Q.n

    @classmethod
    def from_P(cls, P, center=None, level: float = 1.0) -> "Ellipsoid":
        """Build from the quadratic-form matrix ``P = Q^-1``."""
        if cholesky(as_array(P)) is None:
            raise EllipsoidError("P is not positive definite")
        return cls(SymMatrix(spd_inverse(P)), center, level)

    @property
    def P(self) -> np.ndarray:
        return spd_inverse(self.Q.array)

    def conditioning(self) -> float:
        return condition_number(self.Q)

    def quadratic_form(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape != (self.n,):
            raise EllipsoidError(f"point has dimension {x.size}, expected {self.n}")
        d = x - self.center
        L = np.linalg.cholesky(self.Q.array)
        z = np.linalg.solve(L, d)
        return float(z @ z)

    def scaled(self, s: float) -> "Ellipsoid":
        """Same center and level with ``Q`` multiplied by ``s``."""
        return Ellipsoid(self.Q.scaled(s), self.center, self.level)

    def to_json(self) -> dict:
        return {"Q": self.Q.array.tolist(), "center": self.center.tolist(), "level": self.level}

    @classmethod
    def from_json(cls, obj: dict) -> "Ellipsoid":
        return cls(SymMatrix(obj["Q"]), obj.get("center"), float(obj.get("level", 1.0)))


@dataclass(frozen=True)
class Membership:
    inside: bool
    margin: float

    def __bool__(self) -> bool:
        return self.inside


def contains(e: Ellipsoid, x) -> Membership:
    """Membership with margin ``level - (x - c)^T Q^-1 (x - c)``."""
    q = e.quadratic_form(x)
    return Membership(q <= e.level, e.level - q)


def affine_image(e: Ellipsoid, L, b=None) -> Ellipsoid:
    """Exact image under ``y = L x + b``.

    Raises
    ------
    EllipsoidError
        If ``L`` does not have full row rank.
    """
    L = np.array(L, dtype=float, ndmin=2)
    if L.shape[1] != e.n:
        raise EllipsoidError(f"L has {L.shape[1]} columns, expected {e.n}")
    if np.linalg.matrix_rank(L) < L.shape[0]:
        raise EllipsoidError("L is rank deficient; degenerate images are unsupported")
    b = np.zeros(L.shape[0]) if b is None else np.asarray(b, dtype=float).reshape(-1)
    return Ellipsoid(SymMatrix(sym(L @ e.Q.array @ L.T)), L @ e.center + b, e.level)


def invariance_block(A, B, P, xi: float) -> np.ndarray:
    """``[[A'PA - P + xi P, A'PB], [B'PA, B'PB - xi I]]``."""
    A = np.array(A, dtype=float, ndmin=2)
    B = np.array(B, dtype=float, ndmin=2)
    P = as_array(P)
    if B.size == 0:
        B = np.zeros((A.shape[0], 0))
    top = np.hstack([A.T @ P @ A - P + xi * P, A.T @ P @ B])
    bot = np.hstack([B.T @ P @ A, B.T @ P @ B - xi * np.eye(B.shape[1])])
    return sym(np.vstack([top, bot]))


@dataclass(frozen=True, eq=False)
class StepCertificate:
    successor: Ellipsoid
    margin: float


def bounded_input_step(e: Ellipsoid, A, B, input_bound: float, P, xi: float) -> StepCertificate:
    """Certified successor of ``e`` under ``x+ = A x + B u`` with ``|u| <= input_bound``.

    ``e`` must be ``{x : x' P x <= 1}``. When the invariance block matrix is
    negative definite the set is invariant, so the successor is ``e`` itself.
    Inputs bounded by ``input_bound`` are normalized to the unit ball by
    scaling ``B``.

    Raises
    ------
    InvarianceError
        Carrying the largest block eigenvalue when the check fails.
    """
    P = as_array(P)
    if not np.allclose(e.P, P, rtol=1e-9, atol=1e-12 * max(1.0, np.abs(P).max())) or np.any(e.center != 0):
        raise EllipsoidError("e must be the centered ellipsoid x' P x <= 1")
    if input_bound <= 0:
        raise ValueError("input bound must be positive")
    B = np.array(B, dtype=float, ndmin=2) * (input_bound / np.sqrt(e.level))
    blk = invariance_block(A, B, P / e.level, xi)
    lam = lambda_max(blk)
    if lam >= 0:
        raise InvarianceError(f"invariance block is not negative definite: lambda_max = {lam:.6g}", lam)
    return StepCertificate(e, -lam)


def step_image_bound(e: Ellipsoid, A, B, input_bound: float, lam: float) -> Ellipsoid:
    """Outer bound of ``{A x + B u : x in e, |u| <= input_bound}`` for multiplier ``lam``.

    Uses ``A Q A' / (1 - lam) + B B' r^2 / lam`` for ``0 < lam < 1``.
    """
    if not 0 < lam < 1:
        raise ValueError("multiplier must lie in (0, 1)")
    A = np.array(A, dtype=float, ndmin=2)
    B = np.array(B, dtype=float, ndmin=2)
    Q = e.level * e.Q.array
    Qn = A @ Q @ A.T / (1 - lam) + (input_bound**2 / lam) * (B @ B.T)
    return Ellipsoid(SymMatrix(sym(Qn)), A @ e.center, 1.0)


@dataclass(frozen=True)
class SectorBound:
    """Slopes ``0 < m2 < m1`` around the midpoint ``delta``."""

    m1: float
    m2: float
    delta: float

    def __post_init__(self):
        if not 0 < self.m2 < self.m1:
            raise ValueError("sector slopes need 0 < m2 < m1")

    @property
    def kappa1(self) -> float:
        return self.m1 * self.m2

    @property
    def kappa2(self) -> float:
        return 0.5 * (self.m1 + self.m2)

    @classmethod
    def limiter(cls, m2: float, lo: float = LIMITER_LO, hi: float = LIMITER_HI) -> "SectorBound":
        """Sector for the fuel-command limiter, ``m1 = 1`` and ``delta`` the range midpoint."""
        return cls(1.0, m2, 0.5 * (lo + hi))


def sector_quadratic_form(s: SectorBound, C, D) -> SymMatrix:
    """Matrix ``M`` with ``z' M z = (yt - m1 v)(yt - m2 v)``, ``v = C x + D u - delta``.

    ``z = (x, u, yt, 1)``; the sector condition is ``z' M z <= 0``.
    """
    C = np.array(C, dtype=float, ndmin=2)
    D = np.array(D, dtype=float, ndmin=2)
    if C.shape[0] != 1 or D.shape[0] != 1:
        raise ValueError("sector form needs a scalar output")
    n, m = C.shape[1], D.shape[1]
    # v = w . z and yt = e . z
    w = np.concatenate([C[0], D[0], [0.0], [-s.delta]])
    e = np.zeros(n + m + 2)
    e[n + m] = 1.0
    M = np.outer(e, e) - s.kappa2 * (np.outer(e, w) + np.outer(w, e)) + s.kappa1 * np.outer(w, w)
    return SymMatrix(M)


def saturate(u: float, lo: float = LIMITER_LO, hi: float = LIMITER_HI) -> float:
    if not lo < hi:
        raise ValueError("need lo < hi")
    return float(min(max(u, lo), hi))


def lift_with_input(e: Ellipsoid, n_inputs: int, input_bound: float, lam: float) -> Ellipsoid:
    """S-procedure lift of ``x in e`` and ``|u| <= r`` to one ellipsoid over ``(x, u)``."""
    if not 0 < lam < 1:
        raise ValueError("multiplier must lie in (0, 1)")
    Q = block_diag(e.level * e.Q.array / (1 - lam), (input_bound**2 / lam) * np.eye(n_inputs))
    return Ellipsoid(SymMatrix(Q), np.concatenate([e.center, np.zeros(n_inputs)]), 1.0)
