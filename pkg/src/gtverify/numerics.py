"""Dense symmetric linear algebra shared by the other modules."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .config import DEFAULT, Tolerances


class NumericsError(RuntimeError):
    """Base class for numeric failures."""


class NonConvergenceError(NumericsError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class SingularMatrixError(NumericsError):
    def __init__(self, message: str, eigenvalue: float):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class SymmetryError(ValueError):
    pass


class SymMatrix:
    """Immutable real symmetric matrix.

    The input is symmetrized by averaging with its transpose, so symmetry holds
    exactly after construction.

    Parameters
    ----------
    data : array_like
        Square finite matrix.
    """

    __slots__ = ("_a",)

    def __init__(self, data):
        a = np.array(data, dtype=float, copy=True)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"SymMatrix needs a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("SymMatrix entries must be finite")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        self._a = a

    @property
    def n(self) -> int:
        return self._a.shape[0]

    @property
    def array(self) -> np.ndarray:
        """Read-only view of the entries."""
        return self._a

    @property
    def entries(self) -> list[float]:
        """Row-major entries, length ``n * n``."""
        return self._a.ravel().tolist()

    def __array__(self, dtype=None, copy=None):
        return self._a if dtype is None else self._a.astype(dtype)

    def __eq__(self, other) -> bool:
        return isinstance(other, SymMatrix) and np.array_equal(self._a, other._a)

    def __hash__(self):
        return hash(self._a.tobytes())

    def __repr__(self) -> str:
        return f"SymMatrix(n={self.n})"

    def scaled(self, s: float) -> "SymMatrix":
        return SymMatrix(s * self._a)

    def norm(self) -> float:
        """Spectral norm."""
        return float(np.max(np.abs(np.linalg.eigvalsh(self._a))))

    def to_json(self) -> dict:
        return {"n": self.n, "rows": self._a.tolist()}

    @classmethod
    def from_json(cls, obj: dict, tol: Tolerances = DEFAULT) -> "SymMatrix":
        """Parse ``{"n": int, "rows": [[...], ...]}``, rejecting asymmetry.

        An optional ``"scale"`` key multiplies the rows.
        """
        try:
            n = int(obj["n"])
            rows = np.array(obj["rows"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed matrix object: {exc}") from exc
        if rows.shape != (n, n):
            raise ValueError(f"rows have shape {rows.shape}, expected ({n}, {n})")
        asym = np.abs(rows - rows.T)
        if asym.size and asym.max() > tol.symmetry_abs:
            i, j = np.unravel_index(np.argmax(asym), asym.shape)
            raise SymmetryError(
                f"entry ({i},{j}) differs from ({j},{i}) by {asym[i, j]:.3g}"
            )
        scale = float(obj.get("scale", 1.0))
        return cls(rows * scale)


def load_sym_matrix(path: str | Path, tol: Tolerances = DEFAULT) -> SymMatrix:
    return SymMatrix.from_json(json.loads(Path(path).read_text()), tol)


def as_array(m) -> np.ndarray:
    if isinstance(m, SymMatrix):
        return m.array
    return np.asarray(m, dtype=float)


@dataclass(frozen=True)
class Eigen:
    values: np.ndarray
    vectors: np.ndarray
    residual: float


def sym_eig(m, tol: Tolerances = DEFAULT) -> Eigen:
    """Eigendecomposition of a symmetric matrix.

    Parameters
    ----------
    m : SymMatrix or array_like
        Symmetric input. Arrays are symmetrized first.

    Returns
    -------
    Eigen
        Ascending eigenvalues, orthonormal eigenvectors as columns, and the
        largest relative residual.

    Raises
    ------
    NonConvergenceError
        If LAPACK fails or the residual bound is not met.
    """
    a = m.array if isinstance(m, SymMatrix) else SymMatrix(m).array
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NonConvergenceError(f"symmetric eigensolver failed: {exc}") from exc
    scale = float(np.max(np.abs(w))) if w.size else 0.0
    res = np.linalg.norm(a @ v - v * w, axis=0).max()
    rel = res / scale if scale > 0 else res
    if res > tol.eig_residual * scale and res > 0:
        raise NonConvergenceError(f"eigen residual {rel:.3g} exceeds bound", rel)
    return Eigen(w, v, float(rel))


@dataclass(frozen=True)
class DefinitenessReport:
    positive: bool
    lambda_min: float
    margin: float

    def __bool__(self) -> bool:
        return self.positive


def is_positive_definite(m, margin: float | None = None, tol: Tolerances = DEFAULT) -> DefinitenessReport:
    """Test ``lambda_min(m) > margin``."""
    margin = tol.psd_margin if margin is None else margin
    if margin < 0:
        raise ValueError("margin must be non-negative")
    lam = float(sym_eig(m, tol).values[0])
    return DefinitenessReport(lam > margin, lam, margin)


def condition_number(m, tol: Tolerances = DEFAULT) -> float:
    """Symmetric 2-norm condition number ``|lambda|_max / |lambda|_min``.

    Raises
    ------
    SingularMatrixError
        If the smallest eigenvalue magnitude is zero to working precision.
    """
    w = sym_eig(m, tol).values
    mags = np.abs(w)
    k = int(np.argmin(mags))
    hi = float(mags.max())
    if mags[k] <= np.finfo(float).eps * hi * len(w) or mags[k] == 0.0:
        raise SingularMatrixError(
            f"matrix is singular: eigenvalue {w[k]:.3g} is zero to working precision", float(w[k])
        )
    return hi / float(mags[k])


def cholesky(m) -> np.ndarray | None:
    """Lower Cholesky factor, or ``None`` when ``m`` is not positive definite."""
    try:
        return np.linalg.cholesky(as_array(m))
    except np.linalg.LinAlgError:
        return None


def max_generalized_eig(a, b) -> float:
    """Largest ``lambda`` with ``a v = lambda b v`` for symmetric ``a`` and PD ``b``.

    Equals ``lambda_max(a b^-1)``. Computed by Cholesky of ``b`` and a congruence,
    which stays accurate when ``b`` is badly conditioned.
    """
    a = as_array(a)
    b = as_array(b)
    lb = np.linalg.cholesky(b)
    x = sla.solve_triangular(lb, a, lower=True)
    c = sla.solve_triangular(lb, x.T, lower=True)
    return float(np.linalg.eigvalsh(0.5 * (c + c.T))[-1])


def solve_spd(m, rhs) -> np.ndarray:
    """Solve ``m x = rhs`` for symmetric positive definite ``m``."""
    return sla.cho_solve(sla.cho_factor(as_array(m), lower=True), np.asarray(rhs, dtype=float))


def spd_inverse(m) -> np.ndarray:
    a = as_array(m)
    inv = solve_spd(a, np.eye(a.shape[0]))
    return 0.5 * (inv + inv.T)


def lambda_max(m) -> float:
    return float(np.linalg.eigvalsh(SymMatrix(m).array)[-1])


def lambda_min(m) -> float:
    return float(np.linalg.eigvalsh(SymMatrix(m).array)[0])


def sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def block_diag(*blocks: Sequence) -> np.ndarray:
    return sla.block_diag(*[np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks])
