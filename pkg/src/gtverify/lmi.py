"""Construction, solution and independent checking of the three Lyapunov-type
LMI families: bounded-input invariance, bounded real lemma and common
Lyapunov stability."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .config import DEFAULT, Tolerances
from .numerics import SymMatrix, as_array, sym


class LmiKind(str, enum.Enum):
    INVARIANCE = "invariance"
    BOUNDED_REAL = "brl"
    COMMON = "common"


class Status(str, enum.Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNDECIDED = "undecided"


def _mat(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    if not np.all(np.isfinite(a)):
        raise ValueError("LMI data must be finite")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LmiProblem:
    """One LMI family instance over a shared unknown ``P`` of size ``n``.

    ``vertices`` hold ``(A, B)`` for invariance, ``(A, B, C, D)`` for the
    bounded real lemma and ``(A,)`` for common Lyapunov.
    """

    kind: LmiKind
    vertices: tuple[tuple[np.ndarray, ...], ...]
    xi: float | None = None
    gammas: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LmiKind(self.kind))
        if not self.vertices:
            raise ValueError("at least one vertex required")
        verts = tuple(tuple(_mat(m) for m in v) for v in self.vertices)
        object.__setattr__(self, "vertices", verts)
        n = verts[0][0].shape[0]
        for k, v in enumerate(verts):
            A = v[0]
            if A.shape != (n, n):
                raise ValueError(f"vertex {k}: A has shape {A.shape}, expected ({n}, {n})")
            if self.kind is LmiKind.INVARIANCE:
                if len(v) != 2 or v[1].shape[0] != n or v[1].shape[1] != verts[0][1].shape[1]:
                    raise ValueError(f"vertex {k}: expected (A, B) with B of {n} rows and consistent columns")
            elif self.kind is LmiKind.BOUNDED_REAL:
                if len(v) != 4:
                    raise ValueError(f"vertex {k}: expected (A, B, C, D)")
                _, B, C, D = v
                if B.shape[0] != n or C.shape[1] != n or D.shape != (C.shape[0], B.shape[1]):
                    raise ValueError(f"vertex {k}: inconsistent (A, B, C, D) shapes")
            elif len(v) != 1:
                raise ValueError(f"vertex {k}: expected (A,)")
        if self.kind is LmiKind.INVARIANCE:
            if self.xi is None or not 0 < self.xi < 1:
                raise ValueError("invariance LMI needs xi in (0, 1)")
        if self.kind is LmiKind.BOUNDED_REAL:
            if self.gammas is None or len(self.gammas) != len(verts):
                raise ValueError("bounded real LMI needs one gamma per vertex")
            g = tuple(float(x) for x in self.gammas)
            if any(x <= 0 for x in g):
                raise ValueError("gammas must be positive")
            object.__setattr__(self, "gammas", g)

    @property
    def n(self) -> int:
        return self.vertices[0][0].shape[0]

    @property
    def strict(self) -> bool:
        return self.kind is not LmiKind.BOUNDED_REAL

    @property
    def homogeneous(self) -> bool:
        return self.kind is LmiKind.COMMON

    def blocks(self, P) -> list[np.ndarray]:
        """Constraint matrices, one per vertex. Feasibility wants them negative."""
        P = as_array(P)
        if P.shape != (self.n, self.n):
            raise ValueError(f"P has shape {P.shape}, expected ({self.n}, {self.n})")
        out = []
        for k, v in enumerate(self.vertices):
            if self.kind is LmiKind.COMMON:
                (A,) = v
                out.append(sym(A.T @ P @ A - P))
            elif self.kind is LmiKind.INVARIANCE:
                A, B = v
                out.append(_invariance(A, B, P, self.xi))
            else:
                out.append(_bounded_real(*v, P, self.gammas[k]))
        return out

    def to_json(self) -> dict:
        d = {"kind": self.kind.value, "vertices": [[m.tolist() for m in v] for v in self.vertices]}
        if self.xi is not None:
            d["xi"] = self.xi
        if self.gammas is not None:
            d["gammas"] = list(self.gammas)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "LmiProblem":
        kind = LmiKind(obj["kind"])
        names = {LmiKind.COMMON: "A", LmiKind.INVARIANCE: "AB", LmiKind.BOUNDED_REAL: "ABCD"}[kind]
        verts = []
        for v in obj["vertices"]:
            if isinstance(v, dict):
                verts.append(tuple(v[k] for k in names))
            elif kind is LmiKind.COMMON and np.asarray(v).ndim == 2:
                verts.append((v,))
            else:
                verts.append(tuple(v))
        return cls(kind, tuple(verts), obj.get("xi"), obj.get("gammas"))


def _invariance(A, B, P, xi) -> np.ndarray:
    top = np.hstack([A.T @ P @ A - P + xi * P, A.T @ P @ B])
    bot = np.hstack([B.T @ P @ A, B.T @ P @ B - xi * np.eye(B.shape[1])])
    return sym(np.vstack([top, bot]))


def _bounded_real(A, B, C, D, P, gamma) -> np.ndarray:
    off = B.T @ P @ A + D.T @ C
    top = np.hstack([A.T @ P @ A - P + C.T @ C, off.T])
    bot = np.hstack([off, B.T @ P @ B + D.T @ D - gamma * np.eye(B.shape[1])])
    return sym(np.vstack([top, bot]))


def build_invariance_lmi(vertices: Sequence, xi: float) -> LmiProblem:
    """Per vertex ``[[A'PA - P + xi P, A'PB], [B'PA, B'PB - xi I]] < 0``."""
    return LmiProblem(LmiKind.INVARIANCE, tuple(tuple(v) for v in vertices), xi=xi)


def build_bounded_real_lmi(vertices: Sequence, gammas: Sequence[float]) -> LmiProblem:
    """Per vertex the bounded real block ``<= 0`` with ``gamma`` bounding the squared gain."""
    return LmiProblem(LmiKind.BOUNDED_REAL, tuple(tuple(v) for v in vertices), gammas=tuple(gammas))


def build_common_lyapunov_lmi(vertices: Sequence) -> LmiProblem:
    """Per vertex ``A' P A - P < 0``."""
    verts = tuple((v,) if not isinstance(v, tuple) else v for v in vertices)
    return LmiProblem(LmiKind.COMMON, verts)


@dataclass(frozen=True)
class CertificateReport:
    kind: LmiKind
    margins: tuple[float, ...]
    lambda_min_P: float
    passes: bool
    well_posed: bool = True
    threshold: float = 0.0

    @property
    def worst(self) -> float:
        return max(self.margins)

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "passes": self.passes,
            "margins": list(self.margins),
            "lambda_min_P": self.lambda_min_P,
            "well_posed": self.well_posed,
            "threshold": self.threshold,
        }


def check_certificate(problem: LmiProblem, P, tol: Tolerances = DEFAULT) -> CertificateReport:
    """Evaluate every constraint block at ``P``.

    Strict kinds pass iff every block's largest eigenvalue is negative and
    ``P`` is positive definite. The bounded real kind passes iff every block
    is below ``brl_tol`` and the well-posedness block ``gamma I - D'D - B'PB``
    is positive definite.
    """
    P = as_array(P)
    if P.shape != (problem.n, problem.n):
        raise ValueError(f"P has shape {P.shape}, expected ({problem.n}, {problem.n})")
    P = sym(P)
    w = np.linalg.eigvalsh(P)
    margins = tuple(float(np.linalg.eigvalsh(b)[-1]) for b in problem.blocks(P))
    pd = bool(w[0] > 0)
    if problem.strict:
        return CertificateReport(problem.kind, margins, float(w[0]), pd and all(m < 0 for m in margins))
    thr = tol.brl_tol
    wp = all(
        np.linalg.eigvalsh(g * np.eye(B.shape[1]) - D.T @ D - B.T @ P @ B)[0] > 0
        for (A, B, C, D), g in zip(problem.vertices, problem.gammas)
    )
    ok = pd and wp and all(m <= thr for m in margins)
    return CertificateReport(problem.kind, margins, float(w[0]), ok, wp, thr)


@dataclass(frozen=True, eq=False)
class LyapunovCertificate:
    P: SymMatrix
    kind: LmiKind
    margins: tuple[float, ...]
    iterations: int = 0
    final_margin: float = float("nan")
    xi: float | None = None

    @property
    def n(self) -> int:
        return self.P.n

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "P": self.P.array.tolist(),
            "margins": list(self.margins),
            "iterations": self.iterations,
            "final_margin": self.final_margin,
            "xi": self.xi,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LyapunovCertificate":
        return cls(
            SymMatrix(obj["P"]),
            LmiKind(obj["kind"]),
            tuple(obj.get("margins", ())),
            int(obj.get("iterations", 0)),
            float(obj.get("final_margin", float("nan"))),
            obj.get("xi"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Solver outcome.

    ``best_margin`` is the smallest worst-block value reached (normalized for
    the homogeneous kind); ``lower_bound`` bounds the optimum from below over
    the searched set ``lo I <= P <= hi I``.
    """

    status: Status
    certificate: LyapunovCertificate | None
    best_margin: float
    lower_bound: float
    iterations: int
    message: str = ""
    P: np.ndarray | None = field(default=None, repr=False)

    @property
    def feasible(self) -> bool:
        return self.status is Status.FEASIBLE

    def to_json(self) -> dict:
        d = {
            "status": self.status.value,
            "best_margin": self.best_margin,
            "lower_bound": self.lower_bound,
            "iterations": self.iterations,
            "message": self.message,
        }
        if self.certificate is not None:
            d["certificate"] = self.certificate.to_json()
        return d


# --- barrier solver -------------------------------------------------------


def _svec_basis(n: int) -> np.ndarray:
    """Symmetric basis matrices ``E_ij`` stacked as ``(d, n, n)``."""
    idx = [(i, j) for i in range(n) for j in range(i, n)]
    E = np.zeros((len(idx), n, n))
    for k, (i, j) in enumerate(idx):
        E[k, i, j] = 1.0
        E[k, j, i] = 1.0
    return E


def _from_svec(p: np.ndarray, E: np.ndarray) -> np.ndarray:
    return np.tensordot(p, E, axes=1)


class _Constraint:
    """``S(y) = S0 + sum_a y_a G_a``, required positive definite."""

    def __init__(self, S0: np.ndarray, G: np.ndarray):
        self.S0 = S0
        self.G = G

    def value(self, y: np.ndarray) -> np.ndarray:
        return self.S0 + np.tensordot(y, self.G, axes=1)

    @property
    def size(self) -> int:
        return self.S0.shape[0]


def _affine_blocks(problem: LmiProblem, E: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Each block as ``F0 + sum_a p_a F_a``."""
    n = problem.n
    base = problem.blocks(np.zeros((n, n)))
    lin = [np.empty((E.shape[0],) + b.shape) for b in base]
    for a in range(E.shape[0]):
        for k, b in enumerate(problem.blocks(E[a])):
            lin[k][a] = b - base[k]
    return list(zip(base, lin))


def _barrier(cons: list[_Constraint], y: np.ndarray, need_derivs: bool):
    """Value, gradient and Hessian of ``-sum log det S_j(y)``; ``None`` if infeasible."""
    f = 0.0
    dim = y.shape[0]
    g = np.zeros(dim)
    H = np.zeros((dim, dim))
    for c in cons:
        S = c.value(y)
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            return None
        f -= 2.0 * np.sum(np.log(np.diag(L)))
        if need_derivs:
            Li = sla.solve_triangular(L, np.eye(c.size), lower=True)
            W = Li @ c.G @ Li.T
            Wf = W.reshape(dim, -1)
            g -= np.trace(W, axis1=1, axis2=2)
            H += Wf @ Wf.T
    return f, g, H


def _solve_newton(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    scale = np.sqrt(np.maximum(np.diag(H), 1e-300))
    Hs = H / np.outer(scale, scale)
    try:
        c = sla.cho_factor(Hs, lower=True)
        return -sla.cho_solve(c, g / scale) / scale
    except np.linalg.LinAlgError:
        return -np.linalg.lstsq(Hs + 1e-12 * np.eye(len(g)), g / scale, rcond=None)[0] / scale


def _balancing(problem: LmiProblem) -> np.ndarray:
    """Diagonal similarity that equalizes row and column norms of the vertex sum."""
    total = sum(np.abs(v[0]) for v in problem.vertices)
    _, (scale, _) = sla.matrix_balance(total, permute=False, separate=True)
    return scale


def solve(
    problem: LmiProblem,
    tol: Tolerances = DEFAULT,
    p_max: float | None = None,
    balance: bool = True,
) -> SolveResult:
    """Minimize ``t`` subject to every block ``<= t I`` and ``0 < P <= p_max I``.

    A primal log-det barrier method with damped Newton steps. Feasibility is
    declared only when the returned ``P`` passes :func:`check_certificate`
    with the required margin; infeasibility only when the barrier duality
    bound proves the optimum exceeds the threshold. Anything else, including
    hitting the iteration cap, is ``undecided``.

    Parameters
    ----------
    problem : LmiProblem
    tol : Tolerances
    p_max : float, optional
        Upper bound on ``P``. The homogeneous kind uses 1, which is the
        normalization ``lambda_max(P) = 1``; the other kinds default to
        ``tol.invariance_p_max``.
    balance : bool
        Solve the homogeneous kind in diagonally balanced coordinates.
    """
    n = problem.n
    work = problem
    T = np.ones(n)
    if problem.homogeneous and balance:
        T = _balancing(problem)
        work = LmiProblem(problem.kind, tuple((np.diag(1 / T) @ v[0] @ np.diag(T),) for v in problem.vertices))
    hi = 1.0 if problem.homogeneous else float(p_max or tol.invariance_p_max)
    E = _svec_basis(n)
    d = E.shape[0]
    dim = d + 1
    cons = []
    for F0, Fa in _affine_blocks(work, E):
        m = F0.shape[0]
        G = np.concatenate([-Fa, np.eye(m)[None]], axis=0)
        cons.append(_Constraint(-F0, G))
    Gp = np.concatenate([E, np.zeros((1, n, n))], axis=0)
    cons.append(_Constraint(np.zeros((n, n)), Gp))
    cons.append(_Constraint(hi * np.eye(n), -Gp))
    m_total = sum(c.size for c in cons)

    # start at the center of the P box with slack in t
    p0 = np.zeros(d)
    p0[np.trace(E, axis1=1, axis2=2) == 1.0] = 0.5 * hi
    P0 = _from_svec(p0, E)
    t0 = max(np.linalg.eigvalsh(b)[-1] for b in work.blocks(P0))
    y = np.concatenate([p0, [t0 + max(1.0, abs(t0))]])

    def feasible_threshold(P) -> float:
        if problem.kind is LmiKind.BOUNDED_REAL:
            return tol.brl_tol
        return -tol.lmi_margin * max(1.0, float(np.linalg.eigvalsh(P)[-1]))

    # Any certificate must reach this value, so a lower bound above it proves
    # infeasibility over the searched box.
    infeasible_threshold = tol.brl_tol if problem.kind is LmiKind.BOUNDED_REAL else -tol.lmi_margin

    def to_original(y) -> np.ndarray:
        P = sym(np.diag(1 / T) @ _from_svec(y[:-1], E) @ np.diag(1 / T))
        if problem.homogeneous:
            P = P / np.linalg.eigvalsh(P)[-1]
        return P

    mu = m_total / max(abs(y[-1]), 1e-12)
    iters = 0
    lower = -float("inf")
    status = Status.UNDECIDED
    message = "iteration cap reached"
    obj = np.zeros(dim)
    obj[-1] = 1.0
    report = None
    while iters < tol.solver_max_iter:
        dec = float("inf")
        for _ in range(60):
            if iters >= tol.solver_max_iter:
                break
            f, g, H = _barrier(cons, y, True)
            grad = mu * obj + g
            step = _solve_newton(H, grad)
            dec = float(np.sqrt(max(-grad @ step, 0.0)))
            iters += 1
            if dec < 1e-5:
                break
            alpha = 1.0 if dec < 0.25 else 1.0 / (1.0 + dec)
            f_cur = mu * y[-1] + f
            while alpha > 1e-12:
                cand = y + alpha * step
                r = _barrier(cons, cand, False)
                if r is not None and mu * cand[-1] + r[0] <= f_cur + 0.25 * alpha * (grad @ step):
                    break
                alpha *= 0.5
            else:
                break
            y = cand
        t = float(y[-1])
        gap = m_total * (1.0 + min(dec, 1.0)) / mu
        lower = max(lower, t - gap)
        P = to_original(y)
        report = check_certificate(problem, P, tol)
        thr = feasible_threshold(P)
        good = report.passes and report.worst <= thr and report.lambda_min_P >= tol.lmi_pd * np.linalg.eigvalsh(P)[-1]
        if good and gap <= 1e-6 * max(abs(t), 1e-12):
            status = Status.FEASIBLE
            message = "certificate found"
            break
        if lower > infeasible_threshold:
            status = Status.INFEASIBLE
            message = f"optimum bounded below by {lower:.6g} > {infeasible_threshold:.3g}"
            break
        if gap <= 1e-13 * max(1.0, abs(t)):
            if good:
                status = Status.FEASIBLE
                message = "certificate found"
            else:
                message = f"converged without a decisive margin (best {report.worst:.3g}, bound {lower:.3g})"
            break
        mu *= 10.0
    else:
        if report is not None and good:
            status = Status.FEASIBLE
            message = "certificate found at the iteration cap"

    P = to_original(y)
    report = check_certificate(problem, P, tol)
    worst = report.worst
    cert = None
    if status is Status.FEASIBLE:
        cert = LyapunovCertificate(SymMatrix(P), problem.kind, report.margins, iters, worst, problem.xi)
    return SolveResult(status, cert, float(worst), float(lower), iters, message, P)


def search_xi(vertices: Sequence, xis: Sequence[float], tol: Tolerances = DEFAULT) -> tuple[float | None, SolveResult | None]:
    """First multiplier in ``xis`` for which the invariance LMI is certified."""
    last = None
    for xi in xis:
        res = solve(build_invariance_lmi(vertices, xi), tol)
        last = res
        if res.feasible:
            return xi, res
    return None, last
