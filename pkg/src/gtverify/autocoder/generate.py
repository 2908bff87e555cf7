"""Lowering of a certified controller to an annotated straight-line step function.

The tracked vector starts as the controller state. Output statements come
first and append each output to the tracked vector with a thin ellipsoid, so
output coefficients are covered by the annotations too; the outputs are
projected out again before the state update. The state update
``x+ = A x + B u`` is then factored into in-place scalar substitutions over
the slots ``(x, u)``; input locals serve as scratch once read. The first
statement that touches an input is discharged by the S-procedure with the
certificate's multiplier; every other statement is an exact affine image.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import DEFAULT, Tolerances
from ..ellipsoid import Ellipsoid, affine_image, lift_with_input
from ..lmi import LmiKind, LyapunovCertificate
from ..model import CONTROLLER_CODE_NAMES, StateSpace
from ..numerics import SymMatrix, cholesky, max_generalized_eig, spd_inverse, sym
from .emit import IO_PREFIX, STATE_PREFIX
from .program import (
    AFFINE,
    AnnotatedProgram,
    Assignment,
    Ball,
    Behavior,
    Declaration,
    EllipsoidRef,
    ProofTactic,
    qmat_rows,
)

# relative thickness of the ellipsoid around a freshly computed output
OUTPUT_THICKNESS = 1e-6
# relative enlargement of every post ellipsoid; absorbs rounding in thin directions
STEP_SLACK = 1e-7
# the slack also covers eps * cond(Q) rounding in the checker, with this factor
ROUNDING_FACTOR = 16.0
# smallest acceptable pivot relative to the substitution row norm
PIVOT_TOL = 1e-3


class AutocodeError(ValueError):
    pass


@dataclass(frozen=True)
class Names:
    """Variable spellings. States get ``_state_->`` and outputs ``_io_->``."""

    states: tuple[str, ...]
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    function: str = "step"

    @classmethod
    def default(cls, n: int, m: int, p: int, function: str = "step") -> "Names":
        if n == len(CONTROLLER_CODE_NAMES):
            states = CONTROLLER_CODE_NAMES
        else:
            states = tuple(f"{STATE_PREFIX}x{i}" for i in range(n))
        return cls(
            tuple(states),
            tuple(f"u{i}" for i in range(m)),
            tuple(f"{IO_PREFIX}y{i}" for i in range(p)),
            function,
        )

    @classmethod
    def from_labels(cls, states, inputs, outputs, function: str = "step") -> "Names":
        def pre(prefix, names):
            return tuple(n if n.startswith(prefix) else prefix + n for n in names)

        return cls(pre(STATE_PREFIX, states), tuple(inputs), pre(IO_PREFIX, outputs), function)


class _Builder:
    def __init__(self):
        self.statements: list[Assignment] = []
        self.behaviors: list[Behavior] = []
        self.qmats: list[tuple[int, np.ndarray]] = []
        self.vars: dict[int, tuple[str, ...]] = {}
        self.next_id = 0

    def new_qmat(self, Q, names) -> int:
        k = self.next_id
        self.qmats.append((k, np.asarray(Q, dtype=float)))
        self.vars[k] = tuple(names)
        self.next_id += 1
        return k


def _row_statement(lhs: str, row: np.ndarray, names: list[str]) -> Assignment:
    return Assignment(lhs, tuple((float(c), v) for c, v in zip(row, names) if c != 0.0))


def autocode(
    controller: StateSpace,
    certificate: LyapunovCertificate,
    input_bound: float = 1.0,
    names: Names | None = None,
    tol: Tolerances = DEFAULT,
) -> AnnotatedProgram:
    """Emit the annotated step function for ``controller``.

    Parameters
    ----------
    controller : StateSpace
        ``(A, B, C, D)`` with ``x+ = A x + B u`` and output ``C x + D u``.
    certificate : LyapunovCertificate
        Invariance certificate ``P`` with its multiplier ``xi``.
    input_bound : float
        Euclidean bound on the input vector.
    names : Names, optional

    Raises
    ------
    AutocodeError
        On dimension or kind mismatch, a non-PD certificate, a rank
        deficient ``[A B]``, or when the propagated ellipsoid does not land
        inside the postcondition.
    """
    n, m, p = controller.n, controller.m, controller.p
    if certificate.n != n:
        raise AutocodeError(f"certificate has dimension {certificate.n}, controller has {n} states")
    if certificate.kind is not LmiKind.INVARIANCE:
        raise AutocodeError(f"certificate kind {certificate.kind.value} is not invariance")
    P = certificate.P.array
    if cholesky(P) is None:
        raise AutocodeError("certificate P is not positive definite")
    uses_input = bool(np.any(controller.B != 0) or np.any(controller.D != 0))
    if uses_input and (certificate.xi is None or not 0 < certificate.xi < 1):
        raise AutocodeError("certificate multiplier xi in (0, 1) is required when inputs enter")
    if input_bound <= 0:
        raise AutocodeError("input bound must be positive")
    names = names or Names.default(n, m, p)
    if (len(names.states), len(names.inputs), len(names.outputs)) != (n, m, p):
        raise AutocodeError("names do not match the controller dimensions")

    Q0 = spd_inverse(P)
    S, U, Y = list(names.states), list(names.inputs), list(names.outputs)
    b = _Builder()
    pre_id = b.new_qmat(Q0, S)
    post_id = b.new_qmat(Q0, S)

    ell = Ellipsoid(SymMatrix(Q0))
    tracked = list(S)
    lifted = False
    current_id = pre_id

    def emit(stmt: Assignment, reads_input: bool):
        nonlocal ell, tracked, lifted, current_id
        tactic = AFFINE
        assumes = None
        outputs = [k for k, v in enumerate(tracked) if v in Y]
        if outputs and stmt.lhs not in Y:
            # outputs are checked at their own statement; keeping the thin
            # directions around would only worsen the conditioning
            keep = [k for k in range(len(tracked)) if k not in outputs]
            ell = Ellipsoid(SymMatrix(ell.Q.array[np.ix_(keep, keep)]))
            tracked = [tracked[k] for k in keep]
        if reads_input and not lifted:
            ell = lift_with_input(ell, m, input_bound, certificate.xi)
            tracked = tracked + U
            lifted = True
            tactic = ProofTactic("SProcedure", certificate.xi)
            assumes = Ball(tuple(U), input_bound)
        pos = {v: i for i, v in enumerate(tracked)}
        row = np.zeros(len(tracked))
        for c, v in stmt.terms:
            row[pos[v]] += c
        if stmt.lhs in pos:
            L = np.eye(len(tracked))
            L[pos[stmt.lhs]] = row
            ell = affine_image(ell, L)
        else:
            L = np.vstack([np.eye(len(tracked)), row])
            Q = sym(L @ ell.Q.array @ L.T)
            s = Q[-1, -1] if Q[-1, -1] > 0 else float(np.max(np.diag(Q)))
            Q[-1, -1] += OUTPUT_THICKNESS * s
            ell = Ellipsoid(SymMatrix(Q))
            tracked = tracked + [stmt.lhs]
        w = np.linalg.eigvalsh(ell.Q.array)
        slack = max(STEP_SLACK, ROUNDING_FACTOR * np.finfo(float).eps * w[-1] / w[0])
        ell = Ellipsoid(SymMatrix(ell.Q.array * (1.0 + slack)))
        new_id = b.new_qmat(ell.Q.array, tracked)
        before = EllipsoidRef(current_id, b.vars[current_id])
        after = EllipsoidRef(new_id, b.vars[new_id])
        b.behaviors.append(Behavior(f"step_{len(b.statements)}", before, after, tactic, assumes))
        b.statements.append(stmt)
        current_id = new_id

    # outputs, evaluated on the incoming state and inputs
    for k in range(p):
        row = np.concatenate([controller.C[k], controller.D[k]])
        stmt = _row_statement(Y[k], row, S + U)
        emit(stmt, bool(np.any(controller.D[k] != 0)))

    # state update as in-place substitutions on the slots (x, u)
    slots = S + U
    T = np.hstack([controller.A, controller.B])
    if np.linalg.matrix_rank(T) < n:
        raise AutocodeError("[A B] is rank deficient; the update cannot be factored into invertible steps")
    M = np.eye(n + m)
    done: set[int] = set()
    while len(done) < n:
        Minv = np.linalg.inv(M)
        best, best_ratio, best_row = None, -1.0, None
        for i in range(n):
            if i in done:
                continue
            r = T[i] @ Minv
            ratio = abs(r[i]) / max(np.linalg.norm(r), np.finfo(float).tiny)
            if ratio > best_ratio:
                best, best_ratio, best_row = i, ratio, r
        i, r = best, best_row
        if best_ratio < PIVOT_TOL:
            free = [j for j in range(n + m) if j not in done and j != i]
            if not free:
                raise AutocodeError("no free slot to make the substitution invertible")
            j = max(free, key=lambda q: abs(r[q]))
            if abs(r[j]) <= PIVOT_TOL * np.linalg.norm(r):
                raise AutocodeError("[A B] is numerically rank deficient")
            # slot_j += c * slot_i shifts weight of r onto slot i
            c = (r[i] - np.copysign(np.linalg.norm(r), r[i] if r[i] != 0 else 1.0)) / r[j]
            shear = np.zeros(n + m)
            shear[j] = 1.0
            shear[i] = c
            E = np.eye(n + m)
            E[j] = shear
            M = E @ M
            emit(_row_statement(slots[j], shear, slots), j >= n)
            continue
        E = np.eye(n + m)
        E[i] = r
        M = E @ M
        emit(_row_statement(slots[i], r, slots), bool(np.any(r[n:] != 0)))
        done.add(i)

    # the projection of the final ellipsoid onto the states must sit inside E(P)
    pos = {v: k for k, v in enumerate(tracked)}
    idx = [pos[v] for v in S]
    Qf = ell.Q.array[np.ix_(idx, idx)]
    lam_max = max_generalized_eig(Qf, Q0) if n else 0.0
    if lam_max > 1.0 + tol.containment:
        raise AutocodeError(
            f"propagated ellipsoid leaves the invariant: lambda_max = {lam_max:.12g}"
        )

    decls = [Declaration(v, "state") for v in S] + [Declaration(v, "input") for v in U]
    decls += [Declaration(v, "output") for v in Y]
    return AnnotatedProgram(
        function=names.function,
        declarations=tuple(decls),
        statements=tuple(b.statements),
        requires=EllipsoidRef(pre_id, tuple(S)),
        ensures=EllipsoidRef(post_id, tuple(S)),
        behaviors=tuple(b.behaviors),
        qmats=tuple((k, qmat_rows(Q)) for k, Q in b.qmats),
        valid=("\\valid(_io_) && \\valid(_state_)",),
    )


def final_containment(program: AnnotatedProgram) -> float:
    """``lambda_max(Q_final Q_post^-1)`` over the postcondition variables."""
    last = program.behaviors[-1].post if program.behaviors else program.requires
    Ql = program.qmat(last.qmat)
    pos = {v: k for k, v in enumerate(last.vars)}
    idx = [pos[v] for v in program.ensures.vars]
    return max_generalized_eig(Ql[np.ix_(idx, idx)], program.qmat(program.ensures.qmat))
