"""Independent discharge of the annotations of a step function.

Only :mod:`gtverify.numerics` is used for linear algebra; none of the
propagation code of the generator is reused. Each statement gives one
obligation: the image of its precondition ellipsoid under the statement must
lie inside its postcondition ellipsoid. A last obligation relates the final
ellipsoid to the function postcondition.
"""
from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field, replace

import numpy as np

from .autocoder.program import AnnotatedProgram, Assignment
from .config import DEFAULT, Tolerances
from .numerics import block_diag, cholesky, lambda_max, max_generalized_eig, spd_inverse, sym

log = logging.getLogger(__name__)

DISCHARGED = "discharged"
FAILED = "failed"
UNSUPPORTED = "unsupported"


@dataclass(frozen=True, eq=False)
class Obligation:
    """``pre`` and ``post`` are ``(Q, vars)``; ``statement`` is None for the final one."""

    label: str
    pre_Q: np.ndarray
    pre_vars: tuple[str, ...]
    post_Q: np.ndarray
    post_vars: tuple[str, ...]
    statement: Assignment | None
    tactic: str
    lam: float | None = None
    inputs: tuple[str, ...] = ()


@dataclass(frozen=True)
class Verdict:
    label: str
    tactic: str
    status: str
    margin: float = float("nan")
    message: str = ""

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "tactic": self.tactic,
            "status": self.status,
            "margin": None if not np.isfinite(self.margin) else self.margin,
            "message": self.message,
        }


@dataclass(frozen=True)
class CheckReport:
    verdicts: tuple[Verdict, ...]
    warnings: tuple[str, ...] = ()

    @property
    def passes(self) -> bool:
        return bool(self.verdicts) and all(v.status == DISCHARGED for v in self.verdicts)

    @property
    def failed(self) -> tuple[Verdict, ...]:
        return tuple(v for v in self.verdicts if v.status != DISCHARGED)

    @property
    def unsupported(self) -> bool:
        return any(v.status == UNSUPPORTED for v in self.verdicts)

    def to_json(self) -> dict:
        return {
            "passes": self.passes,
            "verdicts": [v.to_json() for v in self.verdicts],
            "warnings": list(self.warnings),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


def _statement_map(ob: Obligation, source_vars: tuple[str, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Rows of the linear map from ``source_vars`` to ``post_vars`` and its offset."""
    s = ob.statement
    pos = {v: i for i, v in enumerate(source_vars)}
    for _, v in s.terms:
        if v not in pos:
            raise _Reject(f"statement reads {v}, which the precondition does not cover")
    L = np.zeros((len(ob.post_vars), len(source_vars)))
    b = np.zeros(len(ob.post_vars))
    for k, w in enumerate(ob.post_vars):
        if w == s.lhs:
            for c, v in s.terms:
                L[k, pos[v]] += c
            b[k] = s.const
        elif w in pos:
            L[k, pos[w]] = 1.0
        else:
            raise _Reject(f"postcondition variable {w} is not determined by the precondition")
    return L, b


class _Reject(ValueError):
    pass


def _containment(Q_img: np.ndarray, Q_post: np.ndarray) -> float:
    """``lambda_max(Q_img Q_post^-1)``; ``Q_img`` may be singular."""
    if cholesky(Q_post) is None:
        raise _Reject("postcondition matrix is not positive definite")
    return max_generalized_eig(sym(Q_img), Q_post)


def discharge_affine(ob: Obligation, tol: Tolerances = DEFAULT) -> Verdict:
    """Exact image of the precondition under the statement.

    The margin is ``1 - lambda_max(L Q_pre L^T Q_post^-1)``.
    """
    try:
        if cholesky(ob.pre_Q) is None:
            raise _Reject("precondition matrix is not positive definite")
        L, b = _statement_map(ob, ob.pre_vars)
        if np.any(b != 0):
            return Verdict(ob.label, ob.tactic, UNSUPPORTED, message="non-centred image")
        lam = _containment(L @ ob.pre_Q @ L.T, ob.post_Q)
    except _Reject as e:
        return Verdict(ob.label, ob.tactic, FAILED, message=str(e))
    ok = lam <= 1.0 + tol.containment
    return Verdict(ob.label, ob.tactic, DISCHARGED if ok else FAILED, 1.0 - lam,
                   "" if ok else f"image leaves the postcondition, lambda_max = {lam:.12g}")


def sprocedure_block(A_map: np.ndarray, P_post: np.ndarray, P_pre: np.ndarray, n_inputs: int,
                     input_bound: float, lam: float) -> np.ndarray:
    """``M^T P+ M - blockdiag((1 - lam) P, lam / r^2 I)``, which must be ``<= 0``."""
    S = block_diag((1.0 - lam) * P_pre, (lam / input_bound**2) * np.eye(n_inputs))
    return sym(A_map.T @ P_post @ A_map - S)


def discharge_sprocedure(ob: Obligation, input_bound: float, tol: Tolerances = DEFAULT) -> Verdict:
    """S-procedure step: ``x in E(pre)`` and ``|u| <= input_bound`` imply the image in ``E(post)``.

    ``ob.inputs`` are the fresh inputs. The check is
    ``lambda_max(D^1/2 M^T P+ M D^1/2) <= 1`` with
    ``D = blockdiag(Q_pre / (1 - lam), r^2 I / lam)``, which is the block
    condition in normalized form. The reported margin is
    ``-lambda_max`` of the unnormalized block.

    Raises
    ------
    ValueError
        If the multiplier is missing or outside ``(0, 1)``.
    """
    lam = ob.lam
    if lam is None:
        raise ValueError(f"{ob.label}: SProcedure needs a multiplier")
    if not 0.0 < lam < 1.0:
        raise ValueError(f"{ob.label}: multiplier {lam} is outside (0, 1)")
    if input_bound <= 0:
        raise ValueError("input bound must be positive")
    try:
        overlap = set(ob.inputs) & set(ob.pre_vars)
        if overlap:
            raise _Reject(f"inputs {sorted(overlap)} already appear in the precondition")
        if cholesky(ob.pre_Q) is None:
            raise _Reject("precondition matrix is not positive definite")
        src = tuple(ob.pre_vars) + tuple(ob.inputs)
        L, b = _statement_map(ob, src)
        if np.any(b != 0):
            return Verdict(ob.label, ob.tactic, UNSUPPORTED, message="non-centred image")
        k = len(ob.inputs)
        D = block_diag(ob.pre_Q / (1.0 - lam), (input_bound**2 / lam) * np.eye(k))
        ratio = _containment(L @ D @ L.T, ob.post_Q)
        block = sprocedure_block(L, spd_inverse(ob.post_Q), spd_inverse(ob.pre_Q), k, input_bound, lam)
        margin = -lambda_max(block)
    except _Reject as e:
        return Verdict(ob.label, ob.tactic, FAILED, message=str(e))
    ok = ratio <= 1.0 + tol.containment
    return Verdict(ob.label, ob.tactic, DISCHARGED if ok else FAILED, margin,
                   "" if ok else f"S-procedure bound fails, normalized lambda_max = {ratio:.12g}")


def discharge_final(ob: Obligation, tol: Tolerances = DEFAULT) -> Verdict:
    """Projection of the last ellipsoid on the postcondition variables."""
    pos = {v: i for i, v in enumerate(ob.pre_vars)}
    missing = [v for v in ob.post_vars if v not in pos]
    if missing:
        return Verdict(ob.label, "final", FAILED, message=f"final ellipsoid does not cover {missing}")
    idx = [pos[v] for v in ob.post_vars]
    try:
        lam = _containment(ob.pre_Q[np.ix_(idx, idx)], ob.post_Q)
    except _Reject as e:
        return Verdict(ob.label, "final", FAILED, message=str(e))
    ok = lam <= 1.0 + tol.containment
    return Verdict(ob.label, "final", DISCHARGED if ok else FAILED, 1.0 - lam,
                   "" if ok else f"final ellipsoid leaves the postcondition, lambda_max = {lam:.12g}")


def obligations(program: AnnotatedProgram) -> list[Obligation]:
    """One obligation per statement plus the final one."""
    inputs = set(program.names("input"))
    out = []
    for b, s in zip(program.behaviors, program.statements):
        if b.assumes is not None:
            fresh = b.assumes.vars
        else:
            used = list(s.variables) + list(b.post.vars)
            fresh = tuple(dict.fromkeys(v for v in used if v in inputs and v not in b.pre.vars))
        out.append(Obligation(
            b.label, program.qmat(b.pre.qmat), b.pre.vars, program.qmat(b.post.qmat), b.post.vars,
            s, b.tactic.name, b.tactic.lam, tuple(fresh),
        ))
    last = program.behaviors[-1].post if program.behaviors else program.requires
    out.append(Obligation(
        "final", program.qmat(last.qmat), last.vars, program.qmat(program.ensures.qmat),
        program.ensures.vars, None, "final",
    ))
    return out


def check_program(program: AnnotatedProgram, input_bound: float = 1.0, tol: Tolerances = DEFAULT) -> CheckReport:
    """Discharge every obligation of ``program``.

    Unknown tactics give an ``unsupported`` verdict. ``\\valid`` clauses are
    memory-safety assertions outside the scope of this checker and only
    raise a warning.
    """
    warnings = []
    for v in program.valid:
        warnings.append(f"ignored memory clause {v}")
        log.info("ignored memory clause %s", v)
    verdicts = []
    prev = program.requires
    for b in program.behaviors:
        if b.pre != prev:
            warnings.append(f"{b.label}: precondition QMat_{b.pre.qmat} differs from the preceding ellipsoid")
        prev = b.post
    for ob in obligations(program):
        if ob.statement is None:
            verdicts.append(discharge_final(ob, tol))
        elif ob.tactic == "AffineEllipsoid":
            verdicts.append(discharge_affine(ob, tol))
        elif ob.tactic == "SProcedure":
            try:
                verdicts.append(discharge_sprocedure(ob, input_bound, tol))
            except ValueError as e:
                verdicts.append(Verdict(ob.label, ob.tactic, FAILED, message=str(e)))
        else:
            verdicts.append(Verdict(ob.label, ob.tactic, UNSUPPORTED, message=f"unknown tactic {ob.tactic}"))
    # a chain is only sound when every precondition is the preceding postcondition
    chain_ok = not any("differs from the preceding" in w for w in warnings)
    if not chain_ok:
        verdicts.append(Verdict("chain", "chain", FAILED, message="annotations do not form a chain"))
    return CheckReport(tuple(verdicts), tuple(warnings))


# --- mutation --------------------------------------------------------------


@dataclass(frozen=True)
class Mutation:
    statement: int
    term: int
    factor: float

    def describe(self) -> str:
        return f"statement {self.statement}, term {self.term}, factor {self.factor:g}"


def coefficient_sites(program: AnnotatedProgram) -> list[tuple[int, int]]:
    """``(statement, term)`` index pairs of every emitted coefficient."""
    return [(i, k) for i, s in enumerate(program.statements) for k in range(len(s.terms))]


def mutate(program: AnnotatedProgram, mutation: Mutation) -> AnnotatedProgram:
    """Scale one statement coefficient, leaving the annotations unchanged."""
    stmts = list(program.statements)
    s = stmts[mutation.statement]
    terms = list(s.terms)
    c, v = terms[mutation.term]
    terms[mutation.term] = (c * mutation.factor, v)
    stmts[mutation.statement] = replace(s, terms=tuple(terms))
    return replace(program, statements=tuple(stmts))


def random_mutations(program: AnnotatedProgram, count: int, rng: random.Random,
                     low: float = 0.1, high: float = 0.5) -> list[Mutation]:
    """``count`` single-coefficient scalings by ``1 +- s`` with ``s`` in ``[low, high]``."""
    sites = coefficient_sites(program)
    out = []
    for _ in range(count):
        i, k = rng.choice(sites)
        s = rng.uniform(low, high)
        out.append(Mutation(i, k, 1.0 + s if rng.random() < 0.5 else 1.0 - s))
    return out


@dataclass(frozen=True)
class MutationOutcome:
    mutation: Mutation
    killed: bool
    report: CheckReport = field(repr=False)


def kill_rate(program: AnnotatedProgram, mutations, input_bound: float = 1.0,
              tol: Tolerances = DEFAULT) -> tuple[float, list[MutationOutcome]]:
    outcomes = []
    for mu in mutations:
        rep = check_program(mutate(program, mu), input_bound, tol)
        outcomes.append(MutationOutcome(mu, not rep.passes, rep))
    rate = sum(o.killed for o in outcomes) / len(outcomes) if outcomes else float("nan")
    return rate, outcomes
