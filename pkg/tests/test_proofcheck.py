import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import solve_triangular

import gtverify.autocoder.generate as generate
from gtverify.autocoder import AFFINE, Assignment, ProofTactic, autocode, emit_source, parse_source
from gtverify.ellipsoid import Ellipsoid
from gtverify.lmi import LmiKind, LyapunovCertificate
from gtverify.model import StateSpace
from gtverify.numerics import SymMatrix
from gtverify.proofcheck import (
    DISCHARGED,
    FAILED,
    UNSUPPORTED,
    Mutation,
    Obligation,
    check_program,
    discharge_affine,
    discharge_sprocedure,
    kill_rate,
    mutate,
    obligations,
    random_mutations,
)

X = ("x",)


def affine_ob(coef, pre=1.0, post=1.0):
    s = Assignment("x", ((coef, "x"),))
    return Obligation("t", np.array([[pre]]), X, np.array([[post]]), X, s, "AffineEllipsoid")


def sproc_ob(a, b, P_pre, P_post, lam):
    s = Assignment("x", ((a, "x"), (b, "u")))
    return Obligation("t", np.array([[1 / P_pre]]), X, np.array([[1 / P_post]]), X, s,
                      "SProcedure", lam, ("u",))


def test_affine_examples():
    v = discharge_affine(affine_ob(1.0))
    assert v.status == DISCHARGED and v.margin == pytest.approx(0.0, abs=1e-15)
    v = discharge_affine(affine_ob(0.5))
    assert v.status == DISCHARGED and v.margin == pytest.approx(0.75)
    v = discharge_affine(affine_ob(2.0))
    assert v.status == FAILED and v.margin == pytest.approx(-3.0)


def test_affine_rejects_uncovered_variable():
    s = Assignment("x", ((1.0, "z"),))
    ob = Obligation("t", np.eye(1), X, np.eye(1), X, s, "AffineEllipsoid")
    assert discharge_affine(ob).status == FAILED


def test_affine_constant_is_unsupported():
    s = Assignment("x", ((0.5, "x"),), 0.1)
    ob = Obligation("t", np.eye(1), X, np.eye(1), X, s, "AffineEllipsoid")
    assert discharge_affine(ob).status == UNSUPPORTED


def test_sprocedure_examples():
    v = discharge_sprocedure(sproc_ob(0.5, 0.5, 0.5, 0.5, 0.5), 1.0)
    assert v.status == DISCHARGED and v.margin >= 0
    for P in (0.1, 1.0, 10.0):
        for lam in (0.01, 0.5, 0.99):
            assert discharge_sprocedure(sproc_ob(1.0, 0.1, P, P, lam), 1.0).status == FAILED
    with pytest.raises(ValueError):
        discharge_sprocedure(sproc_ob(0.5, 0.5, 0.5, 0.5, None), 1.0)
    with pytest.raises(ValueError):
        discharge_sprocedure(sproc_ob(0.5, 0.5, 0.5, 0.5, 1.5), 1.0)


def test_sprocedure_with_zero_input_matches_affine():
    rng = np.random.default_rng(3)
    lam = 1e-6
    agree = 0
    for _ in range(100):
        n = int(rng.integers(1, 4))
        A = rng.standard_normal((n, n))
        A *= rng.uniform(0.2, 0.99) / max(abs(np.linalg.eigvals(A)))
        names = tuple(f"x{i}" for i in range(n))
        M = rng.standard_normal((n, n))
        Q = M @ M.T + 0.5 * np.eye(n)
        # map one coordinate at a time keeps the statement scalar
        L = np.eye(n)
        L[0] = A[0]
        Q_post = L @ Q @ L.T * rng.uniform(0.9, 1.1)
        s = Assignment(names[0], tuple(zip(A[0], names)) + ((0.0, "u"),))
        aff = discharge_affine(Obligation("a", Q, names, Q_post, names, s, "AffineEllipsoid"))
        s_in = Assignment(names[0], tuple(zip(A[0], names)) + ((1e-300, "u"),))
        sp = discharge_sprocedure(
            Obligation("s", Q, names, Q_post, names, s_in, "SProcedure", lam, ("u",)), 1.0
        )
        agree += aff.status == sp.status
    # the lambda/(1-lambda) weighting blurs only the knife edge
    assert agree >= 97


def test_unknown_tactic_is_unsupported(certified_pool):
    s, c = certified_pool[0]
    src = emit_source(autocode(s, c)).replace("use_strategy (AffineEllipsoid)", "use_strategy (Magic)", 1)
    rep = check_program(parse_source(src, allow_unknown_tactics=True))
    assert rep.unsupported and not rep.passes


def test_generated_programs_discharge(certified_pool):
    for s, c in certified_pool:
        p = autocode(s, c)
        rep = check_program(p)
        assert rep.passes, rep.failed
        assert len(rep.verdicts) == len(p.statements) + 1
        assert any("ignored memory clause" in w for w in rep.warnings)


def test_generated_programs_discharge_after_parsing(certified_pool):
    for s, c in certified_pool[:4]:
        assert check_program(parse_source(emit_source(autocode(s, c)))).passes


def test_ten_percent_perturbation_is_caught(certified_pool):
    for s, c in certified_pool:
        p = autocode(s, c)
        for i, k in [(0, 0), (len(p.statements) - 1, 0)]:
            assert not check_program(mutate(p, Mutation(i, k, 1.1))).passes


def test_random_mutation_kill_rate(certified_pool):
    rng = random.Random(11)
    for s, c in certified_pool[:5]:
        p = autocode(s, c)
        rate, _ = kill_rate(p, random_mutations(p, 20, rng))
        assert rate >= 0.95


def test_empty_program_single_containment():
    from gtverify.autocoder import AnnotatedProgram, Declaration, EllipsoidRef

    r = EllipsoidRef(0, ("_state_->x",))
    p = AnnotatedProgram("f", (Declaration("_state_->x", "state"),), (), r, r, (), ((0, ((2.0,),)),))
    rep = check_program(p)
    assert rep.passes and len(rep.verdicts) == 1


def test_seeded_propagation_bug_is_caught(certified_pool, monkeypatch):
    real = generate.affine_image

    def shrunk(e, L, b=None):
        return real(e, L, b).scaled(0.5)

    monkeypatch.setattr(generate, "affine_image", shrunk)
    caught = 0
    for s, c in certified_pool[:6]:
        p = autocode(s, c)
        caught += not check_program(p).passes
    assert caught == 6


def test_broken_chain_is_reported(certified_pool):
    from dataclasses import replace

    s, c = certified_pool[0]
    p = autocode(s, c)
    if len(p.behaviors) < 2:
        pytest.skip("needs two statements")
    b = list(p.behaviors)
    b[1] = replace(b[1], pre=p.requires)
    rep = check_program(replace(p, behaviors=tuple(b)))
    assert any(v.label == "chain" and v.status == FAILED for v in rep.verdicts)


def _map_points(ob, pts):
    pos = {v: i for i, v in enumerate(ob.pre_vars + ob.inputs)}
    out = np.empty((len(pts), len(ob.post_vars)))
    for k, w in enumerate(ob.post_vars):
        if w == ob.statement.lhs:
            col = np.zeros(len(pos))
            for c, v in ob.statement.terms:
                col[pos[v]] += c
            out[:, k] = pts @ col
        else:
            out[:, k] = pts[:, pos[w]]
    return out


def _sample_pre(rng, Q, count):
    n = Q.shape[0]
    d = rng.standard_normal((count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.uniform(0, 1, (count, 1)) ** (1 / n)
    r[: count // 2] = 1.0  # half on the boundary
    return (d * r) @ np.linalg.cholesky(Q).T


def test_soundness_sampling(certified_pool):
    rng = np.random.default_rng(8)
    for s, c in certified_pool[:4]:
        p = autocode(s, c)
        for ob in obligations(p)[:-1]:
            x = _sample_pre(rng, ob.pre_Q, 10_000)
            if ob.tactic == "SProcedure":
                u = rng.standard_normal((len(x), len(ob.inputs)))
                u /= np.linalg.norm(u, axis=1, keepdims=True)
                x = np.hstack([x, u])
            y = _map_points(ob, x)
            # triangular solve; the thin output directions make inv() too lossy
            z = solve_triangular(np.linalg.cholesky(ob.post_Q), y.T, lower=True)
            assert np.all((z * z).sum(axis=0) <= 1 + 1e-9), ob.label


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 1.5), st.floats(1.0, 100.0))
def test_enlarging_post_is_monotone(a, s):
    ob = affine_ob(a, 1.0, 1.0)
    if discharge_affine(ob).status == DISCHARGED:
        assert discharge_affine(affine_ob(a, 1.0, s)).status == DISCHARGED


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(1.0, 100.0))
def test_enlarging_post_is_monotone_sprocedure(a, lam, s):
    ob = sproc_ob(a, 0.2, 1.0, 1.0, lam)
    if discharge_sprocedure(ob, 1.0).status == DISCHARGED:
        assert discharge_sprocedure(sproc_ob(a, 0.2, 1.0, 1.0 / s, lam), 1.0).status == DISCHARGED


def test_checker_does_not_import_the_autocoder_propagation():
    import gtverify.proofcheck as pc

    src = open(pc.__file__).read()
    assert "generate" not in src and "affine_image" not in src and "lift_with_input" not in src
