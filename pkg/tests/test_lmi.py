import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import lyapunov_grid_oracle, random_pair
from gtverify.config import Tolerances
from gtverify.lmi import (
    LmiKind,
    LmiProblem,
    LyapunovCertificate,
    Status,
    build_bounded_real_lmi,
    build_common_lyapunov_lmi,
    build_invariance_lmi,
    check_certificate,
    search_xi,
    solve,
)
from gtverify.numerics import load_sym_matrix
from gtverify.model import data_path, load_fixture


def test_invariance_build_examples():
    prob = build_invariance_lmi([([[0.5]], [[0.0]])], 0.02354)
    assert prob.xi == 0.02354
    blk = prob.blocks([[1.0]])[0]
    assert np.allclose(blk, np.diag([0.25 - 1 + 0.02354, -0.02354]))
    for xi in (0.1, 0.5, 0.74):
        assert check_certificate(build_invariance_lmi([([[0.5]], [[0.0]])], xi), [[1.0]]).passes
    with pytest.raises(ValueError):
        build_invariance_lmi([([[0.5]], [[0.0]])], 1.0)
    with pytest.raises(ValueError):
        build_invariance_lmi([(np.eye(2), np.ones((3, 1)))], 0.1)


def test_invariance_unstable_vertex_infeasible():
    for xi in (0.05, 0.3):
        res = solve(build_invariance_lmi([([[1.05]], [[0.1]])], xi))
        assert res.status is Status.INFEASIBLE


def test_brl_examples():
    sys_ = ([[0.0]], [[1.0]], [[1.0]], [[0.0]])
    ok = build_bounded_real_lmi([sys_], [1.5])
    assert np.allclose(ok.blocks([[1.0]])[0], [[0.0, 0.0], [0.0, -0.5]])
    assert check_certificate(ok, [[1.0]]).passes
    assert solve(ok).feasible
    assert solve(build_bounded_real_lmi([sys_], [0.9])).status is Status.INFEASIBLE
    gam = [7.6489e4, 8.1e4, 8.5e4, 9.2748e4]
    assert build_bounded_real_lmi([sys_] * 4, gam).gammas == tuple(gam)
    with pytest.raises(ValueError):
        build_bounded_real_lmi([sys_], [0.0])
    with pytest.raises(ValueError):
        build_bounded_real_lmi([sys_, sys_], [1.0])


def test_common_examples():
    res = solve(build_common_lyapunov_lmi([np.array([[0.5]])]))
    assert res.feasible and res.certificate.P.array[0, 0] == pytest.approx(1.0)
    assert solve(build_common_lyapunov_lmi([[[0.5]], [[0.9]]])).feasible
    assert solve(build_common_lyapunov_lmi([[[0.5]], [[1.0]]])).status is Status.INFEASIBLE
    res = solve(build_common_lyapunov_lmi([np.array([[1.0]])]))
    assert res.status is Status.INFEASIBLE and res.lower_bound >= -1e-8
    with pytest.raises(ValueError):
        build_common_lyapunov_lmi([np.eye(2), np.eye(3)])


def test_solve_scalar_invariance():
    prob = build_invariance_lmi([([[0.5]], [[0.5]])], 0.5)
    assert check_certificate(prob, [[0.5]]).passes
    res = solve(prob)
    assert res.feasible
    assert check_certificate(prob, res.certificate.P).passes


def test_check_certificate_examples():
    rep = check_certificate(build_common_lyapunov_lmi([np.array([[0.5]])]), np.eye(1))
    assert rep.passes and rep.margins[0] == pytest.approx(-0.75)
    rep = check_certificate(build_common_lyapunov_lmi([np.array([[2.0]])]), np.eye(1))
    assert not rep.passes and rep.margins[0] == pytest.approx(3.0)
    with pytest.raises(ValueError):
        check_certificate(build_common_lyapunov_lmi([np.eye(2)]), np.eye(3))


def test_check_rejects_indefinite_P():
    prob = build_invariance_lmi([([[0.5]], [[0.0]])], 0.1)
    assert not check_certificate(prob, [[-1.0]]).passes


def test_appendix_a_report_is_produced():
    # informational: the published matrix is checked against interpolated
    # controller vertices; the verdict is recorded, not asserted
    P = load_sym_matrix(data_path("appendix_a.json"))
    pts = load_fixture()
    verts = [(op.controller.A, op.controller.B) for op in pts.values()]
    rep = check_certificate(build_invariance_lmi(verts, 0.02354), P)
    assert len(rep.margins) == 4 and all(np.isfinite(rep.margins))


def test_solutions_are_self_consistent(certified_pool):
    for sys_, cert in certified_pool:
        prob = build_invariance_lmi([(sys_.A, sys_.B)], cert.xi)
        rep = check_certificate(prob, cert.P)
        assert rep.passes and max(rep.margins) < 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_scaling_preserves_verdict(seed, s):
    As = random_pair(np.random.default_rng(seed))
    prob = build_common_lyapunov_lmi(As)
    P = np.array([[1.0, 0.2], [0.2, 0.8]])
    a, b = check_certificate(prob, P), check_certificate(prob, s * P)
    assert a.passes == b.passes
    assert np.allclose(np.array(b.margins), s * np.array(a.margins), rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_decreasing_xi_keeps_the_11_block(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 3))
    A *= 0.7 / max(abs(np.linalg.eigvals(A)))
    B = 0.1 * rng.standard_normal((3, 1))
    xi, res = search_xi([(A, B)], (0.3, 0.2, 0.1, 0.05))
    assert res is not None and res.feasible
    P = res.certificate.P.array
    for lower in np.linspace(xi, 1e-3, 6):
        blk = build_invariance_lmi([(A, B)], lower).blocks(P)[0]
        assert np.linalg.eigvalsh(blk[:3, :3])[-1] < 0
        # the (2,2) block B'PB - xi I is re-checked; it may fail for tiny xi
        assert (np.linalg.eigvalsh(blk[3:, 3:])[-1] < 0) == (np.linalg.eigvalsh(B.T @ P @ B)[-1] < lower)


def test_oracle_agreement_sample():
    rng = np.random.default_rng(99)
    disagree = 0
    for _ in range(40):
        As = random_pair(rng)
        truth = lyapunov_grid_oracle(As)
        status = solve(build_common_lyapunov_lmi(As)).status
        if truth is None or status is Status.UNDECIDED:
            continue
        disagree += truth != (status is Status.FEASIBLE)
    assert disagree == 0


def test_undecided_at_iteration_cap():
    tol = Tolerances(solver_max_iter=2)
    prob = build_common_lyapunov_lmi([np.array([[0.99, 5.0], [0.0, 0.99]])])
    res = solve(prob, tol)
    assert res.status is Status.UNDECIDED and res.certificate is None
    # the cap is not a proof of infeasibility; more iterations settle it
    assert solve(prob).feasible


def test_problem_and_certificate_json_round_trip(tmp_path):
    prob = build_bounded_real_lmi([([[0.0]], [[1.0]], [[1.0]], [[0.0]])], [1.5])
    again = LmiProblem.from_json(json.loads(json.dumps(prob.to_json())))
    assert again.kind is LmiKind.BOUNDED_REAL and again.gammas == (1.5,)
    cert = solve(prob).certificate
    cert.save(tmp_path / "c.json")
    loaded = LyapunovCertificate.from_json(json.loads((tmp_path / "c.json").read_text()))
    assert np.array_equal(loaded.P.array, cert.P.array)
