import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gtverify.config import DEFAULT, Tolerances
from gtverify.model import data_path
from gtverify.numerics import (
    SingularMatrixError,
    SymMatrix,
    SymmetryError,
    cholesky,
    condition_number,
    is_positive_definite,
    load_sym_matrix,
    max_generalized_eig,
    sym_eig,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def symmetric(draw, max_n=8):
    n = draw(st.integers(1, max_n))
    a = draw(arrays(np.float64, (n, n), elements=finite))
    return 0.5 * (a + a.T)


def test_symmatrix_symmetrizes_and_is_immutable():
    m = SymMatrix([[1.0, 2.0], [4.0, 1.0]])
    assert m.array[0, 1] == m.array[1, 0] == 3.0
    with pytest.raises(ValueError):
        m.array[0, 0] = 5.0


def test_symmatrix_rejects_nonfinite_and_empty():
    with pytest.raises(ValueError):
        SymMatrix([[np.nan]])
    with pytest.raises(ValueError):
        SymMatrix(np.zeros((0, 0)))


def test_json_rejects_asymmetry():
    obj = {"n": 2, "rows": [[1.0, 0.0], [1e-6, 1.0]]}
    with pytest.raises(SymmetryError):
        SymMatrix.from_json(obj)
    ok = SymMatrix.from_json({"n": 2, "rows": [[1.0, 0.0], [1e-10, 1.0]]})
    assert ok.n == 2


def test_json_round_trip():
    m = SymMatrix([[2.0, 0.1], [0.1, 3.0]])
    assert SymMatrix.from_json(json.loads(json.dumps(m.to_json()))) == m


@pytest.mark.parametrize(
    "m, expected",
    [
        (np.eye(3), [1, 1, 1]),
        (np.diag([-2.0, 5.0]), [-2, 5]),
        ([[2.0, 1.0], [1.0, 2.0]], [1, 3]),
    ],
)
def test_sym_eig_examples(m, expected):
    assert np.allclose(sym_eig(m).values, expected, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(symmetric())
def test_sym_eig_residual_and_reconstruction(a):
    e = sym_eig(a)
    norm = max(np.linalg.norm(a, 2), 1e-300)
    for lam, v in zip(e.values, e.vectors.T):
        assert np.linalg.norm(a @ v - lam * v) <= 1e-10 * norm + 1e-300
    assert np.all(np.diff(e.values) >= 0)
    rebuilt = e.vectors @ np.diag(e.values) @ e.vectors.T
    assert np.linalg.norm(rebuilt - a) <= 1e-9 * max(np.linalg.norm(a), 1e-300) + 1e-300
    assert np.allclose(e.vectors.T @ e.vectors, np.eye(len(a)), atol=1e-10)


def test_positive_definite_examples():
    r = is_positive_definite(np.eye(3), 0.0)
    assert r.positive and r.lambda_min == 1.0
    assert not is_positive_definite(np.zeros((2, 2)), 0.0)
    with pytest.raises(ValueError):
        is_positive_definite(np.eye(2), -1.0)


def test_positive_definite_margin():
    assert is_positive_definite(np.eye(2), 0.5)
    assert not is_positive_definite(np.eye(2), 1.0)


def test_appendix_a_is_positive_definite():
    r = is_positive_definite(load_sym_matrix(data_path("appendix_a.json")))
    assert r.positive and r.lambda_min > 0


def test_pd_agrees_with_cholesky_on_random_matrices():
    rng = np.random.default_rng(0)
    disagreements = 0
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        a = rng.standard_normal((n, n))
        m = a @ a.T - rng.uniform(0, 2) * np.eye(n)
        pd = bool(is_positive_definite(m, 0.0))
        if pd != (cholesky(m) is not None):
            disagreements += 1
    assert disagreements == 0


@pytest.mark.parametrize("m, expected", [(np.eye(4), 1.0), (np.diag([1.0, 100.0]), 100.0)])
def test_condition_number_examples(m, expected):
    assert condition_number(m) == pytest.approx(expected, rel=1e-12)


def test_condition_number_singular_names_eigenvalue():
    with pytest.raises(SingularMatrixError) as exc:
        condition_number(np.diag([1.0, 0.0]))
    assert exc.value.eigenvalue == 0.0


@settings(max_examples=100, deadline=None)
@given(symmetric(6), st.floats(1e-3, 1e3))
def test_condition_number_scale_invariant(a, s):
    try:
        c = condition_number(a)
    except SingularMatrixError:
        return
    # eigenvalue rounding is relative to the largest one, so allow ~cond * eps
    assert condition_number(s * a) == pytest.approx(c, rel=max(1e-12, 64 * np.finfo(float).eps * c))


def test_max_generalized_eig_matches_direct():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((4, 4))
    a = a @ a.T
    b = rng.standard_normal((4, 4))
    b = b @ b.T + np.eye(4)
    direct = max(np.linalg.eigvals(a @ np.linalg.inv(b)).real)
    assert max_generalized_eig(a, b) == pytest.approx(direct, rel=1e-10)


def test_eig_64_is_fast():
    import time

    rng = np.random.default_rng(1)
    a = rng.standard_normal((64, 64))
    a = a + a.T
    t = time.perf_counter()
    sym_eig(a)
    assert time.perf_counter() - t < 0.01 + 0.09  # generous for loaded CI hosts


def test_tolerances_round_trip_and_unknown_keys(tmp_path):
    t = DEFAULT.updated(lmi_margin=1e-6)
    p = tmp_path / "tol.json"
    p.write_text(json.dumps(t.to_dict()))
    assert Tolerances.from_file(p) == t
    with pytest.raises(ValueError):
        Tolerances.from_dict({"nope": 1})
