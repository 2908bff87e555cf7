import itertools

import numpy as np
import pytest

from gtverify.lmi import build_invariance_lmi, solve
from gtverify.model import StateSpace

XI_GRID = (0.05, 0.1, 0.2, 0.3)


def random_stable(rng, n, m, p=1, radius=0.8, b_scale=0.3):
    A = rng.standard_normal((n, n))
    A *= radius / max(abs(np.linalg.eigvals(A)))
    B = b_scale * rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    D = rng.standard_normal((p, m))
    return StateSpace(A, B, C, D)


def certify(sys_):
    for xi in XI_GRID:
        res = solve(build_invariance_lmi([(sys_.A, sys_.B)], xi))
        if res.feasible:
            return res.certificate
    return None


def certified_systems(count, seed=2024, max_n=8, max_m=3):
    """``count`` random stable systems with solved invariance certificates."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = int(rng.integers(1, max_n + 1))
        m = int(rng.integers(1, max_m + 1))
        s = random_stable(rng, n, m)
        cert = certify(s)
        if cert is not None:
            out.append((s, cert))
    return out


def _rho(M):
    return float(max(abs(np.linalg.eigvals(M))))


def random_pair(rng):
    """Two random 2x2 matrices with spectral radius in [0.3, 1.1]."""
    out = []
    for _ in range(2):
        A = rng.standard_normal((2, 2))
        out.append(A * rng.uniform(0.3, 1.1) / _rho(A))
    return out


def lyapunov_grid_oracle(As, nb=121, nc=121):
    """Brute-force common Lyapunov feasibility for 2x2 vertices.

    Returns False when a product of at most four vertices has spectral
    radius >= 1 (a common quadratic Lyapunov function would bound it below
    1), True when some ``P = [[1, b], [b, c]]`` on the grid is strictly
    feasible, and None otherwise.
    """
    for k in range(1, 5):
        for word in itertools.product(range(len(As)), repeat=k):
            M = np.eye(2)
            for i in word:
                M = As[i] @ M
            if _rho(M) >= 1:
                return False
    b, c = np.meshgrid(np.linspace(-4, 4, nb), np.logspace(-2.5, 2.5, nc), indexing="ij")
    P = np.stack([np.stack([np.ones_like(b), b], -1), np.stack([b, c], -1)], -2)
    ok = c > b**2
    for A in As:
        M = np.einsum("ji,...jk,kl->...il", A, P, A) - P
        tr = M[..., 0, 0] + M[..., 1, 1]
        det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] ** 2
        ok &= (tr < 0) & (det > 0)
    return True if np.any(ok) else None


@pytest.fixture(scope="session")
def certified_pool():
    return certified_systems(12, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
