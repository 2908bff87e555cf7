"""Acceptance suite, one check per criterion.

Run under pytest (``pytest tests/test_acceptance.py -s``) or directly with
``python3 tests/test_acceptance.py``; either way one PASS/FAIL line is
printed per criterion.
"""
import random
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import certified_systems, lyapunov_grid_oracle, random_pair  # noqa: E402
from gtverify.autocoder import autocode, emit_source, parse_source  # noqa: E402
from gtverify.ellipsoid import Ellipsoid, bounded_input_step  # noqa: E402
from gtverify.hull import (  # noqa: E402
    check_membership,
    inflate_until_member,
    interpolated_family,
    spread_deltas,
    varying_entry_census,
)
from gtverify.lmi import (  # noqa: E402
    Status,
    build_bounded_real_lmi,
    build_common_lyapunov_lmi,
    build_invariance_lmi,
    check_certificate,
    solve,
)
from gtverify.model import (  # noqa: E402
    controller_schedule,
    data_path,
    interconnect_closed_loop,
    load_fixture,
    spectral_radius,
)
from gtverify.numerics import NumericsError, condition_number, is_positive_definite, load_sym_matrix  # noqa: E402
from gtverify.proofcheck import check_program, kill_rate, random_mutations  # noqa: E402
from gtverify.simulator import Monitor, monitor_invariant, simulate_controller  # noqa: E402

PUBLISHED_COND = {"appendix_b.json": 7.7519e11, "appendix_c.json": 5.4760e12}


def criterion_1():
    t0 = time.perf_counter()
    parts = []
    ok = True
    for name in ("appendix_a.json", "appendix_b.json", "appendix_c.json"):
        rep = is_positive_definite(load_sym_matrix(data_path(name)))
        ok &= bool(rep.positive)
        parts.append(f"{name} lambda_min={rep.lambda_min:.4g}")
    dt = time.perf_counter() - t0
    return ok and dt < 1.0, "; ".join(parts) + f"; {dt:.3f}s"


def criterion_2():
    ok = True
    parts = []
    for name, ref in PUBLISHED_COND.items():
        try:
            c = condition_number(load_sym_matrix(data_path(name)))
        except NumericsError as e:
            ok = False
            parts.append(f"{name}: {type(e).__name__}: {e}")
            continue
        good = ref / 10 <= c <= ref * 10
        ok &= good
        parts.append(f"{name}: cond={c:.4g} vs {ref:.4g}")
    return ok, "; ".join(parts)


def criterion_3():
    t0 = time.perf_counter()
    pts = load_fixture()
    loops = [interconnect_closed_loop(op.plant, op.controller).A for op in pts.values()]
    radii = [spectral_radius(A) for A in loops]
    res = solve(build_common_lyapunov_lmi(loops))
    passed = False
    if res.feasible:
        rep = check_certificate(build_common_lyapunov_lmi(loops), res.certificate.P)
        passed = rep.passes and all(m < 0 for m in rep.margins)
    dt = time.perf_counter() - t0
    ok = passed and all(r < 1 for r in radii) and dt < 60
    return ok, f"solver={res.status.value}; rho={[round(r, 4) for r in radii]}; {dt:.1f}s"


def criterion_4():
    sys_ = ([[0.0]], [[1.0]], [[1.0]], [[0.0]])
    out = {}
    for g in (1.5, 0.9):
        prob = build_bounded_real_lmi([sys_], [g])
        res = solve(prob)
        checker = check_certificate(prob, res.P).passes if res.P is not None else False
        out[g] = (res.status, checker)
    ok = out[1.5] == (Status.FEASIBLE, True) and out[0.9][0] is Status.INFEASIBLE and not out[0.9][1]
    return ok, f"gamma=1.5 -> {out[1.5][0].value}, gamma=0.9 -> {out[0.9][0].value}"


def criterion_5():
    A, B, P, xi = 0.5, 0.5, 0.5, 0.5
    e = Ellipsoid.from_P([[P]])
    try:
        bounded_input_step(e, [[A]], [[B]], 1.0, [[P]], xi)
        discharged = True
    except NumericsError:
        discharged = False
    r = np.sqrt(1 / P)
    # 10^3 points: both boundary states against 500 inputs spanning |u| <= 1
    xs = np.array([-r, r])
    us = np.linspace(-1.0, 1.0, 500)
    worst = float(np.abs(A * xs[:, None] + B * us[None, :]).max())
    ok = discharged and worst < r
    return ok, f"discharged={discharged}; worst one-step image {worst:.4f} < sqrt(2) = {r:.4f}"


def criterion_6(count=50, mutations_per_system=10):
    systems = certified_systems(count, seed=2024)
    discharged = total = 0
    killed = tried = 0
    rng = random.Random(6)
    for s, c in systems:
        p = parse_source(emit_source(autocode(s, c)))
        rep = check_program(p)
        total += len(rep.verdicts)
        discharged += len(rep.verdicts) - len(rep.failed)
        rate, outcomes = kill_rate(p, random_mutations(p, mutations_per_system, rng, 0.1, 0.5))
        killed += sum(o.killed for o in outcomes)
        tried += len(outcomes)
    ok = discharged == total and killed >= 0.95 * tried
    return ok, f"{discharged}/{total} obligations discharged; kill rate {killed}/{tried} = {killed / tried:.3f}"


def criterion_7(systems=5, per_system=20, steps=10_000):
    rng = np.random.default_rng(7)
    fired = 0
    runs = 0
    shrunk_steps = []
    for s, c in certified_systems(systems, seed=77):
        e = Ellipsoid.from_P(c.P.array)
        names = tuple(f"x{i}" for i in range(s.n))
        for _ in range(per_system):
            d = rng.standard_normal(s.n)
            x0 = d / np.sqrt(d @ c.P.array @ d) * rng.uniform(0.05, 1.0)
            tr = simulate_controller(s, x0, steps, input_bound=1.0, seed=int(rng.integers(1 << 30)))
            fired += monitor_invariant(tr, e, names).violated
            runs += 1
            small = monitor_invariant(tr, e.scaled(1e-6), names)
            shrunk_steps.append(small.first_violation)
    quick = all(k is not None and k < 10 for k in shrunk_steps)
    ok = fired == 0 and quick
    worst = max(k if k is not None else 10**9 for k in shrunk_steps)
    return ok, f"{runs} runs x {steps} steps, monitor fired in {fired}; shrunk ellipsoid fires by step {worst}"


def criterion_8():
    alphas, fam = interpolated_family(controller_schedule(load_fixture()), 211)
    try:
        res = inflate_until_member(fam[0], fam[-1], fam, spread_deltas(fam, 0.05))
    except RuntimeError as e:
        return False, f"inflation did not terminate: {e}"
    mem = check_membership(res.polytope, fam)
    c = varying_entry_census(fam)
    ok = mem.passes and c.total == 154 and c.varying <= 154
    return ok, (f"{res.iterations} inflations; membership over {mem.n_samples} samples "
                f"{'passes' if mem.passes else 'fails'}; census varying={c.varying} "
                f"constant={c.constant_nonzero} zero={c.zero} total={c.total}")


def criterion_9(count=200):
    rng = np.random.default_rng(9)
    disagree = decisive = undecided = 0
    for _ in range(count):
        As = random_pair(rng)
        truth = lyapunov_grid_oracle(As)
        status = solve(build_common_lyapunov_lmi(As)).status
        if truth is None:
            continue
        decisive += 1
        if status is Status.UNDECIDED:
            undecided += 1
            disagree += 1
            continue
        disagree += truth != (status is Status.FEASIBLE)
    return disagree == 0, f"{decisive}/{count} decisive oracle verdicts, {disagree} disagreements ({undecided} undecided)"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


def _line(k, ok, detail):
    return f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}"


@pytest.mark.parametrize("k", range(1, 10))
def test_criterion(k, capsys):
    ok, detail = CRITERIA[k - 1]()
    with capsys.disabled():
        print("\n" + _line(k, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    failures = 0
    for k, fn in enumerate(CRITERIA, 1):
        ok, detail = fn()
        failures += not ok
        print(_line(k, ok, detail), flush=True)
    sys.exit(1 if failures else 0)
