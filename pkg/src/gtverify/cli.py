"""Command line entry point.

Exit codes: 0 success, 2 verification or feasibility failure, 3 input
error, 4 internal numeric error. Human messages go to stderr; machine
readable reports go to ``--report`` when given.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import hull, lmi, proofcheck, simulator
from .autocoder import AutocodeError, ParseError, autocode, emit_source, parse_source
from .config import DEFAULT, Tolerances
from .model import (
    FixtureError,
    ScheduledModel,
    StateSpace,
    controller_schedule,
    data_path,
    interconnect_closed_loop,
    load_fixture,
)
from .numerics import NumericsError, SymMatrix, SymmetryError, load_sym_matrix

EXIT_OK = 0
EXIT_FAIL = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4

log = logging.getLogger("gtverify")


class InputError(Exception):
    pass


def write_atomic(path: str | Path, text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _report(args, obj: dict) -> None:
    if getattr(args, "report", None):
        write_atomic(args.report, _dump(obj))


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise InputError(f"{path}: no such file") from e
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON ({e})") from e


# --- problem sources --------------------------------------------------------


def fixture_closed_loops() -> list[np.ndarray]:
    """Closed-loop state matrices reassembled from the shipped operating points."""
    return [interconnect_closed_loop(op.plant, op.controller).A for op in load_fixture().values()]


def fixture_controllers() -> list[tuple[np.ndarray, np.ndarray]]:
    return [(op.controller.A, op.controller.B) for op in load_fixture().values()]


def _problem(args) -> lmi.LmiProblem:
    kind = lmi.LmiKind(args.kind) if args.kind else None
    source = getattr(args, "vertices", None) or getattr(args, "problem", None)
    if source:
        obj = dict(_read_json(source))
        if kind is None and "kind" not in obj:
            raise InputError(f"{source}: no 'kind'; pass --kind")
        obj.setdefault("kind", kind.value if kind else None)
        if kind is not None and lmi.LmiKind(obj["kind"]) is not kind:
            raise InputError(f"{source} describes a {obj['kind']} problem, not {kind.value}")
        if args.xi is not None:
            obj["xi"] = args.xi
        gammas = _gammas(args, len(obj.get("vertices", ())))
        if gammas is not None:
            obj["gammas"] = gammas
        return lmi.LmiProblem.from_json(obj)
    if args.fixture == "closed-loop":
        if kind not in (None, lmi.LmiKind.COMMON):
            raise InputError("the closed-loop fixture supports --kind common only")
        return lmi.build_common_lyapunov_lmi(fixture_closed_loops())
    if args.fixture == "controllers":
        if kind not in (None, lmi.LmiKind.INVARIANCE):
            raise InputError("the controller fixture supports --kind invariance only")
        if args.xi is None:
            raise InputError("--xi is required for the invariance LMI")
        return lmi.build_invariance_lmi(fixture_controllers(), args.xi)
    raise InputError("give a problem file or --fixture")


def _gammas(args, count: int) -> list[float] | None:
    if getattr(args, "gammas", None):
        g = _read_json(args.gammas)
        g = g["gammas"] if isinstance(g, dict) else g
        if not isinstance(g, list):
            raise InputError(f"{args.gammas}: expected a list of gammas")
        return [float(x) for x in g]
    if getattr(args, "gamma", None) is not None:
        return [args.gamma] * count
    return None


# --- subcommands ------------------------------------------------------------


def _load_schedule(path: str) -> ScheduledModel:
    obj = _read_json(path)
    try:
        pts = tuple((float(p["alpha"]), StateSpace.from_json(p["system"])) for p in obj["points"])
        return ScheduledModel(pts, tuple(obj.get("labels", ())))
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"{path}: not a schedule ({e})") from e


def cmd_hull(args, tol: Tolerances) -> int:
    schedule = _load_schedule(args.model) if args.model else controller_schedule()
    lo, hi = args.alpha_range if args.alpha_range else (schedule.alphas[0], schedule.alphas[-1])
    if not lo < hi:
        raise InputError("alpha range must be increasing")
    alphas = np.linspace(lo, hi, args.grid)
    samples = [schedule.at(float(a)).stacked() for a in alphas]
    S = np.array(samples)
    if args.deltas:
        obj = _read_json(args.deltas)
        deltas = obj["deltas"] if isinstance(obj, dict) else obj
        if len(deltas) != 4:
            raise InputError(f"{args.deltas}: four perturbation matrices required")
        deltas = [np.array(d, dtype=float) for d in deltas]
    else:
        deltas = hull.spread_deltas(samples, args.fraction)
    try:
        res = hull.inflate_until_member(
            schedule.at(lo).stacked(), schedule.at(hi).stacked(), samples, deltas, args.growth, args.max_iter
        )
    except hull.InflationError as e:
        print(f"hull: {e}", file=sys.stderr)
        _report(args, {"passes": False, "message": str(e), "iterations": e.iterations, "worst": e.worst})
        return EXIT_FAIL
    census = hull.varying_entry_census(samples, tol.hull_rel)
    env = hull.envelopes(res.polytope, alphas, samples)
    out = {
        "passes": res.report.passes,
        "iterations": res.iterations,
        "grid": len(samples),
        "alpha_range": [float(lo), float(hi)],
        "census": census.to_json(),
        "membership": res.report.to_json(),
        "envelopes": [e.to_json() for e in env],
        "vertices": [v.tolist() for v in res.polytope.vertices],
        "deltas": [d.tolist() for d in res.deltas],
    }
    if args.svg:
        hull.write_envelope_svgs(env, args.svg)
    _report(args, out)
    print(f"hull: {len(samples)} samples inside after {res.iterations} inflations; "
          f"{census.varying} of {census.total} entries vary")
    return EXIT_OK


def cmd_solve_lmi(args, tol: Tolerances) -> int:
    problem = _problem(args)
    res = lmi.solve(problem, tol)
    out = res.to_json()
    out["problem"] = {"kind": problem.kind.value, "n": problem.n, "vertices": len(problem.vertices)}
    if res.feasible and args.out:
        cert = res.certificate.to_json()
        cert["problem"] = problem.to_json()
        write_atomic(args.out, _dump(cert))
    _report(args, out)
    print(f"solve-lmi: {res.status.value} after {res.iterations} iterations ({res.message})")
    return EXIT_OK if res.feasible else EXIT_FAIL


def _read_P(path: str) -> tuple[SymMatrix, dict]:
    obj = _read_json(path)
    try:
        if "rows" in obj:
            return SymMatrix.from_json(obj), obj
        return SymMatrix(obj["P"]), obj
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"{path}: no symmetric matrix P ({e})") from e


def cmd_check_cert(args, tol: Tolerances) -> int:
    P, obj = _read_P(args.P)
    if args.problem or args.fixture:
        if args.kind is None and "kind" in obj:
            args.kind = obj["kind"]
        if args.xi is None and obj.get("xi") is not None:
            args.xi = obj["xi"]
        problem = _problem(args)
    elif "problem" in obj:
        problem = lmi.LmiProblem.from_json(obj["problem"])
    else:
        raise InputError("no problem given; pass --problem or --fixture, or a certificate that embeds one")
    if P.n != problem.n:
        raise InputError(f"P is {P.n}x{P.n} but the problem has n = {problem.n}")
    rep = lmi.check_certificate(problem, P, tol)
    out = {
        "passes": rep.passes,
        "kind": rep.kind.value,
        "margins": list(rep.margins),
        "lambda_min_P": rep.lambda_min_P,
        "well_posed": rep.well_posed,
        "threshold": rep.threshold,
    }
    _report(args, out)
    print(f"check-cert: {'pass' if rep.passes else 'fail'}, worst margin {rep.worst:.6g}")
    return EXIT_OK if rep.passes else EXIT_FAIL


def _controller(args) -> StateSpace:
    if args.controller:
        try:
            return StateSpace.from_json(_read_json(args.controller))
        except (KeyError, ValueError) as e:
            raise InputError(f"{args.controller}: not a state-space system ({e})") from e
    points = load_fixture()
    if args.point not in points:
        raise InputError(f"unknown operating point {args.point!r}; choose from {sorted(points)}")
    return points[args.point].controller


def cmd_autocode(args, tol: Tolerances) -> int:
    ctrl = _controller(args)
    try:
        cert = lmi.LyapunovCertificate.from_json(_read_json(args.cert))
    except (KeyError, ValueError, SymmetryError) as e:
        raise InputError(f"{args.cert}: not a certificate ({e})") from e
    if cert.n != ctrl.n:
        raise InputError(f"certificate has dimension {cert.n}, controller has {ctrl.n} states")
    if cert.kind is not lmi.LmiKind.INVARIANCE:
        raise InputError(f"certificate kind {cert.kind.value} is not invariance")
    try:
        program = autocode(ctrl, cert, args.bound, tol=tol)
    except AutocodeError as e:
        print(f"autocode: {e}", file=sys.stderr)
        return EXIT_FAIL
    write_atomic(args.out, emit_source(program))
    print(f"autocode: {len(program.statements)} annotated statements written to {args.out}")
    return EXIT_OK


def cmd_check_annotations(args, tol: Tolerances) -> int:
    try:
        text = Path(args.source).read_text()
    except FileNotFoundError as e:
        raise InputError(f"{args.source}: no such file") from e
    try:
        program = parse_source(text, allow_unknown_tactics=True)
    except ParseError as e:
        raise InputError(f"{args.source}:{e}") from e
    rep = proofcheck.check_program(program, args.bound, tol)
    _report(args, rep.to_json())
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    for v in rep.failed:
        print(f"{v.label}: {v.status} {v.message}", file=sys.stderr)
    print(f"check-annotations: {len(rep.verdicts) - len(rep.failed)} of {len(rep.verdicts)} obligations discharged")
    return EXIT_OK if rep.passes else EXIT_FAIL


def cmd_simulate(args, tol: Tolerances) -> int:
    try:
        cfg = simulator.SimConfig.from_json(_read_json(args.config))
    except (TypeError, ValueError) as e:
        raise InputError(f"{args.config}: {e}") from e
    try:
        trace = simulator.simulate(cfg)
    except simulator.SimulationError as e:
        print(f"simulate: {e}", file=sys.stderr)
        _report(args, {"error": str(e), "step": e.step})
        return EXIT_FAIL
    write_atomic(args.trace, trace.to_csv())
    out = {"steps": len(trace)}
    code = EXIT_OK
    if cfg.monitor is not None:
        rep = simulator.monitor_invariant(trace, cfg.monitor.ellipsoid, cfg.monitor.vars)
        out["monitor"] = rep.to_json()
        if rep.violated:
            print(f"simulate: monitor violated at step {rep.first_violation}", file=sys.stderr)
            code = EXIT_FAIL
    if args.svg:
        tmp = Path(args.svg).with_name(f".{Path(args.svg).name}.tmp")
        simulator.write_svg(trace, tmp)
        os.replace(tmp, args.svg)
    _report(args, out)
    print(f"simulate: {len(trace)} steps written to {args.trace}")
    return code


def verify_fixtures(root: Path | None = None) -> dict:
    """Recompute checksums and structural invariants of the shipped data."""
    root = data_path() if root is None else Path(root)
    expected = json.loads((root / "checksums.json").read_text())
    problems = []
    actual = {}
    for rel in sorted(expected):
        f = root / rel
        if not f.exists():
            problems.append(f"{rel}: missing")
            continue
        actual[rel] = hashlib.sha256(f.read_bytes()).hexdigest()
        if actual[rel] != expected[rel]:
            problems.append(f"{rel}: checksum mismatch")
    extra = sorted(
        str(p.relative_to(root)) for p in root.rglob("*.json") if p.name != "checksums.json"
        and str(p.relative_to(root)) not in expected
    )
    problems += [f"{rel}: not in checksum list" for rel in extra]
    shapes = {"appendix_a.json": 11, "appendix_b.json": 16, "appendix_c.json": 16}
    for rel, n in shapes.items():
        try:
            m = load_sym_matrix(root / rel)
            if m.n != n:
                problems.append(f"{rel}: expected {n}x{n}, got {m.n}x{m.n}")
        except (SymmetryError, ValueError, KeyError) as e:
            problems.append(f"{rel}: {e}")
    try:
        points = load_fixture(root / "appendix_d")
        if len(points) != 4:
            problems.append(f"appendix_d: expected 4 operating points, got {len(points)}")
    except (FixtureError, ValueError) as e:
        problems.append(f"appendix_d: {e}")
    return {"passes": not problems, "problems": problems, "checksums": actual}


def cmd_fixtures(args, tol: Tolerances) -> int:
    if not args.verify:
        for rel in sorted(json.loads((data_path() / "checksums.json").read_text())):
            print(rel)
        return EXIT_OK
    out = verify_fixtures()
    _report(args, out)
    for p in out["problems"]:
        print(f"fixtures: {p}", file=sys.stderr)
    print(f"fixtures: {'ok' if out['passes'] else 'FAILED'} ({len(out['checksums'])} files)")
    return EXIT_OK if out["passes"] else EXIT_FAIL


# --- parser -------------------------------------------------------------------


def _problem_flags(p: argparse.ArgumentParser, file_flag: str, kind_required: bool) -> None:
    p.add_argument("--kind", choices=[k.value for k in lmi.LmiKind], required=kind_required,
                   help="LMI family")
    src = p.add_mutually_exclusive_group()
    src.add_argument(file_flag, metavar="FILE", help="JSON problem with a 'vertices' list")
    src.add_argument("--fixture", choices=("closed-loop", "controllers"),
                     help="shipped operating points: assembled closed loops or controllers")
    p.add_argument("--xi", type=float, help="invariance multiplier in (0, 1)")
    gam = p.add_mutually_exclusive_group()
    gam.add_argument("--gammas", metavar="FILE", help="JSON list with one squared gain bound per vertex (brl)")
    gam.add_argument("--gamma", type=float, help="one squared gain bound for every vertex (brl)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gtverify", description=__doc__.splitlines()[0])
    parser.add_argument("--tolerances", metavar="FILE", help="JSON overriding numeric tolerances")
    parser.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("hull", help="corner polytope of a scheduled model and membership check")
    p.add_argument("--model", metavar="FILE", help="schedule JSON {'points': [{'alpha', 'system'}]}; "
                   "default: the shipped controllers scheduled on NH percent")
    p.add_argument("--deltas", metavar="FILE", help="JSON with four starting perturbation matrices")
    p.add_argument("--alpha-range", type=float, nargs=2, metavar=("LO", "HI"),
                   help="scheduling range to sample; default: the model's own range")
    p.add_argument("--grid", type=int, default=hull.DEFAULT_GRID, help="number of samples")
    p.add_argument("--fraction", type=float, default=0.05,
                   help="starting perturbation as a fraction of each entry's spread (without --deltas)")
    p.add_argument("--growth", type=float, default=2.0, help="inflation factor per iteration")
    p.add_argument("--max-iter", type=int, default=hull.MAX_INFLATIONS, help="maximum inflations")
    p.add_argument("--report", metavar="FILE", help="write a JSON report with vertices and envelopes")
    p.add_argument("--svg", metavar="DIR", help="write one envelope plot per varying entry")
    p.set_defaults(func=cmd_hull)

    p = sub.add_parser("solve-lmi", help="search for a Lyapunov-type certificate")
    _problem_flags(p, "--vertices", True)
    p.add_argument("--out", metavar="FILE", help="write the certificate as JSON")
    p.add_argument("--report", metavar="FILE", help="write a JSON report")
    p.set_defaults(func=cmd_solve_lmi)

    p = sub.add_parser("check-cert", help="re-check a matrix P against an LMI problem")
    _problem_flags(p, "--problem", False)
    p.add_argument("--P", metavar="FILE", required=True,
                   help="certificate JSON or matrix JSON {'n', 'rows'}")
    p.add_argument("--report", metavar="FILE", help="write a JSON report")
    p.set_defaults(func=cmd_check_cert)

    p = sub.add_parser("autocode", help="emit an annotated step function")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--controller", metavar="FILE", help="state-space JSON with A, B, C, D")
    src.add_argument("--point", default="MCR", help="shipped operating point whose controller to use")
    p.add_argument("--cert", metavar="FILE", required=True, help="invariance certificate JSON")
    p.add_argument("--bound", type=float, default=1.0, help="input norm bound")
    p.add_argument("--out", metavar="FILE", required=True, help="annotated source to write")
    p.set_defaults(func=cmd_autocode)

    p = sub.add_parser("check-annotations", help="discharge every annotation of a step function")
    p.add_argument("--source", metavar="FILE", required=True, help="annotated source")
    p.add_argument("--bound", type=float, default=1.0, help="input norm bound")
    p.add_argument("--report", metavar="FILE", help="write a JSON report")
    p.set_defaults(func=cmd_check_annotations)

    p = sub.add_parser("simulate", help="closed-loop simulation with an optional monitor")
    p.add_argument("--config", metavar="FILE", required=True, help="simulation JSON")
    p.add_argument("--trace", metavar="FILE", required=True, help="CSV trace to write")
    p.add_argument("--svg", metavar="FILE", help="static plot to write (needs matplotlib)")
    p.add_argument("--report", metavar="FILE", help="write a JSON report")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fixtures", help="list or verify the shipped data")
    p.add_argument("--verify", action="store_true", help="recompute checksums and invariants")
    p.add_argument("--report", metavar="FILE", help="write a JSON report")
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        tol = Tolerances.from_file(args.tolerances) if args.tolerances else DEFAULT
        return args.func(args, tol)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericsError, np.linalg.LinAlgError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError, FixtureError, SymmetryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
