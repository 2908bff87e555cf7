"""Deterministic text form of an :class:`AnnotatedProgram`.

The grammar is defined in ``docs/annotation-grammar.md``.
"""
from __future__ import annotations

from .program import AnnotatedProgram, Assignment, Ball, Behavior, EllipsoidRef

STATE_PREFIX = "_state_->"
IO_PREFIX = "_io_->"
INDENT = "    "


def literal(x: float) -> str:
    """17 significant digits, enough to round-trip any double."""
    s = format(float(x), ".17g")
    if s in ("inf", "-inf", "nan"):
        raise ValueError(f"non-finite literal {s}")
    return s


def vector(names) -> str:
    return f"vect_of_{len(names)}_scalar({', '.join(names)})"


def ellipsoid(ref: EllipsoidRef) -> str:
    return f"in_ellipsoidQ(QMat_{ref.qmat}, {vector(ref.vars)})"


def ball(b: Ball) -> str:
    return f"in_ball({vector(b.vars)}, {literal(b.bound)})"


def expression(s: Assignment) -> str:
    parts = []
    for k, (c, v) in enumerate(s.terms):
        mag = literal(abs(c))
        if k == 0:
            parts.append(f"{'-' if c < 0 else ''}{mag} * {v}")
        else:
            parts.append(f"{'-' if c < 0 else '+'} {mag} * {v}")
    if s.const != 0.0 or not parts:
        c = s.const
        if not parts:
            parts.append(literal(c))
        else:
            parts.append(f"{'-' if c < 0 else '+'} {literal(abs(c))}")
    return " ".join(parts)


def _struct(name: str, fields) -> list[str]:
    lines = ["typedef struct {"]
    lines += [f"{INDENT}REAL {f};" for f in fields]
    lines.append(f"}} {name};")
    return lines


def _behavior(b: Behavior, s: Assignment) -> list[str]:
    i2 = INDENT * 2
    lines = [f"{INDENT}/*@", f"{i2}behavior {b.label}:"]
    if b.assumes is not None:
        lines.append(f"{i2}assumes {ball(b.assumes)};")
    lines.append(f"{i2}requires {ellipsoid(b.pre)};")
    lines.append(f"{i2}ensures {ellipsoid(b.post)};")
    args = b.tactic.name if b.tactic.lam is None else f"{b.tactic.name}, {literal(b.tactic.lam)}"
    lines.append(f"{i2}@ PROOF_TACTIC (use_strategy ({args}));")
    lines.append(f"{INDENT}*/")
    lines.append(f"{INDENT}{{")
    lines.append(f"{i2}{s.lhs} = {expression(s)};")
    lines.append(f"{INDENT}}}")
    return lines


def emit_source(p: AnnotatedProgram) -> str:
    """Render the program. Identical programs give byte-identical text."""
    states = [d.name[len(STATE_PREFIX):] for d in p.declarations if d.role == "state"]
    inputs = [d.name for d in p.declarations if d.role == "input"]
    outputs = [d.name[len(IO_PREFIX):] for d in p.declarations if d.role == "output"]
    out = ["/* step function generated by gtverify */", ""]
    out += _struct(p.state_type, states)
    out.append("")
    out += _struct(p.io_type, inputs + outputs)
    out.append("")
    out.append("/*@")
    out.append(f"{INDENT}requires {ellipsoid(p.requires)};")
    for v in p.valid:
        out.append(f"{INDENT}requires {v};")
    out.append(f"{INDENT}ensures {ellipsoid(p.ensures)};")
    out.append("*/")
    out.append(f"void {p.function}({p.io_type} *_io_, {p.state_type} *_state_) {{")
    for name in inputs:
        out.append(f"{INDENT}REAL {name} = {IO_PREFIX}{name};")
    for b, s in zip(p.behaviors, p.statements):
        out += _behavior(b, s)
    out.append("}")
    out.append("")
    out.append("/* ellipsoid shape matrices */")
    for k, rows in p.qmats:
        n = len(rows)
        out.append(f"static const REAL QMat_{k}[{n}][{n}] = {{")
        body = [f"{INDENT}{{{', '.join(literal(x) for x in row)}}}" for row in rows]
        out.append(",\n".join(body))
        out.append("};")
    return "\n".join(out) + "\n"
