"""Parser for emitted step functions (grammar in ``docs/annotation-grammar.md``)."""
from __future__ import annotations

import re
from dataclasses import dataclass

from .emit import IO_PREFIX, STATE_PREFIX
from .program import (
    TACTICS,
    AnnotatedProgram,
    Assignment,
    Ball,
    Behavior,
    Declaration,
    EllipsoidRef,
    ProofTactic,
)


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


class SemanticError(ParseError):
    pass


class UnknownTacticError(ParseError):
    pass


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<open>/\*@)
  | (?P<comment>/\*(?!@).*?\*/)
  | (?P<close>\*/)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>\\?[A-Za-z_][A-Za-z0-9_]*)
  | (?P<arrow>->)
  | (?P<and>&&)
  | (?P<punct>[{}()\[\];,=*+\-:@])
    """,
    re.VERBOSE | re.DOTALL,
)


def tokenize(text: str) -> list[Token]:
    out = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        tok = m.group()
        if kind not in ("ws", "comment"):
            out.append(Token(kind, tok, line, pos - line_start + 1))
        nl = tok.count("\n")
        if nl:
            line += nl
            line_start = pos + tok.rfind("\n") + 1
        pos = m.end()
    out.append(Token("eof", "", line, pos - line_start + 1))
    return out


_VECT_RE = re.compile(r"vect_of_(\d+)_scalar$")
_QMAT_RE = re.compile(r"QMat_(\d+)$")


class _Parser:
    def __init__(self, text: str, allow_unknown_tactics: bool):
        self.toks = tokenize(text)
        self.i = 0
        self.allow_unknown = allow_unknown_tactics

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: Token | None = None, cls=ParseError):
        tok = tok or self.tok
        return cls(msg, tok.line, tok.col)

    def expect(self, text: str) -> Token:
        t = self.tok
        if t.text != text:
            raise self.error(f"expected {text!r}, found {t.text or 'end of input'!r}")
        self.i += 1
        return t

    def accept(self, text: str) -> bool:
        if self.tok.text == text:
            self.i += 1
            return True
        return False

    def ident(self) -> Token:
        t = self.tok
        if t.kind != "ident":
            raise self.error(f"expected identifier, found {t.text or 'end of input'!r}")
        self.i += 1
        return t

    def number(self) -> float:
        neg = self.accept("-")
        t = self.tok
        if t.kind != "number":
            raise self.error(f"expected number, found {t.text or 'end of input'!r}")
        self.i += 1
        v = float(t.text)
        return -v if neg else v

    def designator(self) -> tuple[str, Token]:
        t = self.ident()
        if self.accept("->"):
            return t.text + "->" + self.ident().text, t
        return t.text, t

    # grammar
    def struct(self) -> tuple[str, list[str]]:
        self.expect("typedef")
        self.expect("struct")
        self.expect("{")
        fields = []
        while not self.accept("}"):
            self.expect("REAL")
            fields.append(self.ident().text)
            self.expect(";")
        name = self.ident().text
        self.expect(";")
        return name, fields

    def vector(self) -> tuple[tuple[str, ...], Token]:
        t = self.ident()
        m = _VECT_RE.match(t.text)
        if not m:
            raise self.error(f"expected vect_of_N_scalar, found {t.text!r}", t)
        self.expect("(")
        names = [self.designator()]
        while self.accept(","):
            names.append(self.designator())
        self.expect(")")
        if len(names) != int(m.group(1)):
            raise self.error(f"{t.text} lists {len(names)} variables", t)
        return tuple(n for n, _ in names), names

    def ellipsoid(self) -> tuple[EllipsoidRef, list]:
        t = self.ident()
        if t.text != "in_ellipsoidQ":
            raise self.error(f"expected in_ellipsoidQ, found {t.text!r}", t)
        self.expect("(")
        q = self.ident()
        m = _QMAT_RE.match(q.text)
        if not m:
            raise self.error(f"expected QMat_k, found {q.text!r}", q)
        self.expect(",")
        names, toks = self.vector()
        self.expect(")")
        return EllipsoidRef(int(m.group(1)), names), toks

    def valid_expr(self) -> str:
        parts = []
        while True:
            t = self.ident()
            if t.text != "\\valid":
                raise self.error(f"expected \\valid, found {t.text!r}", t)
            self.expect("(")
            arg = self.ident().text
            self.expect(")")
            parts.append(f"\\valid({arg})")
            if not self.accept("&&"):
                return " && ".join(parts)

    def contract(self):
        self.expect("/*@")
        requires = ensures = None
        valid = []
        refs = []
        while not self.accept("*/"):
            kw = self.ident()
            if kw.text not in ("requires", "ensures"):
                raise self.error(f"expected requires or ensures, found {kw.text!r}", kw)
            if self.tok.text.startswith("\\"):
                if kw.text != "requires":
                    raise self.error("\\valid is only accepted in requires clauses")
                valid.append(self.valid_expr())
            else:
                ref, toks = self.ellipsoid()
                refs.append(toks)
                if kw.text == "requires":
                    if requires is not None:
                        raise self.error("duplicate ellipsoid precondition", kw)
                    requires = ref
                else:
                    if ensures is not None:
                        raise self.error("duplicate ellipsoid postcondition", kw)
                    ensures = ref
            self.expect(";")
        if requires is None or ensures is None:
            raise self.error("function contract needs an ellipsoid requires and ensures")
        return requires, ensures, valid, refs

    def tactic(self) -> ProofTactic:
        self.expect("@")
        t = self.ident()
        if t.text != "PROOF_TACTIC":
            raise self.error(f"expected PROOF_TACTIC, found {t.text!r}", t)
        self.expect("(")
        t = self.ident()
        if t.text != "use_strategy":
            raise self.error(f"expected use_strategy, found {t.text!r}", t)
        self.expect("(")
        name = self.ident()
        lam = self.number() if self.accept(",") else None
        self.expect(")")
        self.expect(")")
        self.expect(";")
        if name.text not in TACTICS and not self.allow_unknown:
            raise self.error(f"unknown tactic {name.text!r}", name, UnknownTacticError)
        return ProofTactic(name.text, lam)

    def behavior(self):
        self.expect("/*@")
        self.expect("behavior")
        label = self.ident().text
        self.expect(":")
        refs = []
        assumes = None
        kw = self.ident()
        if kw.text == "assumes":
            t = self.ident()
            if t.text != "in_ball":
                raise self.error(f"expected in_ball, found {t.text!r}", t)
            self.expect("(")
            names, toks = self.vector()
            refs.append(toks)
            self.expect(",")
            bound = self.number()
            self.expect(")")
            self.expect(";")
            assumes = Ball(names, bound)
            kw = self.ident()
        if kw.text != "requires":
            raise self.error(f"expected requires, found {kw.text!r}", kw)
        pre, toks = self.ellipsoid()
        refs.append(toks)
        self.expect(";")
        kw = self.ident()
        if kw.text != "ensures":
            raise self.error(f"expected ensures, found {kw.text!r}", kw)
        post, toks = self.ellipsoid()
        refs.append(toks)
        self.expect(";")
        tactic = self.tactic()
        self.expect("*/")
        self.expect("{")
        stmt, stoks = self.assignment()
        refs.append(stoks)
        self.expect("}")
        return Behavior(label, pre, post, tactic, assumes), stmt, refs

    def assignment(self):
        lhs, lt = self.designator()
        toks = [(lhs, lt)]
        self.expect("=")
        terms = []
        const = 0.0
        first = True
        while True:
            sign = 1.0
            if not first:
                if self.accept("+"):
                    sign = 1.0
                elif self.accept("-"):
                    sign = -1.0
                else:
                    break
            neg = self.accept("-")
            t = self.tok
            if t.kind != "number":
                raise self.error(f"expected number, found {t.text or 'end of input'!r}")
            self.i += 1
            c = float(t.text) * (-1.0 if neg else 1.0) * sign
            if self.accept("*"):
                name, vt = self.designator()
                toks.append((name, vt))
                terms.append((c, name))
            else:
                const += c
            first = False
        self.expect(";")
        return Assignment(lhs, tuple(terms), const), toks

    def qmat(self):
        self.expect("static")
        self.expect("const")
        self.expect("REAL")
        q = self.ident()
        m = _QMAT_RE.match(q.text)
        if not m:
            raise self.error(f"expected QMat_k, found {q.text!r}", q)
        dims = []
        for _ in range(2):
            self.expect("[")
            t = self.tok
            if t.kind != "number" or not t.text.isdigit():
                raise self.error("expected integer dimension")
            self.i += 1
            dims.append(int(t.text))
            self.expect("]")
        self.expect("=")
        self.expect("{")
        rows = []
        while True:
            self.expect("{")
            row = [self.number()]
            while self.accept(","):
                row.append(self.number())
            self.expect("}")
            rows.append(tuple(row))
            if not self.accept(","):
                break
        self.expect("}")
        self.expect(";")
        if len(rows) != dims[0] or any(len(r) != dims[1] for r in rows):
            raise self.error(f"QMat_{m.group(1)} body does not match [{dims[0]}][{dims[1]}]", q)
        return int(m.group(1)), tuple(rows), q

    def program(self) -> AnnotatedProgram:
        structs = {}
        while self.tok.text == "typedef":
            name, fields = self.struct()
            structs[name] = fields
        requires, ensures, valid, refs = self.contract()
        self.expect("void")
        func = self.ident().text
        self.expect("(")
        io_type = self.ident().text
        self.expect("*")
        if self.ident().text != "_io_":
            raise self.error("first parameter must be _io_", self.toks[self.i - 1])
        self.expect(",")
        state_type = self.ident().text
        self.expect("*")
        if self.ident().text != "_state_":
            raise self.error("second parameter must be _state_", self.toks[self.i - 1])
        self.expect(")")
        self.expect("{")
        for t in (io_type, state_type):
            if t not in structs:
                raise self.error(f"type {t} is not defined", cls=SemanticError)
        inputs = []
        while self.tok.text == "REAL":
            self.expect("REAL")
            local = self.ident()
            self.expect("=")
            src, st = self.designator()
            if src != IO_PREFIX + local.text:
                raise self.error(f"input {local.text} must read {IO_PREFIX}{local.text}", st)
            if local.text not in structs[io_type]:
                raise self.error(f"{src} is not a field of {io_type}", st, SemanticError)
            self.expect(";")
            inputs.append(local.text)
        behaviors, statements = [], []
        while self.tok.text == "/*@":
            b, s, r = self.behavior()
            behaviors.append(b)
            statements.append(s)
            refs.extend(r)
        self.expect("}")
        qmats = []
        seen = {}
        while self.tok.text == "static":
            k, rows, q = self.qmat()
            if k in seen:
                raise self.error(f"QMat_{k} defined twice", q, SemanticError)
            seen[k] = rows
            qmats.append((k, rows))
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r}")

        decls = [Declaration(STATE_PREFIX + f, "state") for f in structs[state_type]]
        decls += [Declaration(n, "input") for n in inputs]
        decls += [Declaration(IO_PREFIX + f, "output") for f in structs[io_type] if f not in inputs]
        declared = {d.name for d in decls}
        for group in refs:
            for name, t in group:
                if name not in declared:
                    raise self.error(f"undeclared variable {name}", t, SemanticError)
        all_refs = [requires, ensures] + [r for b in behaviors for r in (b.pre, b.post)]
        for ref in all_refs:
            if ref.qmat not in seen:
                raise SemanticError(f"QMat_{ref.qmat} is referenced but not defined")
            if len(seen[ref.qmat]) != len(ref.vars):
                raise SemanticError(f"QMat_{ref.qmat} size does not match its vector of {len(ref.vars)}")
        try:
            return AnnotatedProgram(
                func, tuple(decls), tuple(statements), requires, ensures, tuple(behaviors),
                tuple(qmats), tuple(valid), state_type, io_type,
            )
        except ValueError as exc:
            raise SemanticError(str(exc)) from exc


def parse_source(text: str, allow_unknown_tactics: bool = False) -> AnnotatedProgram:
    """Parse emitted source back into an :class:`AnnotatedProgram`.

    Raises
    ------
    ParseError
        With line and column on a syntax error.
    SemanticError
        For undeclared variables or undefined matrices.
    UnknownTacticError
        For a tactic the checker does not know, unless
        ``allow_unknown_tactics`` is set.
    """
    return _Parser(text, allow_unknown_tactics).program()
