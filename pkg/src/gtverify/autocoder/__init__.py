"""Annotated C code generation, parsing and emission."""
from .emit import emit_source
from .generate import AutocodeError, Names, autocode, final_containment
from .parse import ParseError, SemanticError, UnknownTacticError, parse_source
from .program import (
    AFFINE,
    AnnotatedProgram,
    Assignment,
    Ball,
    Behavior,
    Declaration,
    EllipsoidRef,
    ProofTactic,
)

__all__ = [
    "AFFINE",
    "AnnotatedProgram",
    "Assignment",
    "AutocodeError",
    "Ball",
    "Behavior",
    "Declaration",
    "EllipsoidRef",
    "Names",
    "ParseError",
    "ProofTactic",
    "SemanticError",
    "UnknownTacticError",
    "autocode",
    "emit_source",
    "final_containment",
    "parse_source",
]
