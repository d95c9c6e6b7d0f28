"""Evaluation of validated skill code.

The main interpreter lowers a SkillAst back to a CPython code object
(grammar and whitelist have already fenced it in) and executes it in a
closed namespace: no builtins beyond the whitelisted six, fresh locals
per call, bindings copied in by name. That keeps per-call cost at
microseconds, which matters because an episode evaluates skill bodies
tens of thousands of times.

Semantics are plain double precision: all literals are floats, ``//`` is
floor division, ``%`` takes the sign of the divisor, ``**`` is real
exponentiation. Division or modulo by zero, overflow, and non-finite or
non-real results raise EvalError; callers treat the candidate as invalid
for that evaluation.
"""

from __future__ import annotations

import ast as pyast
import math
from dataclasses import dataclass, field
from typing import Mapping

from .nodes import (
    AugAssign,
    BinOp,
    Call,
    Compare,
    CondChain,
    Expr,
    Num,
    Ref,
    SkillAst,
    Stmt,
    UnaryOp,
    free_names,
)
from . import whitelist as wl
from .parser import parse
from .validator import STAGE_PARSE, STAGE_SANDBOX, ValidationReport, validate

MAX_RANGE_LENGTH = 1_000_000


class EvalError(Exception):
    """Raised when skill code faults at run time (zero division,
    overflow, non-finite or non-real result)."""


def dsl_range(n) -> range:
    """``range`` as the sandbox defines it: the argument is floored to an
    integer, negatives give an empty sequence, and absurd lengths are
    refused rather than iterated."""
    count = int(math.floor(n))
    if count > MAX_RANGE_LENGTH:
        raise EvalError(f"range({n!r}) exceeds the sandbox bound")
    return range(max(0, count))


SANDBOX_BUILTINS = {
    "min": min,
    "max": max,
    "abs": abs,
    "sum": sum,
    "len": len,
    "range": dsl_range,
}

_EXEC_GLOBALS = {"__builtins__": {}, **SANDBOX_BUILTINS}

_PY_BINOPS = {
    "+": pyast.Add,
    "-": pyast.Sub,
    "*": pyast.Mult,
    "/": pyast.Div,
    "//": pyast.FloorDiv,
    "%": pyast.Mod,
    "**": pyast.Pow,
}

_PY_CMPOPS = {
    ">": pyast.Gt,
    "<": pyast.Lt,
    ">=": pyast.GtE,
    "<=": pyast.LtE,
    "==": pyast.Eq,
    "!=": pyast.NotEq,
}


@dataclass
class EvalContext:
    """One evaluation's variable bindings plus the accumulator.

    Bindings are keyed by canonical names (aliases in the code resolve
    onto them) and are never mutated by evaluation; only the one-slot
    accumulator changes. Do not share a context across concurrent
    evaluations.
    """

    bindings: Mapping[str, float]
    value: list[float] = field(default_factory=lambda: [0.0])


def _lower_expr(node: Expr) -> pyast.expr:
    if isinstance(node, Num):
        return pyast.Constant(node.value)
    if isinstance(node, Ref):
        return pyast.Name(node.name, pyast.Load())
    if isinstance(node, UnaryOp):
        op = pyast.USub() if node.op == "-" else pyast.UAdd()
        return pyast.UnaryOp(op, _lower_expr(node.operand))
    if isinstance(node, BinOp):
        return pyast.BinOp(_lower_expr(node.left), _PY_BINOPS[node.op](), _lower_expr(node.right))
    if isinstance(node, Compare):
        return pyast.Compare(
            _lower_expr(node.operands[0]),
            [_PY_CMPOPS[op]() for op in node.ops],
            [_lower_expr(operand) for operand in node.operands[1:]],
        )
    if isinstance(node, Call):
        return pyast.Call(
            pyast.Name(node.func, pyast.Load()),
            [_lower_expr(a) for a in node.args],
            [],
        )
    raise TypeError(f"unknown expression node {node!r}")


def _accumulator_target() -> pyast.expr:
    return pyast.Subscript(
        pyast.Name("value", pyast.Load()), pyast.Constant(0), pyast.Store()
    )


def _lower_stmt(node: Stmt) -> pyast.stmt:
    if isinstance(node, AugAssign):
        return pyast.AugAssign(_accumulator_target(), _PY_BINOPS[node.op](), _lower_expr(node.expr))
    if isinstance(node, CondChain):
        lowered: list[pyast.stmt] = [_lower_stmt(s) for s in node.orelse]
        for test, body in reversed(node.branches):
            lowered = [
                pyast.If(_lower_expr(test), [_lower_stmt(s) for s in body], lowered)
            ]
        return lowered[0]
    raise TypeError(f"unknown statement node {node!r}")


class CompiledBody:
    """A skill code body lowered to a CPython code object, ready to run
    against canonical bindings. Immutable after construction; safe to
    share across threads (each run builds a fresh namespace)."""

    __slots__ = ("code", "name_map")

    def __init__(self, ast: SkillAst):
        module = pyast.Module(body=[_lower_stmt(s) for s in ast.statements], type_ignores=[])
        pyast.fix_missing_locations(module)
        self.code = compile(module, "<skill>", "exec")
        self.name_map = tuple((name, wl.canonical_binding(name)) for name in sorted(free_names(ast)))

    def run(self, bindings: Mapping[str, float]) -> float:
        ns: dict[str, object] = {"value": [0.0]}
        for src, canonical in self.name_map:
            try:
                ns[src] = bindings[canonical]
            except KeyError:
                raise EvalError(f"variable '{src}' is unbound in this context") from None
        try:
            exec(self.code, _EXEC_GLOBALS, ns)  # noqa: S102 - grammar+whitelist fenced
        except (ArithmeticError, TypeError, ValueError) as exc:
            raise EvalError(str(exc)) from exc
        result = ns["value"][0]  # type: ignore[index]
        if isinstance(result, complex) or not isinstance(result, (int, float)):
            raise EvalError(f"skill produced a non-real result: {result!r}")
        result = float(result)
        if not math.isfinite(result):
            raise EvalError(f"skill produced a non-finite result: {result!r}")
        return result


_COMPILE_CACHE: dict[SkillAst, CompiledBody] = {}


def compile_body(ast: SkillAst) -> CompiledBody:
    """Compile (with caching: parsed ASTs are immutable and hashable)."""
    body = _COMPILE_CACHE.get(ast)
    if body is None:
        body = CompiledBody(ast)
        if len(_COMPILE_CACHE) > 4096:
            _COMPILE_CACHE.clear()
        _COMPILE_CACHE[ast] = body
    return body


def evaluate(ast: SkillAst, ctx: EvalContext) -> float:
    """Run the program against the context; return the final accumulator.

    Deterministic: the same ast and bindings give bit-identical results.
    """
    result = compile_body(ast).run(ctx.bindings)
    ctx.value[0] = result
    return result


def sandbox_check(skill, whitelist: wl.VariableWhitelist) -> ValidationReport:
    """Full three-stage pipeline over both code bodies of a skill.

    Stage 1 parses, stage 2 enforces the whitelist, stage 3 executes
    with every whitelisted variable bound to 1.0 and requires a finite
    result. ``skill`` needs ``inlane_code`` and ``outlane_code``
    attributes; the report carries the first failing stage.
    """
    dummy = whitelist.dummy_bindings(1.0)
    for label, code in (("inlane", skill.inlane_code), ("outlane", skill.outlane_code)):
        try:
            ast = parse(code)
        except SyntaxError as exc:
            return ValidationReport.failed(STAGE_PARSE, f"{label}: {exc.msg} (line {exc.lineno})")
        report = validate(ast, whitelist)
        if not report.ok:
            return ValidationReport.failed(report.stage, f"{label}: {report.message}")
        try:
            evaluate(ast, EvalContext(bindings=dummy))
        except EvalError as exc:
            return ValidationReport.failed(STAGE_SANDBOX, f"{label}: {exc}")
    return ValidationReport.passed()
