"""Whitelist validation of parsed skill code."""

from __future__ import annotations

from dataclasses import dataclass

from .nodes import Call, SkillAst, free_names, iter_calls
from .whitelist import VariableWhitelist

STAGE_PARSE = "parse"
STAGE_WHITELIST = "whitelist"
STAGE_SANDBOX = "sandbox"


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    stage: str | None = None
    message: str = ""

    @classmethod
    def passed(cls) -> "ValidationReport":
        return cls(ok=True)

    @classmethod
    def failed(cls, stage: str, message: str) -> "ValidationReport":
        return cls(ok=False, stage=stage, message=message)


def _check_call_shapes(ast: SkillAst) -> str | None:
    """Arity and composition rules for the builtins.

    min/max are variadic over numbers (>= 2 args), abs takes one.
    range(n) yields an integer sequence consumable only by sum and len,
    so a range call may appear solely as the single argument of sum/len,
    and sum/len accept nothing else.
    """
    allowed_range_parents: set[int] = set()
    for call in iter_calls(ast):
        if call.func in ("sum", "len"):
            if len(call.args) != 1 or not (
                isinstance(call.args[0], Call) and call.args[0].func == "range"
            ):
                return f"{call.func}() takes exactly one range(...) argument"
            allowed_range_parents.add(id(call.args[0]))
    for call in iter_calls(ast):
        if call.func == "range":
            if id(call) not in allowed_range_parents:
                return "range(...) may only appear inside sum(...) or len(...)"
            if len(call.args) != 1:
                return "range() takes exactly one argument"
        elif call.func in ("min", "max"):
            if len(call.args) < 2:
                return f"{call.func}() needs at least two arguments"
        elif call.func == "abs":
            if len(call.args) != 1:
                return "abs() takes exactly one argument"
    return None


def validate(ast: SkillAst, whitelist: VariableWhitelist) -> ValidationReport:
    """Check every name and call against the whitelist.

    Failures are reported, never raised: a ValidationReport with
    ok=False and stage="whitelist" names the first offending construct.
    """
    for name in sorted(free_names(ast)):
        if whitelist.resolve(name) is None:
            return ValidationReport.failed(
                STAGE_WHITELIST, f"variable '{name}' is not in the sandbox whitelist"
            )
    for call in iter_calls(ast):
        if call.func not in whitelist.builtins:
            return ValidationReport.failed(
                STAGE_WHITELIST, f"call to '{call.func}' is not a whitelisted builtin"
            )
    shape_error = _check_call_shapes(ast)
    if shape_error is not None:
        return ValidationReport.failed(STAGE_WHITELIST, shape_error)
    return ValidationReport.passed()
