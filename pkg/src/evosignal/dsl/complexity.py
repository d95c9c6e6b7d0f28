"""Structural complexity of skill code: node count and branch depth.

The counting convention is calibrated so the minimal baseline skill
(``value[0] += num_waiting_vehicle``) measures exactly 3 nodes: the
statement, the accumulator target reference, and the source reference.
Concretely:

* aug-assign statements count 1, plus 1 for the accumulator target;
* operators (arithmetic, comparison, unary) and calls count 1 each;
* variable references count 1 each; numeric literals count 0;
* conditional-chain headers are not counted as nodes - their tests and
  branch bodies carry the weight, and branching complexity is reported
  separately as ``branch_depth`` (an if/elif/else chain is one level;
  only a chain nested inside a branch body goes deeper).
"""

from __future__ import annotations

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
)


def _expr_nodes(expr: Expr) -> int:
    if isinstance(expr, Num):
        return 0
    if isinstance(expr, Ref):
        return 1
    if isinstance(expr, UnaryOp):
        return 1 + _expr_nodes(expr.operand)
    if isinstance(expr, BinOp):
        return 1 + _expr_nodes(expr.left) + _expr_nodes(expr.right)
    if isinstance(expr, Compare):
        return 1 + sum(_expr_nodes(op) for op in expr.operands)
    if isinstance(expr, Call):
        return 1 + sum(_expr_nodes(a) for a in expr.args)
    raise TypeError(f"unknown expression node {expr!r}")


def _stmt_nodes(stmt: Stmt) -> int:
    if isinstance(stmt, AugAssign):
        # statement + the value[0] target reference + the expression
        return 2 + _expr_nodes(stmt.expr)
    if isinstance(stmt, CondChain):
        total = 0
        for test, body in stmt.branches:
            total += _expr_nodes(test)
            total += sum(_stmt_nodes(s) for s in body)
        total += sum(_stmt_nodes(s) for s in stmt.orelse)
        return total
    raise TypeError(f"unknown statement node {stmt!r}")


def _stmt_depth(stmt: Stmt) -> int:
    if isinstance(stmt, AugAssign):
        return 0
    if isinstance(stmt, CondChain):
        inner = 0
        for _, body in stmt.branches:
            for s in body:
                inner = max(inner, _stmt_depth(s))
        for s in stmt.orelse:
            inner = max(inner, _stmt_depth(s))
        return 1 + inner
    raise TypeError(f"unknown statement node {stmt!r}")


def complexity(ast: SkillAst) -> tuple[int, int]:
    """(node_count, branch_depth) for one code body."""
    nodes = sum(_stmt_nodes(s) for s in ast.statements)
    depth = max((_stmt_depth(s) for s in ast.statements), default=0)
    return nodes, depth
