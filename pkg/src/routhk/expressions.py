"""A small arithmetic expression grammar for JSON-defined systems.

Supported: +, -, *, /, ** (numeric exponents or subexpressions), unary minus,
parentheses, numbers, named variables/parameters, and the functions sin, cos,
sinh, cosh, sqrt.  Compiled expressions evaluate on floats, numpy arrays, and
Dual2 scalars alike, so exact jets of JSON-defined solutions come for free.
"""

from __future__ import annotations

import ast

from . import numerics

FUNCTIONS = {
    "sin": numerics.sin,
    "cos": numerics.cos,
    "sinh": numerics.sinh,
    "cosh": numerics.cosh,
    "sqrt": numerics.sqrt,
}

_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
    ast.Load,
)


class ExpressionError(ValueError):
    pass


def compile_expression(source, variables):
    """Compile an expression into fn(env) with env mapping names to values.

    variables is the set of names the expression may reference (functions are
    always available).  Unknown names or disallowed syntax raise
    ExpressionError at compile time.
    """
    source = str(source)
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"bad expression {source!r}: {exc}") from exc
    allowed = set(variables) | set(FUNCTIONS)
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ExpressionError(
                f"{type(node).__name__} not allowed in {source!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                raise ExpressionError(f"unknown function in {source!r}")
            if node.keywords:
                raise ExpressionError(f"keyword arguments not allowed in {source!r}")
        if isinstance(node, ast.Name) and node.id not in allowed:
            raise ExpressionError(f"unknown name {node.id!r} in {source!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ExpressionError(f"non-numeric constant in {source!r}")
    code = compile(tree, f"<expr {source!r}>", "eval")
    consts = dict(FUNCTIONS)

    def fn(env):
        return eval(code, {"__builtins__": {}}, {**consts, **env})

    fn.source = source
    return fn


def compile_entry(entry, variables):
    """Numbers pass through as constants; strings are compiled expressions."""
    if isinstance(entry, (int, float)):
        value = float(entry)
        fn = lambda env, v=value: v
        fn.source = repr(value)
        return fn
    return compile_expression(entry, variables)
