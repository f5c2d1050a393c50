"""Closed-form data expressions in the coordinates ``x1``, ``x2``, ``x3``.

The accepted grammar is deliberately small: numbers, ``+ - * / ^`` (``**`` is
also accepted), parentheses, the functions ``exp``, ``sin``, ``cos``, ``sqrt``,
``log`` and the constant ``pi``.
"""
from __future__ import annotations

import re

import numpy as np
import sympy
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

__all__ = ["Expression", "ExpressionError", "parse", "parse_scalar_function"]

COORDS = sympy.symbols("x1 x2 x3", real=True)
_FUNCS = {"exp": sympy.exp, "sin": sympy.sin, "cos": sympy.cos, "sqrt": sympy.sqrt, "log": sympy.log, "pi": sympy.pi}
_NAMES = {f"x{k + 1}": s for k, s in enumerate(COORDS)} | _FUNCS
_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(\*\*|[-+*/^(),]))")


class ExpressionError(ValueError):
    pass


def _check_tokens(text: str, names=_NAMES) -> None:
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExpressionError(f"unexpected character {text[pos:pos + 1]!r} in {text!r}")
        if m.group(2) and m.group(2) not in names:
            raise ExpressionError(f"unknown name {m.group(2)!r} in {text!r}")
        pos = m.end()


class Expression:
    """A scalar expression that can be evaluated at arrays of points and differentiated."""

    def __init__(self, expr: sympy.Expr):
        self.expr = sympy.sympify(expr)
        self._fn = sympy.lambdify(COORDS, self.expr, modules="numpy")

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cols = [points[:, k] if k < points.shape[1] else np.zeros(len(points)) for k in range(3)]
        out = self._fn(*cols)
        return np.broadcast_to(np.asarray(out, dtype=float), (len(points),)).copy()

    def diff(self, k: int) -> "Expression":
        return Expression(sympy.diff(self.expr, COORDS[k]))

    def gradient(self, dim: int) -> list["Expression"]:
        return [self.diff(k) for k in range(dim)]

    def __repr__(self) -> str:
        return f"Expression({self.expr})"


def parse(value) -> Expression:
    """Build an :class:`Expression` from a number or an expression string."""
    if isinstance(value, Expression):
        return value
    if isinstance(value, (int, float)):
        return Expression(sympy.Float(value) if isinstance(value, float) else sympy.Integer(value))
    if not isinstance(value, str):
        raise ExpressionError(f"cannot build an expression from {value!r}")
    _check_tokens(value)
    try:
        expr = parse_expr(
            value,
            local_dict=dict(_NAMES),
            transformations=standard_transformations + (convert_xor,),
        )
    except (SyntaxError, TypeError) as exc:
        raise ExpressionError(f"cannot parse {value!r}: {exc}") from exc
    return Expression(expr)


_Y = sympy.Symbol("y", positive=True)


def parse_scalar_function(text: str):
    """Parse an expression in the single variable ``y``; returns (f, f') as numpy callables."""
    names = _FUNCS | {"y": _Y}
    _check_tokens(text, names)
    try:
        expr = parse_expr(text, local_dict=dict(names), transformations=standard_transformations + (convert_xor,))
    except (SyntaxError, TypeError) as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc}") from exc
    fn = sympy.lambdify(_Y, expr, modules="numpy")
    dfn = sympy.lambdify(_Y, sympy.diff(expr, _Y), modules="numpy")

    def wrap(f):
        return lambda y: np.broadcast_to(np.asarray(f(np.asarray(y, dtype=float)), dtype=float), np.shape(y)).copy()

    return wrap(fn), wrap(dfn)
