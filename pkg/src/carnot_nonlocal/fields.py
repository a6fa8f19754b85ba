"""Scalar fields on the group and a small safe expression language.

Fields are vectorised: they take an array of points with trailing axis of
length ``n`` (exponential coordinates) and return an array of the leading
shape.  Time-dependent fields take ``(x, t)``.
"""
from __future__ import annotations

import ast
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "ScalarField",
    "as_field",
    "coordinate",
    "constant",
    "parse_expression",
    "ExpressionError",
]


@dataclass(frozen=True)
class ScalarField:
    """A deterministic real-valued field ``f(x)`` (optionally ``f(x, t)``).

    ``smoothness`` is the number of continuous derivatives the caller
    vouches for; finite-difference routines use it to pick their step.
    """

    func: Callable
    smoothness: float = math.inf
    time_dependent: bool = False
    label: str = ""

    def __call__(self, x, t=None):
        x = np.asarray(x, dtype=float)
        if self.time_dependent:
            out = self.func(x, 0.0 if t is None else t)
        else:
            out = self.func(x)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy()

    def __mul__(self, other: "ScalarField") -> "ScalarField":
        other = as_field(other)
        if self.time_dependent or other.time_dependent:
            return ScalarField(lambda x, t: self(x, t) * other(x, t),
                               min(self.smoothness, other.smoothness), True)
        return ScalarField(lambda x: self(x) * other(x),
                           min(self.smoothness, other.smoothness))

    def at_time(self, t: float) -> "ScalarField":
        if not self.time_dependent:
            return self
        return ScalarField(lambda x: self.func(x, t), self.smoothness, False, self.label)


def as_field(f, smoothness: float = math.inf) -> ScalarField:
    if isinstance(f, ScalarField):
        return f
    if isinstance(f, (int, float)):
        return constant(float(f))
    if isinstance(f, str):
        return parse_expression(f)
    return ScalarField(f, smoothness)


def coordinate(j: int) -> ScalarField:
    """The coordinate function eta_j (0-based ``j``)."""
    return ScalarField(lambda x: x[..., j], label=f"x{j + 1}")


def constant(c: float) -> ScalarField:
    return ScalarField(lambda x: np.full(np.shape(x)[:-1], c), label=repr(c))


class ExpressionError(ValueError):
    pass


_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
    "log": np.log, "sqrt": np.sqrt, "tanh": np.tanh, "sinh": np.sinh,
    "cosh": np.cosh, "abs": np.abs, "arctan": np.arctan,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {
    ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
    ast.Div: np.divide, ast.Pow: np.power,
}


def _compile(node, names):
    if isinstance(node, ast.Expression):
        return _compile(node.body, names)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        v = float(node.value)
        return lambda env: v
    if isinstance(node, ast.Name):
        if node.id in _CONSTS:
            v = _CONSTS[node.id]
            return lambda env: v
        if node.id not in names:
            raise ExpressionError(f"unknown name {node.id!r}")
        key = node.id
        return lambda env: env[key]
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op = _BINOPS[type(node.op)]
        lhs, rhs = _compile(node.left, names), _compile(node.right, names)
        return lambda env: op(lhs(env), rhs(env))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        arg = _compile(node.operand, names)
        if isinstance(node.op, ast.USub):
            return lambda env: -arg(env)
        return arg
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
            and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
        fn = _FUNCS[node.func.id]
        arg = _compile(node.args[0], names)
        return lambda env: fn(arg(env))
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)}")


def parse_expression(text: str, dim: int = 3, smoothness: float = math.inf) -> ScalarField:
    """Compile an arithmetic expression in ``x1..x<dim>`` and ``t``.

    Only arithmetic, the functions in ``_FUNCS`` and the constants ``pi``,
    ``e`` are accepted.  The result is time dependent iff ``t`` occurs.

    >>> f = parse_expression("x1**2 + sin(pi*x2)", dim=2)
    >>> float(f(np.array([3.0, 0.0])))
    9.0
    """
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc}") from None
    names = {f"x{i + 1}" for i in range(dim)} | {"t"}
    body = _compile(tree, names)
    uses_t = any(isinstance(n, ast.Name) and n.id == "t" for n in ast.walk(tree))
    used = {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)}

    def env_of(x, t):
        env = {f"x{i + 1}": x[..., i] for i in range(min(dim, x.shape[-1]))
               if f"x{i + 1}" in used}
        missing = [k for k in used if k.startswith("x") and k not in env and k not in _CONSTS]
        if missing:
            raise ExpressionError(f"{text!r} uses {missing} but points have dim {x.shape[-1]}")
        env["t"] = t
        return env

    if uses_t:
        return ScalarField(lambda x, t: body(env_of(x, t)), smoothness, True, text)
    return ScalarField(lambda x: body(env_of(x, 0.0)), smoothness, False, text)
