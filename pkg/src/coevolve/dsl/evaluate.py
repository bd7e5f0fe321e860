"""Numerical evaluation of reward programs.

Evaluation accepts either scalar features or equal-length numpy arrays (one
entry per environment) and is pure.  Every intermediate value saturates at
``VALUE_LIMIT`` so that outputs stay finite for any finite input.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .nodes import (
    Binary,
    Clamp,
    Const,
    Expr,
    Feature,
    MissingFeature,
    NonFiniteResult,
    Norm,
    RewardProgram,
    Unary,
)

EPS_DIV = 1e-8
VALUE_LIMIT = 1e100
EXP_ARG_MAX = float(np.log(VALUE_LIMIT))


def _sat(x):
    return np.clip(x, -VALUE_LIMIT, VALUE_LIMIT)


def guarded_div(num, den):
    """num / (sign(den) * max(|den|, EPS_DIV)), with sign(0) taken as +1."""
    sign = np.where(den >= 0, 1.0, -1.0)
    return num / (sign * np.maximum(np.abs(den), EPS_DIV))


def _exp(x):
    return np.exp(np.minimum(x, EXP_ARG_MAX))


def eval_expr(expr: Expr, features: Mapping[str, object]):
    if isinstance(expr, Const):
        return _sat(np.float64(expr.value))
    if isinstance(expr, Feature):
        try:
            value = features[expr.name]
        except KeyError:
            raise MissingFeature(expr.name) from None
        return _sat(np.asarray(value, dtype=np.float64))
    if isinstance(expr, Unary):
        x = eval_expr(expr.child, features)
        op = expr.op
        if op == "neg":
            return -x
        if op == "abs":
            return np.abs(x)
        if op == "exp":
            return _exp(x)
        if op == "tanh":
            return np.tanh(x)
        if op == "sqrt":
            return np.sqrt(np.maximum(x, 0.0))
        raise ValueError(f"unknown unary op {op!r}")
    if isinstance(expr, Binary):
        a = eval_expr(expr.left, features)
        b = eval_expr(expr.right, features)
        op = expr.op
        if op == "+":
            return _sat(a + b)
        if op == "-":
            return _sat(a - b)
        if op == "*":
            return _sat(a * b)
        if op == "/":
            return _sat(guarded_div(a, b))
        if op == "min":
            return np.minimum(a, b)
        if op == "max":
            return np.maximum(a, b)
        raise ValueError(f"unknown binary op {op!r}")
    if isinstance(expr, Norm):
        total = np.float64(0.0)
        for child in expr.children:
            total = total + np.square(eval_expr(child, features))
        return _sat(np.sqrt(total))
    if isinstance(expr, Clamp):
        return np.clip(eval_expr(expr.child, features), expr.lo, expr.hi)
    raise TypeError(f"not an expression: {expr!r}")


def apply_transform(value, transform: str, temperature: float):
    if transform == "identity":
        return value
    if transform == "exp_neg_over_temp":
        arg = np.clip(-value / temperature, -1e4, EXP_ARG_MAX)
        return np.exp(arg)
    raise ValueError(f"unknown transform {transform!r}")


def _out(x):
    x = np.asarray(x, dtype=np.float64)
    return float(x) if x.ndim == 0 else x


def evaluate(program: RewardProgram, features: Mapping[str, object]):
    """Return ``(total, {component name: value})``.

    Component values are the transformed expression values; the total is the
    weighted sum of the components.
    """
    components = {}
    total = np.float64(0.0)
    with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
        for comp in program.components:
            raw = eval_expr(comp.expr, features)
            value = _sat(apply_transform(raw, comp.transform, comp.temperature))
            components[comp.name] = value
            total = total + _sat(comp.weight * value)
        total = _sat(total)
    if not np.all(np.isfinite(total)) or not all(np.all(np.isfinite(v)) for v in components.values()):
        raise NonFiniteResult("reward evaluation produced a non-finite value")
    shape = np.shape(total)
    return _out(total), {k: _out(np.broadcast_to(v, shape)) for k, v in components.items()}
