"""A small sandboxed language for reward programs.

A program is a list of named components; each component has an expression
over environment features, a temperature, a transform and a weight::

    component orientation_diff {
      temp = 0.1
      expr = rot_dist
      weight = 4.0
    }

The component value is ``exp(-expr / temp)`` (or the raw expression for the
``identity`` transform) and the total reward is the weighted sum.
"""

from .evaluate import EPS_DIV, VALUE_LIMIT, evaluate, eval_expr, guarded_div
from .mutate import MUTATION_KINDS, mutate
from .nodes import (
    Binary,
    Clamp,
    Const,
    DslError,
    Expr,
    Feature,
    FeatureMismatch,
    MissingFeature,
    NonFiniteResult,
    Norm,
    ParseError,
    RewardComponent,
    RewardProgram,
    Unary,
    ValidationError,
)
from .syntax import format_expr, parse, parse_expr, to_text

__all__ = [
    "Binary", "Clamp", "Const", "DslError", "EPS_DIV", "Expr", "Feature", "FeatureMismatch",
    "MUTATION_KINDS", "MissingFeature", "NonFiniteResult", "Norm", "ParseError",
    "RewardComponent", "RewardProgram", "Unary", "VALUE_LIMIT", "ValidationError",
    "eval_expr", "evaluate", "format_expr", "guarded_div", "mutate", "parse", "parse_expr",
    "to_text",
]
