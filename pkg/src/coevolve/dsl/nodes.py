"""Expression tree and program types for reward programs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Union

UNARY_OPS = ("neg", "abs", "exp", "tanh", "sqrt")
BINARY_OPS = ("+", "-", "*", "/", "min", "max")
TRANSFORMS = ("exp_neg_over_temp", "identity")
DEFAULT_TRANSFORM = "exp_neg_over_temp"

# call-syntax functions and their arity (None = variadic, at least one)
FUNCTIONS = {
    "abs": 1,
    "exp": 1,
    "tanh": 1,
    "sqrt": 1,
    "min": 2,
    "max": 2,
    "norm": None,
    "clamp": 3,
}


class DslError(Exception):
    """Base class for reward-program errors."""


class ParseError(DslError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.message = message
        self.line = line
        self.column = column


class ValidationError(DslError):
    pass


class MissingFeature(DslError):
    def __init__(self, name: str):
        super().__init__(f"feature {name!r} is not provided")
        self.name = name


class FeatureMismatch(ValidationError):
    def __init__(self, missing: Iterable[str]):
        self.missing = sorted(set(missing))
        super().__init__(f"reward references unknown features: {', '.join(self.missing)}")


class NonFiniteResult(DslError):
    pass


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Feature:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    child: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Norm:
    children: tuple
    order: int = 2


@dataclass(frozen=True)
class Clamp:
    child: "Expr"
    lo: float
    hi: float


Expr = Union[Const, Feature, Unary, Binary, Norm, Clamp]


def walk(expr: Expr) -> Iterator[Expr]:
    yield expr
    if isinstance(expr, Unary):
        yield from walk(expr.child)
    elif isinstance(expr, Binary):
        yield from walk(expr.left)
        yield from walk(expr.right)
    elif isinstance(expr, Norm):
        for child in expr.children:
            yield from walk(child)
    elif isinstance(expr, Clamp):
        yield from walk(expr.child)


def features_of(expr: Expr) -> set[str]:
    return {node.name for node in walk(expr) if isinstance(node, Feature)}


def validate_expr(expr: Expr) -> None:
    for node in walk(expr):
        if isinstance(node, Const):
            if not math.isfinite(node.value):
                raise ValidationError(f"non-finite constant {node.value!r}")
        elif isinstance(node, Unary):
            if node.op not in UNARY_OPS:
                raise ValidationError(f"unknown function {node.op!r}")
        elif isinstance(node, Binary):
            if node.op not in BINARY_OPS:
                raise ValidationError(f"unknown operator {node.op!r}")
        elif isinstance(node, Norm):
            if not node.children:
                raise ValidationError("norm() needs at least one argument")
            if node.order != 2:
                raise ValidationError("only the 2-norm is supported")
        elif isinstance(node, Clamp):
            if not (math.isfinite(node.lo) and math.isfinite(node.hi)):
                raise ValidationError("clamp bounds must be finite")
            if node.lo > node.hi:
                raise ValidationError(f"clamp bounds reversed: {node.lo} > {node.hi}")
        elif not isinstance(node, Feature):
            raise ValidationError(f"unknown node {node!r}")


@dataclass(frozen=True)
class RewardComponent:
    name: str
    expr: Expr
    temperature: float
    weight: float
    transform: str = DEFAULT_TRANSFORM

    def __post_init__(self):
        if not self.name.isidentifier():
            raise ValidationError(f"component name {self.name!r} is not an identifier")
        if not (math.isfinite(self.temperature) and self.temperature > 0):
            raise ValidationError(
                f"component {self.name!r}: temperature must be > 0, got {self.temperature!r}")
        if not math.isfinite(self.weight):
            raise ValidationError(f"component {self.name!r}: weight must be finite")
        if self.transform not in TRANSFORMS:
            raise ValidationError(f"component {self.name!r}: unknown transform {self.transform!r}")
        validate_expr(self.expr)


@dataclass(frozen=True)
class RewardProgram:
    """An ordered list of weighted components.

    Equality is structural: ``source_text`` is carried for auditing and
    ignored when comparing programs.
    """

    components: tuple
    source_text: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ValidationError("a reward program needs at least one component")
        seen = set()
        for comp in self.components:
            if comp.name in seen:
                raise ValidationError(f"duplicate component name {comp.name!r}")
            seen.add(comp.name)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.components]

    @property
    def weights(self) -> list[float]:
        return [c.weight for c in self.components]

    def features(self) -> set[str]:
        out: set[str] = set()
        for comp in self.components:
            out |= features_of(comp.expr)
        return out

    def check_features(self, available: Iterable[str]) -> None:
        """Raise FeatureMismatch if the program reads features outside ``available``."""
        missing = self.features() - set(available)
        if missing:
            raise FeatureMismatch(missing)
