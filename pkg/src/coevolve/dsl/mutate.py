"""Random structural and numeric edits of reward programs (drives the mock generator)."""

from __future__ import annotations

import dataclasses
import math
from typing import Sequence

from .. import rng as rngmod
from .nodes import Feature, RewardComponent, RewardProgram, Unary, ValidationError

MUTATION_KINDS = ("weight", "temperature", "add", "drop", "swap_transform")
MAX_COMPONENTS = 8
MAX_RETRIES = 8


def _key_path(rng_key) -> tuple:
    if isinstance(rng_key, (tuple, list)):
        return tuple(rng_key)
    return (rng_key,)


def _signed_unit(gen) -> float:
    # magnitude in [0.1, 1] keeps every edit a visible change
    return float(gen.uniform(0.1, 1.0)) * (1.0 if gen.random() < 0.5 else -1.0)


def _unique_name(base: str, taken: set[str]) -> str:
    name, n = base, 2
    while name in taken:
        name = f"{base}_{n}"
        n += 1
    return name


def _allowed_kinds(program: RewardProgram, feature_pool: Sequence[str]) -> list[str]:
    kinds = ["weight", "temperature", "swap_transform"]
    if feature_pool and len(program.components) < MAX_COMPONENTS:
        kinds.append("add")
    if len(program.components) > 1:
        kinds.append("drop")
    return [k for k in MUTATION_KINDS if k in kinds]


def perturb_weight(program: RewardProgram, gen, strength: float) -> RewardProgram:
    comps = list(program.components)
    i = int(gen.integers(len(comps)))
    w = comps[i].weight
    delta = _signed_unit(gen) * strength * max(1.0, abs(w))
    comps[i] = dataclasses.replace(comps[i], weight=w + delta)
    return RewardProgram(tuple(comps))


def _apply(kind: str, program: RewardProgram, gen, feature_pool, strength: float) -> RewardProgram:
    comps = list(program.components)
    if kind == "weight":
        return perturb_weight(program, gen, strength)
    if kind == "temperature":
        i = int(gen.integers(len(comps)))
        t = comps[i].temperature * math.exp(_signed_unit(gen) * strength)
        comps[i] = dataclasses.replace(comps[i], temperature=t)
    elif kind == "swap_transform":
        i = int(gen.integers(len(comps)))
        new = "identity" if comps[i].transform == "exp_neg_over_temp" else "exp_neg_over_temp"
        comps[i] = dataclasses.replace(comps[i], transform=new)
    elif kind == "drop":
        del comps[int(gen.integers(len(comps)))]
    elif kind == "add":
        feature = str(feature_pool[int(gen.integers(len(feature_pool)))])
        expr = Feature(feature) if gen.random() < 0.5 else Unary("abs", Feature(feature))
        transform = "exp_neg_over_temp" if gen.random() < 0.5 else "identity"
        comps.append(RewardComponent(
            name=_unique_name(f"{feature}_term", {c.name for c in comps}),
            expr=expr,
            temperature=float(10.0 ** gen.uniform(-1.0, 0.5)),
            weight=_signed_unit(gen) * strength,
            transform=transform,
        ))
    else:
        raise ValueError(f"unknown mutation kind {kind!r}")
    return RewardProgram(tuple(comps))


def mutate(program: RewardProgram, rng_key, feature_pool: Sequence[str], strength: float) -> RewardProgram:
    """Apply one random edit; deterministic in ``rng_key``.

    The edit kind is drawn from weight/temperature perturbation, adding a
    component over a pool feature, dropping a component (only if more than
    one remains) and swapping a transform.  Draws that would break a
    program invariant or leave the program unchanged are redrawn a bounded
    number of times before falling back to a weight perturbation.
    """
    if not feature_pool:
        raise ValueError("feature_pool must be non-empty")
    if not 0.0 < strength <= 1.0:
        raise ValueError(f"strength must be in (0, 1], got {strength}")
    gen = rngmod.stream(*_key_path(rng_key), "mutate")
    kinds = _allowed_kinds(program, feature_pool)
    for _ in range(MAX_RETRIES):
        kind = kinds[int(gen.integers(len(kinds)))]
        try:
            child = _apply(kind, program, gen, feature_pool, strength)
        except ValidationError:
            continue
        if child != program:
            return child
    return perturb_weight(program, gen, strength)
