"""Reward-program generation from a mock or an HTTP chat-completion backend."""

from __future__ import annotations

import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import httpx

from .. import rng as rngmod
from ..dsl import DslError, RewardComponent, RewardProgram, mutate, parse
from .prompts import PromptContext, build_prompt

MAX_FAN_OUT = 4

# component vocabularies per task; round-one mock candidates are subsets
TEMPLATE_POOLS = {
    "point-runner": """
component forward_velocity { temp = 1.0 expr = forward_vel weight = 1.0 transform = identity }
component heading_alignment { temp = 0.5 expr = abs(1 - heading_alignment) weight = 0.5 }
component progress { temp = 1.0 expr = progress weight = 10.0 transform = identity }
component lateral_offset { temp = 1.0 expr = abs(lateral_offset) weight = 0.5 }
component action_penalty { temp = 1.0 expr = action_norm weight = -0.05 transform = identity }
""",
    "rotator": """
component orientation_diff { temp = 0.3 expr = rot_dist weight = 4.0 }
component angvel_penalty { temp = 1.0 expr = angvel_abs weight = -0.2 transform = identity }
component orientation_diff_decrease { temp = 1.0 expr = rot_dist_decrease weight = 20.0 transform = identity }
component success_bonus { temp = 1.0 expr = success weight = 1.0 transform = identity }
""",
    "latch-puller": """
component drawer_progress { temp = 1.0 expr = drawer_progress weight = 20.0 transform = identity }
component grip_distance { temp = 0.1 expr = grip_distance weight = 1.0 }
component open_drawer { temp = 0.1 expr = max(0.4 - drawer_pos, 0) weight = 2.0 }
component action_penalty { temp = 1.0 expr = action_norm weight = -0.01 transform = identity }
""",
    "two-armed-bandit": """
component payoff { temp = 1.0 expr = payoff weight = 1.0 transform = identity }
component arm { temp = 1.0 expr = arm weight = 0.5 transform = identity }
""",
}

FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


class BackendUnavailable(RuntimeError):
    pass


class GenerationError(ValueError):
    pass


def template_pool(env_name: str) -> tuple:
    return parse(TEMPLATE_POOLS[env_name]).components


@dataclass(frozen=True)
class MockBackend:
    seed: int
    feature_pool: tuple
    component_template_pool: tuple
    strength: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "feature_pool", tuple(self.feature_pool))
        object.__setattr__(self, "component_template_pool", tuple(self.component_template_pool))
        if not self.feature_pool or not self.component_template_pool:
            raise ValueError("mock backend needs non-empty feature and template pools")

    @classmethod
    def for_env(cls, spec, seed: int = 0, strength: float = 0.5) -> "MockBackend":
        return cls(seed, spec.feature_names, template_pool(spec.name), strength)


@dataclass(frozen=True)
class HttpBackend:
    endpoint_url: str
    model_name: str
    api_key_env_var: Optional[str] = None
    temperature: float = 1.0
    max_retries: int = 3
    timeout: float = 60.0
    fallback_to_mock: bool = True
    fallback: Optional[MockBackend] = None
    transport: Optional[httpx.BaseTransport] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.endpoint_url:
            raise ValueError("HTTP backend needs an endpoint URL")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def headers(self) -> dict:
        h = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env_var) if self.api_key_env_var else None
        if key:
            h["Authorization"] = f"Bearer {key}"
        return h

    def complete(self, client: httpx.Client, prompt: str) -> str:
        body = {
            "model": self.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        resp = client.post(self.endpoint_url, json=body, headers=self.headers())
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]


Backend = Union[MockBackend, HttpBackend]


@dataclass
class Candidate:
    index: int
    program: RewardProgram
    fallback: bool = False
    responses: list = field(default_factory=list)
    errors: list = field(default_factory=list)


def extract_program(text: str) -> RewardProgram:
    """Parse the first fenced block of a model response."""
    m = FENCE_RE.search(text)
    if not m:
        raise GenerationError("response has no fenced block")
    return parse(m.group(1))


def _jitter(comp: RewardComponent, gen) -> RewardComponent:
    # log-uniform rescale by up to e^0.5 on weight and temperature
    return RewardComponent(
        comp.name, comp.expr,
        comp.temperature * math.exp(gen.uniform(-0.5, 0.5)),
        comp.weight * math.exp(gen.uniform(-0.5, 0.5)),
        comp.transform,
    )


def mock_program(ctx: PromptContext, backend: MockBackend, key: tuple) -> RewardProgram:
    if ctx.best_program is not None:
        return mutate(ctx.best_program, (backend.seed, *key), backend.feature_pool, backend.strength)
    gen = rngmod.stream(backend.seed, *key, "mock-template")
    pool = backend.component_template_pool
    size = int(gen.integers(1, len(pool) + 1))
    chosen = sorted(gen.choice(len(pool), size=size, replace=False).tolist())
    return RewardProgram(tuple(_jitter(pool[i], gen) for i in chosen))


def _http_candidate(ctx, backend: HttpBackend, client, prompt, key, index, features) -> Candidate:
    cand = Candidate(index, None)
    for _ in range(backend.max_retries + 1):
        try:
            text = backend.complete(client, prompt)
        except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
            cand.errors.append(f"{type(exc).__name__}: {exc}")
            continue
        cand.responses.append(text)
        try:
            program = extract_program(text)
            if features is not None:
                program.check_features(features)
        except (DslError, GenerationError) as exc:
            cand.errors.append(f"{type(exc).__name__}: {exc}")
            continue
        cand.program = program
        return cand
    if not backend.fallback_to_mock or backend.fallback is None:
        raise BackendUnavailable(f"candidate {index}: no usable response after "
                                 f"{backend.max_retries + 1} attempts ({cand.errors[-1]})")
    cand.program = mock_program(ctx, backend.fallback, (*key, "fallback", index))
    cand.fallback = True
    return cand


def generate_candidates(ctx: PromptContext, k: int, backend: Backend, batch_key,
                        features: Optional[Sequence[str]] = None, prompt: Optional[str] = None) -> list:
    """Return ``k`` Candidates in index order.

    ``features``, when given, is the environment feature set every program
    must validate against; mock candidates that fail are regenerated under a
    new key.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    key = batch_key if isinstance(batch_key, tuple) else (batch_key,)
    features = tuple(features) if features is not None else None
    if isinstance(backend, MockBackend):
        out = []
        for i in range(k):
            for attempt in range(16):
                program = mock_program(ctx, backend, (*key, i, attempt))
                if features is None or program.features() <= set(features):
                    break
            else:
                raise GenerationError(f"mock candidate {i} keeps referencing unknown features")
            out.append(Candidate(i, program))
        return out
    prompt = prompt if prompt is not None else build_prompt(ctx)
    with httpx.Client(timeout=backend.timeout, transport=backend.transport) as client:
        with ThreadPoolExecutor(max_workers=min(MAX_FAN_OUT, k)) as pool:
            futures = [pool.submit(_http_candidate, ctx, backend, client, prompt, key, i, features)
                       for i in range(k)]
            return [f.result() for f in futures]
