"""Run configuration: one JSON document with env, ppo, bo, schedule, llm, mode, seed and out_dir."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .coevolution import SCHEDULE_PRESETS, RunMode, Schedule
from .envs import EnvSpec, UnknownEnv, get_spec
from .llm import HttpBackend, MockBackend
from .ppo import PpoConfig

SECTIONS = {"env", "ppo", "bo", "schedule", "llm", "mode", "seed", "out_dir", "workers"}
BO_KEYS = {"initial_alphas", "J", "T_BO", "ei_xi", "grid_size"}
LLM_KEYS = {"backend", "endpoint_url", "model_name", "api_key_env_var", "temperature", "max_retries",
            "timeout_s", "fallback_to_mock", "mutation_strength"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env_name: str = "point-runner"
    env_overrides: dict = field(default_factory=dict)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    bo: dict = field(default_factory=dict)  # ei_xi / grid_size
    schedule: Schedule = field(default_factory=Schedule)
    llm: dict = field(default_factory=lambda: {"backend": "mock"})
    mode: RunMode = field(default_factory=lambda: RunMode("roska"))
    seed: int = 0
    out_dir: str = "runs"
    workers: int = 1

    def env_spec(self) -> EnvSpec:
        return get_spec(self.env_name, **self.env_overrides)

    def backend(self, spec: Optional[EnvSpec] = None):
        spec = spec or self.env_spec()
        strength = float(self.llm.get("mutation_strength", 0.5))
        mock = MockBackend.for_env(spec, self.seed, strength)
        if self.llm.get("backend", "mock") == "mock":
            return mock
        return HttpBackend(
            endpoint_url=self.llm.get("endpoint_url", ""),
            model_name=self.llm.get("model_name", ""),
            api_key_env_var=self.llm.get("api_key_env_var"),
            temperature=float(self.llm.get("temperature", 1.0)),
            max_retries=int(self.llm.get("max_retries", 3)),
            timeout=float(self.llm.get("timeout_s", 60.0)),
            fallback_to_mock=bool(self.llm.get("fallback_to_mock", True)),
            fallback=mock,
        )

    def with_overrides(self, mode: Optional[str] = None, seed: Optional[int] = None, llm: Optional[str] = None,
                       out_dir: Optional[str] = None) -> "RunConfig":
        cfg = replace(self, llm=dict(self.llm), env_overrides=dict(self.env_overrides), bo=dict(self.bo))
        try:
            if mode is not None:
                cfg.mode = RunMode.parse(mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if seed is not None:
            cfg.seed = int(seed)
        if llm is not None:
            cfg.llm["backend"] = llm
        if out_dir is not None:
            cfg.out_dir = out_dir
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.env_spec()
        except (UnknownEnv, ValueError) as exc:
            raise ConfigError(f"env: {exc}") from None
        backend = self.llm.get("backend", "mock")
        if backend not in ("mock", "http"):
            raise ConfigError(f"llm.backend must be mock or http, got {backend!r}")
        if backend == "http" and not self.llm.get("endpoint_url"):
            raise ConfigError("llm.endpoint_url is required for the http backend")
        if self.mode.kind in ("roska", "roska-u", "fixed-alpha") and self.schedule.n_rounds < 1:
            raise ConfigError("schedule.n_rounds must be >= 1")

    def to_dict(self) -> dict:
        env = {"name": self.env_name, **self.env_overrides}
        ppo = asdict(self.ppo)
        ppo["hidden"] = list(self.ppo.hidden)
        ppo["adam_betas"] = list(self.ppo.adam_betas)
        return {
            "env": env, "ppo": ppo, "bo": dict(self.bo), "schedule": self.schedule.to_dict(),
            "llm": dict(self.llm), "mode": self.mode.label, "seed": self.seed, "out_dir": self.out_dir,
            "workers": self.workers,
        }


def _check_keys(section: str, d: dict, allowed) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")


def from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys("top-level", doc, SECTIONS)
    try:
        env = dict(doc.get("env", {}))
        name = env.pop("name", "point-runner")
        ppo_d = dict(doc.get("ppo", {}))
        # the env block may carry n_envs for the trainer's batch
        if "n_envs" in env:
            ppo_d["n_envs"] = int(env.pop("n_envs"))
        _check_keys("ppo", ppo_d, {f.name for f in fields(PpoConfig)})
        ppo = PpoConfig(**ppo_d)

        sched_d = dict(doc.get("schedule", {}))
        preset = sched_d.pop("preset", "default")
        if preset not in SCHEDULE_PRESETS:
            raise ConfigError(f"unknown schedule preset {preset!r}")
        bo = dict(doc.get("bo", {}))
        _check_keys("bo", bo, BO_KEYS)
        for src, dst in (("J", "bo_J"), ("T_BO", "bo_T_BO"), ("initial_alphas", "initial_alphas")):
            if src in bo:
                sched_d[dst] = bo.pop(src)
        base = SCHEDULE_PRESETS[preset].to_dict()
        base.update(sched_d)
        schedule = Schedule.from_dict(base)
        schedule.bo_config(**bo)  # validates ei_xi / grid_size

        llm = dict(doc.get("llm", {"backend": "mock"}))
        _check_keys("llm", llm, LLM_KEYS)
        cfg = RunConfig(
            env_name=name, env_overrides=env, ppo=ppo, bo=bo, schedule=schedule, llm=llm,
            mode=RunMode.parse(str(doc.get("mode", "roska"))), seed=int(doc.get("seed", 0)),
            out_dir=str(doc.get("out_dir", "runs")), workers=int(doc.get("workers", 1)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(doc)
