"""Reward-policy co-evolution and its baselines.

A run starts with a zero-shot round: K generated rewards are each probed
from a fresh policy, and the best one is trained further.  Every later
(dynamic-population) round asks the generator for K new rewards conditioned
on the incumbent and its training statistics, searches the fusion ratio for
each one with SC-BO, and keeps the result only if it beats the incumbent's
evaluated return.  A round that finds nothing better draws another batch,
up to a cap.

The baselines reuse the same machinery:

* ``eureka``: every candidate trains from scratch, the best of a round seeds
  the next prompt, nothing is inherited.
* ``roska-u``: SC-BO is replaced by an evenly spaced sweep over alpha.
* ``fixed-alpha=<a>``: alpha is forced to ``a`` and the search budget is
  spent training the fused policy directly.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .dsl import RewardProgram, to_text
from .envs import EnvSpec, env_interface
from .llm import PromptContext, build_prompt, generate_candidates
from .policy import NetArch, ParamVector, fuse, init_params
from .ppo import PpoConfig, TrainingRun, evaluate_return, train
from .scbo import DEFAULT_INITIAL_ALPHAS, BoConfig, sc_bo_search

NEG_INF = -math.inf


class CoEvolutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunMode:
    kind: str
    alpha: Optional[float] = None

    KINDS = ("roska", "eureka", "roska-u", "fixed-alpha")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown mode {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "fixed-alpha":
            if self.alpha is None or not 0.0 <= self.alpha <= 1.0:
                raise ValueError("fixed-alpha needs an alpha in [0, 1]")
        elif self.alpha is not None:
            raise ValueError(f"mode {self.kind} takes no alpha")

    @classmethod
    def parse(cls, text: str) -> "RunMode":
        if text.startswith("fixed-alpha"):
            _, _, a = text.partition("=")
            if not a:
                raise ValueError("fixed-alpha needs a value, e.g. fixed-alpha=0.5")
            return cls("fixed-alpha", float(a))
        return cls(text)

    @property
    def label(self) -> str:
        return f"fixed-alpha={self.alpha!r}" if self.kind == "fixed-alpha" else self.kind

    def __str__(self):
        return self.label


ROSKA = RunMode("roska")
EUREKA = RunMode("eureka")
ROSKA_U = RunMode("roska-u")


def FixedAlpha(alpha: float) -> RunMode:
    return RunMode("fixed-alpha", float(alpha))


@dataclass(frozen=True)
class Schedule:
    n_rounds: int = 5
    batch_size: int = 6
    first_round_probe_epochs: int = 500
    first_round_finish_epochs: int = 2500
    bo_J: int = 12
    bo_T_BO: int = 200
    post_bo_epochs: int = 300
    finish_epochs: int = 2500
    uniform_alphas_count: int = 11
    uniform_probe_epochs: int = 500
    dynamic_population: bool = True
    max_batches_per_dp_round: int = 3
    eureka_epochs: int = 3000
    initial_alphas: tuple = DEFAULT_INITIAL_ALPHAS

    def __post_init__(self):
        object.__setattr__(self, "initial_alphas", tuple(float(a) for a in self.initial_alphas))
        for name in ("n_rounds", "batch_size", "bo_J", "uniform_alphas_count", "max_batches_per_dp_round"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("first_round_probe_epochs", "first_round_finish_epochs", "bo_T_BO", "post_bo_epochs",
                     "finish_epochs", "uniform_probe_epochs", "eureka_epochs"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be >= 0")
        if len(self.initial_alphas) > self.bo_J:
            raise ValueError("bo_J must be >= len(initial_alphas)")

    def bo_config(self, **kw) -> BoConfig:
        return BoConfig(initial_alphas=self.initial_alphas, J=self.bo_J, T_BO=self.bo_T_BO, **kw)

    def uniform_alphas(self) -> list:
        n = self.uniform_alphas_count
        return [0.0] if n == 1 else [float(a) for a in np.linspace(0.0, 1.0, n)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["initial_alphas"] = list(self.initial_alphas)
        return d

    @classmethod
    def from_dict(cls, d) -> "Schedule":
        d = dict(d)
        if "initial_alphas" in d:
            d["initial_alphas"] = tuple(d["initial_alphas"])
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**d)


# two reduced-budget variants, at about 0.74 and 0.56 of the Eureka budget
SCHEDULE_PRESETS = {
    "default": Schedule(),
    "roska-0.74": Schedule(first_round_probe_epochs=200, first_round_finish_epochs=2800, bo_J=12,
                           post_bo_epochs=0, finish_epochs=1300),
    "roska-0.56": Schedule(first_round_probe_epochs=200, first_round_finish_epochs=2800, bo_J=9,
                           post_bo_epochs=0, finish_epochs=800),
}


@dataclass
class CoEvolutionState:
    m: int = 0
    r_best: Optional[RewardProgram] = None
    theta_best: Optional[ParamVector] = None
    v_best: float = NEG_INF
    mts_best: Optional[float] = None
    best_stats: Optional[dict] = None
    # what the next prompt is conditioned on (differs from the incumbent in eureka mode)
    prompt_program: Optional[RewardProgram] = None
    prompt_stats: Optional[dict] = None
    ledger: Counter = field(default_factory=Counter)
    events: list = field(default_factory=list)
    history: list = field(default_factory=list)

    @property
    def total_epochs(self) -> int:
        return int(sum(self.ledger.values()))


@dataclass
class CandidateResult:
    index: int
    program: RewardProgram
    score: float = NEG_INF
    params: Optional[ParamVector] = None
    run: Optional[TrainingRun] = None
    alpha: Optional[float] = None
    epochs: Counter = field(default_factory=Counter)
    events: list = field(default_factory=list)
    error: Optional[str] = None
    fallback: bool = False


def _best_index(results) -> int:
    best = 0
    for i, r in enumerate(results):
        if r.score > results[best].score:
            best = i
    return best


class Store:
    """Hooks for persisting prompts, responses and checkpoints; the default keeps nothing."""

    def write_text(self, relpath: str, text: str) -> None:
        pass

    def save_params(self, name: str, params: ParamVector, arch: NetArch) -> None:
        pass


class CoEvolution:
    def __init__(self, mode: RunMode, schedule: Schedule, env: EnvSpec, backend, seed: int,
                 ppo: Optional[PpoConfig] = None, bo_kwargs: Optional[dict] = None, workers: int = 1,
                 events: Optional[list] = None, store: Optional[Store] = None,
                 train_fn: Callable = train, eval_fn: Callable = evaluate_return):
        self.mode, self.schedule, self.env, self.backend, self.seed = mode, schedule, env, backend, int(seed)
        self.ppo = ppo or PpoConfig()
        self.arch = self.ppo.arch(env)
        self.bo = schedule.bo_config(**(bo_kwargs or {}))
        self.workers = max(1, int(workers))
        self.store = store or Store()
        self.train_fn, self.eval_fn = train_fn, eval_fn
        self.state = CoEvolutionState(events=events if events is not None else [])

    # building blocks -------------------------------------------------------------------------

    def emit(self, rec: dict) -> None:
        self.state.events.append(rec)

    def theta0(self, m: int) -> ParamVector:
        return init_params(self.arch, (self.seed, "theta0", m))

    def score(self, params: ParamVector) -> float:
        # a common evaluation key makes scores comparable across candidates and rounds
        return float(self.eval_fn(params, self.env, self.ppo.eval_episodes, (self.seed, "evaluate"), self.arch))

    def _train(self, res: CandidateResult, program, init, p, key, category, tags) -> TrainingRun:
        res.epochs[category] += p
        sink = []
        try:
            return self.train_fn(program, init, p, self.ppo, self.env, key, events=sink,
                                 tags={**tags, "stage": category})
        finally:
            res.events.extend(sink)

    def _context(self) -> PromptContext:
        st = self.state
        return PromptContext(self.env.task_description, env_interface(self.env), st.prompt_program,
                             st.prompt_stats)

    def generate(self, m: int, b: int) -> list:
        ctx = self._context()
        prompt = build_prompt(ctx)
        tag = f"round{m:02d}-batch{b}"
        self.store.write_text(f"prompts/{tag}.txt", prompt)
        cands = generate_candidates(ctx, self.schedule.batch_size, self.backend, (self.seed, "gen", m, b),
                                    self.env.feature_names, prompt=prompt)
        for c in cands:
            for j, raw in enumerate(c.responses):
                self.store.write_text(f"prompts/{tag}-cand{c.index}-response{j}.txt", raw)
            self.store.write_text(f"prompts/{tag}-cand{c.index}.reward", to_text(c.program))
        self.emit({"event": "candidates", "round": m, "batch": b, "kind": "feedback" if ctx.is_feedback else "initial",
                   "programs": [to_text(c.program) for c in cands], "fallback": [c.fallback for c in cands]})
        return cands

    def _evaluate_all(self, fn, cands) -> list:
        def run(c):
            res = CandidateResult(c.index, c.program, fallback=c.fallback)
            try:
                fn(res)
            except Exception as exc:  # one bad candidate never aborts a round
                res.score, res.error = NEG_INF, f"{type(exc).__name__}: {exc}"
            return res

        if self.workers > 1 and len(cands) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(run, cands))
        else:
            results = [run(c) for c in cands]
        for r in results:  # merged in candidate order whatever the completion order
            self.state.ledger.update(r.epochs)
            self.state.events.extend(r.events)
            rec = {"event": "candidate", **self._tags, "candidate": r.index, "score": r.score,
                   "alpha": r.alpha, "mts": r.run.mts if r.run else None,
                   "epochs": int(sum(r.epochs.values()))}
            if r.error:
                rec["error"] = r.error
            self.emit(rec)
        return results

    # candidate evaluators by mode ------------------------------------------------------

    def _probe(self, init, epochs, category):
        def fn(res: CandidateResult):
            tags = {**self._tags, "candidate": res.index}
            run = self._train(res, res.program, init, epochs, (*self._key, res.index, category), category, tags)
            res.run, res.params, res.score = run, run.final_params, self.score(run.final_params)
        return fn

    def _scbo(self, theta0):
        def fn(res: CandidateResult):
            tags = {**self._tags, "candidate": res.index}

            def s_alpha(reward, params, epochs, seed, alpha):
                run = self._train(res, reward, params, epochs, seed, "bo", {**tags, "alpha": alpha})
                return self.score(run.final_params), run

            sink = []
            out = sc_bo_search(res.program, self.state.theta_best, theta0, self.bo, s_alpha,
                               (*self._key, res.index), events=sink, tags=tags)
            res.events.extend(sink)
            best = out.best
            if best.payload is None:
                raise CoEvolutionError("every SC-BO evaluation failed")
            res.alpha = out.alpha_star
            run = self._train(res, res.program, best.payload.final_params, self.schedule.post_bo_epochs,
                              (*self._key, res.index, "post_bo"), "post_bo", tags)
            res.run, res.params, res.score = run, run.final_params, self.score(run.final_params)
        return fn

    def _uniform(self, theta0):
        def fn(res: CandidateResult):
            tags = {**self._tags, "candidate": res.index}
            best = None
            for j, alpha in enumerate(self.schedule.uniform_alphas()):
                fused = fuse(self.state.theta_best, theta0, alpha)
                run = self._train(res, res.program, fused, self.schedule.uniform_probe_epochs,
                                  (*self._key, res.index, "uniform", j), "uniform_probe", {**tags, "alpha": alpha})
                s = self.score(run.final_params)
                self.emit_local(res, {"event": "uniform_eval", **tags, "iteration": j, "alpha": alpha, "score": s})
                if best is None or s > best[0]:
                    best = (s, alpha, run)
            res.alpha = best[1]
            run = self._train(res, res.program, best[2].final_params, self.schedule.finish_epochs,
                              (*self._key, res.index, "finish"), "finish", tags)
            res.run, res.params, res.score = run, run.final_params, self.score(run.final_params)
        return fn

    def _fixed(self, theta0, alpha):
        def fn(res: CandidateResult):
            tags = {**self._tags, "candidate": res.index}
            res.alpha = alpha
            fused = fuse(self.state.theta_best, theta0, alpha)
            epochs = self.schedule.bo_J * self.schedule.bo_T_BO + self.schedule.post_bo_epochs
            run = self._train(res, res.program, fused, epochs, (*self._key, res.index, "fixed"), "fixed_alpha", tags)
            res.run, res.params, res.score = run, run.final_params, self.score(run.final_params)
        return fn

    @staticmethod
    def emit_local(res: CandidateResult, rec: dict) -> None:
        res.events.append(rec)

    # rounds ----------------------------------------------------------------------------------

    def _begin(self, m: int, b: int) -> None:
        self._tags = {"round": m, "batch": b}
        self._key = (self.seed, m, b)

    def _finish(self, results, epochs: int) -> tuple:
        """Train the best candidate ``epochs`` more; returns (result, value)."""
        i = _best_index(results)
        best = results[i]
        if not math.isfinite(best.score) or best.params is None:
            return best, NEG_INF
        if epochs == 0:
            return best, best.score
        res = CandidateResult(best.index, best.program, alpha=best.alpha, fallback=best.fallback)
        try:
            run = self._train(res, best.program, best.params, epochs, (*self._key, best.index, "finish"),
                              "finish", {**self._tags, "candidate": best.index})
            res.run, res.params, res.score = run, run.final_params, self.score(run.final_params)
        except Exception as exc:
            res.score, res.error = NEG_INF, f"{type(exc).__name__}: {exc}"
        self.state.ledger.update(res.epochs)
        self.state.events.extend(res.events)
        self.emit({"event": "finish", **self._tags, "candidate": res.index, "score": res.score,
                   "mts": res.run.mts if res.run else None, "epochs": epochs})
        return res, res.score

    def _accept(self, m: int, res: CandidateResult, value: float) -> bool:
        st = self.state
        if not value > st.v_best:
            return False
        st.r_best, st.theta_best, st.v_best = res.program, res.params, value
        if res.run is not None and res.run.mts is not None:
            st.mts_best = res.run.mts if st.mts_best is None else max(st.mts_best, res.run.mts)
        st.best_stats = res.run.feedback_stats() if res.run is not None else None
        if self.mode.kind != "eureka":
            st.prompt_program, st.prompt_stats = st.r_best, st.best_stats
        self.store.save_params(f"round{m:02d}-best", res.params, self.arch)
        return True

    def _end_round(self, m: int, accepted: bool, batches: int) -> None:
        st = self.state
        st.m = m
        summary = {"event": "round_end", "round": m, "accepted": accepted, "batches": batches,
                   "v_best": st.v_best, "mts_best": st.mts_best, "epochs_total": st.total_epochs,
                   "r_best": to_text(st.r_best) if st.r_best else None,
                   "prompt_program": to_text(st.prompt_program) if st.prompt_program else None,
                   "prompt_stats": st.prompt_stats}
        st.history.append(summary)
        self.emit(summary)

    def run_round_one(self) -> CoEvolutionState:
        if self.state.m != 0:
            raise CoEvolutionError("round one needs a fresh state")
        m = 1
        self.emit({"event": "round_start", "round": m, "mode": self.mode.label})
        self._begin(m, 0)
        cands = self.generate(m, 0)
        theta0 = self.theta0(m)
        if self.mode.kind in ("eureka", "roska-u"):
            results = self._evaluate_all(self._probe(theta0, self.schedule.eureka_epochs, "probe"), cands)
            best, value = self._finish(results, 0)
        else:
            results = self._evaluate_all(self._probe(theta0, self.schedule.first_round_probe_epochs, "probe"), cands)
            best, value = self._finish(results, self.schedule.first_round_finish_epochs)
        if not math.isfinite(value):
            raise CoEvolutionError("no viable reward candidate in round one")
        accepted = self._accept(m, best, value)
        if self.mode.kind == "eureka":
            self.state.prompt_program, self.state.prompt_stats = best.program, best.run.feedback_stats()
        self.emit({"event": "accept" if accepted else "reject", "round": m, "batch": 0, "candidate": best.index,
                   "value": value, "v_best": self.state.v_best})
        self._end_round(m, accepted, 1)
        return self.state

    def run_eureka_round(self) -> CoEvolutionState:
        m = self.state.m + 1
        self.emit({"event": "round_start", "round": m, "mode": self.mode.label})
        self._begin(m, 0)
        cands = self.generate(m, 0)
        results = self._evaluate_all(self._probe(self.theta0(m), self.schedule.eureka_epochs, "probe"), cands)
        best, value = self._finish(results, 0)
        accepted = self._accept(m, best, value) if math.isfinite(value) else False
        if math.isfinite(value):
            self.state.prompt_program, self.state.prompt_stats = best.program, best.run.feedback_stats()
        self.emit({"event": "accept" if accepted else "reject", "round": m, "batch": 0, "candidate": best.index,
                   "value": value, "v_best": self.state.v_best})
        self._end_round(m, accepted, 1)
        return self.state

    def run_dp_round(self) -> CoEvolutionState:
        st = self.state
        if st.r_best is None or st.theta_best is None:
            raise CoEvolutionError("a DP round needs an incumbent reward and policy")
        m = st.m + 1
        self.emit({"event": "round_start", "round": m, "mode": self.mode.label})
        theta0 = self.theta0(m)
        max_batches = self.schedule.max_batches_per_dp_round if self.schedule.dynamic_population else 1
        accepted, b = False, 0
        while b < max_batches and not accepted:
            self._begin(m, b)
            cands = self.generate(m, b)
            if self.mode.kind == "roska":
                results = self._evaluate_all(self._scbo(theta0), cands)
                best, value = self._finish(results, self.schedule.finish_epochs)
            elif self.mode.kind == "roska-u":
                results = self._evaluate_all(self._uniform(theta0), cands)
                best, value = self._finish(results, 0)
            elif self.mode.kind == "fixed-alpha":
                results = self._evaluate_all(self._fixed(theta0, self.mode.alpha), cands)
                best, value = self._finish(results, self.schedule.finish_epochs)
            else:
                raise CoEvolutionError(f"mode {self.mode.label} has no DP rounds")
            accepted = math.isfinite(value) and self._accept(m, best, value)
            self.emit({"event": "accept" if accepted else "reject", "round": m, "batch": b,
                       "candidate": best.index, "value": value, "v_best": st.v_best})
            b += 1
        if not accepted:
            self.emit({"event": "no_improvement", "round": m, "batches": b, "v_best": st.v_best})
        self._end_round(m, accepted, b)
        return st

    def run(self) -> CoEvolutionState:
        self.emit({"event": "run_start", "mode": self.mode.label, "env": self.env.name, "seed": self.seed,
                   "schedule": self.schedule.to_dict()})
        self.run_round_one()
        for _ in range(self.schedule.n_rounds - 1):
            if self.mode.kind == "eureka":
                self.run_eureka_round()
            else:
                self.run_dp_round()
        st = self.state
        self.store.save_params("final", st.theta_best, self.arch)
        self.emit({"event": "run_end", "v_best": st.v_best, "mts_best": st.mts_best,
                   "epochs_total": st.total_epochs, "ledger": dict(sorted(st.ledger.items())),
                   "r_best": to_text(st.r_best)})
        return st


def run_round_one(schedule, env, backend, seed, state=None, mode: RunMode = ROSKA, **kw) -> CoEvolutionState:
    engine = CoEvolution(mode, schedule, env, backend, seed, **kw)
    if state is not None:
        engine.state = state
    return engine.run_round_one()


def run_dp_round(schedule, env, backend, seed, state, mode: RunMode = ROSKA, **kw) -> CoEvolutionState:
    engine = CoEvolution(mode, schedule, env, backend, seed, **kw)
    engine.state = state
    return engine.run_dp_round()


def run_experiment(mode: RunMode, schedule: Schedule, env: EnvSpec, backend, seed: int, **kw) -> CoEvolutionState:
    return CoEvolution(mode, schedule, env, backend, seed, **kw).run()
