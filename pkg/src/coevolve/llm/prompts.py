"""Initial and feedback prompts, as pure functions of a PromptContext."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..dsl import RewardProgram, to_text

FENCE_TAG = "reward"

DSL_GRAMMAR = """\
program   := component+
component := "component" NAME "{" "temp" "=" REAL  "expr" "=" expr  "weight" "=" REAL
             ["transform" "=" ("exp_neg_over_temp" | "identity")] "}"
expr      := term (("+" | "-") term)*
term      := factor (("*" | "/") factor)*
factor    := REAL | FEATURE | "(" expr ")" | FUNC "(" args ")" | "-" factor
FUNC      := abs | exp | tanh | sqrt | min | max | norm | clamp

A component value is exp(-expr / temp) (the default transform) or the raw
expr (transform = identity).  The total reward is the sum of weight times
component value.  Division by zero and sqrt of negatives are guarded."""

ROLE = (
    "You are a reward engineer trying to write reward functions to solve reinforcement learning "
    "tasks as effectively as possible. Your goal is to write a reward function for the environment "
    "that will help the agent learn the task described in text. Your reward function should use "
    "useful features of the environment as inputs."
)

OUTPUT_CONTRACT = (
    "Write the reward function as a reward program in the language described above. It yields two "
    "items:\n"
    "  1. the total reward,\n"
    "  2. a dictionary of each individual reward component (one entry per component block).\n"
    f"The output should be formatted as a fenced block: ```{FENCE_TAG} ... ```."
)

WRITING_TIPS = (
    "Some helpful tips for writing the reward program:\n"
    "  1. You may find it helpful to normalize the reward to a fixed range by applying the "
    "exp_neg_over_temp transform to its components.\n"
    "  2. If you choose to transform a reward component, then you must also introduce a temperature "
    "parameter inside the transformation function; in this language it is the temp field of the "
    "component block, and each transformed component has its own temperature.\n"
    "  3. Make sure every number is a plain decimal literal and every temperature is positive.\n"
    "  4. Most importantly, expressions may only reference the features listed for the environment. "
    "Under no circumstance can you introduce new features."
)

ANALYSIS_TIPS = (
    "Please carefully analyze the policy feedback and provide a new, improved reward program that "
    "can better solve the task. Some helpful tips for analyzing the policy feedback:\n"
    "  1. If the success rates are always near zero, then you must rewrite the entire reward program.\n"
    "  2. If the values for a certain reward component are near identical throughout, then this means "
    "RL is not able to optimize this component as it is written. You may consider:\n"
    "     (a) Changing its scale or the value of its temperature parameter\n"
    "     (b) Re-writing the reward component\n"
    "     (c) Discarding the reward component\n"
    "  3. If some reward components' magnitude is significantly larger, then you must re-scale its "
    "value to a proper range.\n"
    "Please analyze each existing reward component in the suggested manner above first, and then "
    "write the reward program."
)

MEASUREMENT_INTRO = (
    "We trained a RL policy using the provided reward program and tracked the values of the "
    "individual components as well as global policy metrics such as task score and episode lengths "
    "at {n} evenly spaced points during training, and the maximum, mean, minimum values encountered:"
)


class MissingFeedback(ValueError):
    pass


@dataclass(frozen=True)
class PromptContext:
    task_description: str
    env_interface: str
    best_program: Optional[RewardProgram] = None
    best_stats: Optional[dict] = None

    @property
    def is_feedback(self) -> bool:
        return self.best_program is not None


def _header(ctx: PromptContext) -> str:
    return (f"{ROLE}\n\nTask description: {ctx.task_description}\n\n{ctx.env_interface}\n\n"
            f"Reward program language:\n{DSL_GRAMMAR}\n")


def build_initial_prompt(ctx: PromptContext) -> str:
    return f"{_header(ctx)}\n{OUTPUT_CONTRACT}\n\n{WRITING_TIPS}\n"


def format_series(name: str, stats: Optional[dict]) -> str:
    if not stats:
        return f"{name}: no completed episodes"
    snaps = ", ".join(f"'{v:.2f}'" for v in stats["snapshots"])
    return f"{name}: [{snaps}], Max: {stats['max']:.2f}, Mean: {stats['mean']:.2f}, Min: {stats['min']:.2f}"


def build_feedback_prompt(ctx: PromptContext) -> str:
    if ctx.best_program is None or ctx.best_stats is None:
        raise MissingFeedback("feedback prompt needs the best program and its statistics")
    stats = ctx.best_stats
    comps = stats.get("components", {})
    n = max((len(v["snapshots"]) for v in comps.values() if v), default=0)
    lines = [format_series(name, comps.get(name)) for name in ctx.best_program.names]
    lines.append(format_series("task_score", stats.get("task_score")))
    lines.append(format_series("episode_lengths", stats.get("episode_lengths")))
    return (
        f"{_header(ctx)}\n"
        f"Best-performed reward program:\n```{FENCE_TAG}\n{to_text(ctx.best_program)}```\n\n"
        f"Measurement of the best-performed policy:\n{MEASUREMENT_INTRO.format(n=n)}\n"
        + "\n".join(lines)
        + f"\n\n{ANALYSIS_TIPS}\n\n{OUTPUT_CONTRACT}\n\n{WRITING_TIPS}\n"
    )


def build_prompt(ctx: PromptContext) -> str:
    return build_feedback_prompt(ctx) if ctx.is_feedback else build_initial_prompt(ctx)
