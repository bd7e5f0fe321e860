"""Deterministic vectorized control tasks with named feature exports.

Three tasks mirror the three task-fitness shapes used for the robot suites:

* ``point-runner``: a planar point mass that should run along +x as fast as
  possible; fitness is the net forward displacement, the sum of
  ``cur_dist - prev_dist`` over the episode.
* ``rotator``: an in-plane rigid body driven by a torque; fitness is the
  longest run of consecutive steps with ``rot_dist < success_tolerance``.
* ``latch-puller``: a hand that must latch onto a spring-loaded drawer and
  hold it open; fitness is ``1[drawer_pos > 0.39]`` at episode end.

``two-armed-bandit`` is a one-step sanity task for the trainer.

Dynamics are deterministic; randomness only enters through reset states,
which are keyed by (seed, env index, reset count).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import rng as rngmod


class UnknownEnv(KeyError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    name: str
    feature_names: tuple
    obs_dim: int
    action_dim: int
    episode_length: int
    dt: float
    task_description: str
    feature_docs: Mapping[str, str] = field(default_factory=dict, compare=False)
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.episode_length < 1:
            raise ValueError("episode_length must be >= 1")
        if self.obs_dim < 1 or self.action_dim < 1:
            raise ValueError("obs_dim and action_dim must be positive")

    def with_overrides(self, **overrides) -> "EnvSpec":
        """Return a copy with episode_length/dt or dynamics constants replaced."""
        top = {k: overrides.pop(k) for k in ("episode_length", "dt") if k in overrides}
        unknown = set(overrides) - set(self.params)
        if unknown:
            raise ValueError(f"unknown {self.name} parameters: {sorted(unknown)}")
        params = dict(self.params)
        params.update({k: float(v) for k, v in overrides.items()})
        if "episode_length" in top:
            top["episode_length"] = int(top["episode_length"])
        if "dt" in top:
            top["dt"] = float(top["dt"])
        return replace(self, params=params, **top)


def wrap_angle(x):
    """Wrap to [-pi, pi)."""
    return (x + np.pi) % (2.0 * np.pi) - np.pi


class _Task:
    """Per-task dynamics; all methods are vectorized over environments."""

    spec: EnvSpec
    random_reset = True  # False: reset_state ignores its generator

    def reset_state(self, gen: np.random.Generator, p) -> dict:
        raise NotImplementedError

    def transition(self, s: dict, a: np.ndarray, spec: EnvSpec) -> tuple[dict, dict]:
        """Return (next state, features) for clamped actions ``a``."""
        raise NotImplementedError

    def observe(self, s: dict, spec: EnvSpec) -> np.ndarray:
        raise NotImplementedError

    def terminated(self, s: dict, spec: EnvSpec) -> np.ndarray:
        return np.zeros(len(next(iter(s.values()))), dtype=bool)

    # running fitness accumulators
    def fitness_init(self, n: int) -> dict:
        return {"value": np.zeros(n)}

    def fitness_update(self, acc: dict, feats: dict, spec: EnvSpec) -> None:
        raise NotImplementedError

    def fitness_value(self, acc: dict) -> np.ndarray:
        return acc["value"].copy()


class PointRunner(_Task):
    spec = EnvSpec(
        name="point-runner",
        feature_names=(
            "forward_vel", "lateral_vel", "lateral_offset", "speed", "heading_alignment",
            "cur_dist", "prev_dist", "progress", "action_norm",
        ),
        obs_dim=3,
        action_dim=2,
        episode_length=200,
        dt=0.05,
        task_description="To make the point runner move forward along the +x axis as fast as possible.",
        feature_docs={
            "forward_vel": "velocity along +x (m/s)",
            "lateral_vel": "velocity along y (m/s)",
            "lateral_offset": "y position; the episode ends if |y| exceeds the lane half-width",
            "speed": "magnitude of the velocity",
            "heading_alignment": "cosine between the velocity and +x, 0 when at rest",
            "cur_dist": "x position after the step",
            "prev_dist": "x position before the step",
            "progress": "cur_dist - prev_dist",
            "action_norm": "squared norm of the applied force",
        },
        params={"mass": 1.0, "drag": 0.1, "lane_half_width": 5.0},
    )

    def reset_state(self, gen, p):
        return {
            "x": gen.uniform(-0.1, 0.1),
            "y": gen.uniform(-0.5, 0.5),
            "vx": 0.0,
            "vy": 0.0,
        }

    def transition(self, s, a, spec):
        p, dt = spec.params, spec.dt
        fx, fy = a[:, 0], a[:, 1]
        # semi-implicit Euler: velocity first, then position with the new velocity
        vx = s["vx"] + dt * (fx - p["drag"] * s["vx"]) / p["mass"]
        vy = s["vy"] + dt * (fy - p["drag"] * s["vy"]) / p["mass"]
        x = s["x"] + dt * vx
        y = s["y"] + dt * vy
        speed = np.sqrt(vx * vx + vy * vy)
        feats = {
            "forward_vel": vx,
            "lateral_vel": vy,
            "lateral_offset": y,
            "speed": speed,
            "heading_alignment": np.where(speed > 1e-9, vx / np.maximum(speed, 1e-9), 0.0),
            "cur_dist": x,
            "prev_dist": s["x"],
            "progress": x - s["x"],
            "action_norm": fx * fx + fy * fy,
        }
        return {"x": x, "y": y, "vx": vx, "vy": vy}, feats

    def observe(self, s, spec):
        return np.stack([0.1 * s["vx"], 0.1 * s["vy"], 0.2 * s["y"]], axis=1)

    def terminated(self, s, spec):
        return np.abs(s["y"]) > spec.params["lane_half_width"]

    def fitness_update(self, acc, feats, spec):
        acc["value"] += feats["cur_dist"] - feats["prev_dist"]


class Rotator(_Task):
    spec = EnvSpec(
        name="rotator",
        feature_names=(
            "rot_dist", "prev_rot_dist", "rot_dist_decrease", "angvel", "angvel_abs",
            "success", "action_norm",
        ),
        obs_dim=3,
        action_dim=1,
        episode_length=300,
        dt=0.05,
        task_description="To make the rotator spin the object to the target orientation and hold it there.",
        feature_docs={
            "rot_dist": "absolute angle between object and target orientation (rad)",
            "prev_rot_dist": "rot_dist before the step",
            "rot_dist_decrease": "prev_rot_dist - rot_dist",
            "angvel": "angular velocity of the object (rad/s)",
            "angvel_abs": "absolute angular velocity",
            "success": "1 if rot_dist is below the success tolerance, else 0",
            "action_norm": "squared applied torque",
        },
        params={"inertia": 1.0, "torque_limit": 1.0, "damping": 0.0, "success_tolerance": 0.1},
    )

    def reset_state(self, gen, p):
        theta = gen.uniform(-np.pi, np.pi)
        # target is at least 0.5 rad away from the start, so rot_dist > tolerance
        offset = gen.uniform(0.5, np.pi) * (1.0 if gen.random() < 0.5 else -1.0)
        return {"theta": theta, "omega": 0.0, "target": float(wrap_angle(theta + offset))}

    def transition(self, s, a, spec):
        p, dt = spec.params, spec.dt
        torque = p["torque_limit"] * a[:, 0]
        omega = s["omega"] + dt * (torque - p["damping"] * s["omega"]) / p["inertia"]
        theta = wrap_angle(s["theta"] + dt * omega)
        prev = np.abs(wrap_angle(s["theta"] - s["target"]))
        dist = np.abs(wrap_angle(theta - s["target"]))
        feats = {
            "rot_dist": dist,
            "prev_rot_dist": prev,
            "rot_dist_decrease": prev - dist,
            "angvel": omega,
            "angvel_abs": np.abs(omega),
            "success": (dist < p["success_tolerance"]).astype(np.float64),
            "action_norm": torque * torque,
        }
        return {"theta": theta, "omega": omega, "target": s["target"]}, feats

    def observe(self, s, spec):
        err = wrap_angle(s["theta"] - s["target"])
        return np.stack([np.cos(err), np.sin(err), 0.5 * s["omega"]], axis=1)

    def fitness_init(self, n):
        return {"run": np.zeros(n), "value": np.zeros(n)}

    def fitness_update(self, acc, feats, spec):
        acc["run"] = (acc["run"] + 1.0) * feats["success"]
        acc["value"] = np.maximum(acc["value"], acc["run"])


class LatchPuller(_Task):
    spec = EnvSpec(
        name="latch-puller",
        feature_names=(
            "drawer_pos", "prev_drawer_pos", "drawer_progress", "drawer_vel", "hand_pos",
            "hand_vel", "grip_distance", "latched", "action_norm",
        ),
        obs_dim=5,
        action_dim=1,
        episode_length=150,
        dt=0.05,
        task_description=(
            "To make the hand latch onto the drawer handle and pull the spring-loaded drawer open "
            "past 0.39 m by the end of the episode."),
        feature_docs={
            "drawer_pos": "drawer opening (m), 0 is closed",
            "prev_drawer_pos": "drawer_pos before the step",
            "drawer_progress": "drawer_pos - prev_drawer_pos",
            "drawer_vel": "drawer velocity (m/s)",
            "hand_pos": "hand position on the pull axis (m)",
            "hand_vel": "hand velocity (m/s)",
            "grip_distance": "distance from the hand to the handle (m)",
            "latched": "1 once the hand has latched onto the handle",
            "action_norm": "squared applied force",
        },
        params={
            "spring_k": 2.0, "hand_mass": 1.0, "drawer_mass": 1.0, "hand_drag": 1.0,
            "drawer_damping": 1.0, "force_limit": 1.0, "latch_radius": 0.05, "drawer_max": 0.5,
            "open_threshold": 0.39,
        },
    )

    def reset_state(self, gen, p):
        return {"h": gen.uniform(0.3, 0.8), "hv": 0.0, "d": 0.0, "dv": 0.0, "latched": 0.0}

    def transition(self, s, a, spec):
        p, dt = spec.params, spec.dt
        force = p["force_limit"] * a[:, 0]
        latched = s["latched"] > 0.5
        spring = -p["spring_k"] * s["d"]
        # free hand and free drawer
        hv_free = s["hv"] + dt * (force - p["hand_drag"] * s["hv"]) / p["hand_mass"]
        dv_free = s["dv"] + dt * (spring - p["drawer_damping"] * s["dv"]) / p["drawer_mass"]
        # latched: hand and drawer move as one body
        v_joint = s["dv"] + dt * (
            force + spring - (p["hand_drag"] + p["drawer_damping"]) * s["dv"]
        ) / (p["hand_mass"] + p["drawer_mass"])
        dv = np.where(latched, v_joint, dv_free)
        hv = np.where(latched, v_joint, hv_free)
        d = s["d"] + dt * dv
        hit = (d < 0.0) | (d > p["drawer_max"])
        d = np.clip(d, 0.0, p["drawer_max"])
        dv = np.where(hit, 0.0, dv)
        h = np.where(latched, d, s["h"] + dt * hv)
        hv = np.where(latched, dv, hv)
        # the hand cannot pass through the drawer front
        blocked = h < d
        h = np.where(blocked, d, h)
        hv = np.where(blocked, np.maximum(hv, dv), hv)
        now_latched = latched | (h - d < p["latch_radius"])
        newly = now_latched & ~latched
        h = np.where(newly, d, h)
        hv = np.where(newly, dv, hv)
        new = {"h": h, "hv": hv, "d": d, "dv": dv, "latched": now_latched.astype(np.float64)}
        feats = {
            "drawer_pos": d,
            "prev_drawer_pos": s["d"],
            "drawer_progress": d - s["d"],
            "drawer_vel": dv,
            "hand_pos": h,
            "hand_vel": hv,
            "grip_distance": h - d,
            "latched": new["latched"],
            "action_norm": force * force,
        }
        return new, feats

    def observe(self, s, spec):
        return np.stack([s["h"], s["d"], s["hv"], s["dv"], s["latched"]], axis=1)

    def fitness_update(self, acc, feats, spec):
        acc["value"] = (feats["drawer_pos"] > spec.params["open_threshold"]).astype(np.float64)


class TwoArmedBandit(_Task):
    spec = EnvSpec(
        name="two-armed-bandit",
        feature_names=("payoff", "arm"),
        obs_dim=1,
        action_dim=1,
        episode_length=1,
        dt=1.0,
        task_description="Pick the arm with the higher payoff.",
        feature_docs={"payoff": "payoff of the chosen arm", "arm": "1 if the action is positive"},
        params={"good_payoff": 1.0, "bad_payoff": 0.2},
    )

    random_reset = False

    def reset_state(self, gen, p):
        return {"last": 0.0}

    def transition(self, s, a, spec):
        arm = (a[:, 0] > 0).astype(np.float64)
        payoff = np.where(arm > 0, spec.params["good_payoff"], spec.params["bad_payoff"])
        return {"last": payoff}, {"payoff": payoff, "arm": arm}

    def observe(self, s, spec):
        return np.ones((len(s["last"]), 1))

    def terminated(self, s, spec):
        # a pull ends the episode for real, so nothing is bootstrapped
        return np.ones(len(s["last"]), dtype=bool)

    def fitness_update(self, acc, feats, spec):
        acc["value"] = feats["payoff"].copy()


TASKS: dict[str, _Task] = {
    t.spec.name: t for t in (PointRunner(), Rotator(), LatchPuller(), TwoArmedBandit())
}
ENV_NAMES = ("point-runner", "rotator", "latch-puller")


def get_spec(name: str, **overrides) -> EnvSpec:
    try:
        spec = TASKS[name].spec
    except KeyError:
        raise UnknownEnv(name) from None
    return spec.with_overrides(**overrides) if overrides else spec


@dataclass
class StepResult:
    obs: np.ndarray
    features: dict
    done: np.ndarray
    truncated: np.ndarray
    terminal_obs: np.ndarray
    episode_fitness: np.ndarray  # NaN where the episode did not end this step
    episode_length: np.ndarray  # 0 where the episode did not end this step

    def feature_map(self, i: int) -> dict[str, float]:
        return {k: float(v[i]) for k, v in self.features.items()}


class EnvBatch:
    """``n_envs`` independent copies of one task, stepped together."""

    def __init__(self, spec: EnvSpec, n_envs: int, seed: int):
        if n_envs < 1:
            raise ValueError("n_envs must be >= 1")
        if spec.name not in TASKS:
            raise UnknownEnv(spec.name)
        self.spec = spec
        self.task = TASKS[spec.name]
        self.n_envs = n_envs
        self.seed = seed
        self.reset_count = np.zeros(n_envs, dtype=np.int64)
        self.step_count = np.zeros(n_envs, dtype=np.int64)
        self.state: dict[str, np.ndarray] = {}
        self.reset()

    def _fresh(self, i: int) -> dict:
        gen = None
        if self.task.random_reset:
            gen = rngmod.stream(self.seed, "env-reset", i, int(self.reset_count[i]))
        return self.task.reset_state(gen, self.spec.params)

    def _reset_envs(self, idx: Sequence[int]) -> None:
        # state arrays may alias the feature arrays just handed out
        self.state = {k: v.copy() for k, v in self.state.items()}
        for i in idx:
            for k, v in self._fresh(i).items():
                self.state[k][i] = v
            self.reset_count[i] += 1
            self.step_count[i] = 0
            for k in self._acc:
                self._acc[k][i] = 0.0

    def reset(self) -> np.ndarray:
        self.reset_count[:] = 0
        states = [self._fresh(i) for i in range(self.n_envs)]
        self.state = {k: np.array([s[k] for s in states], dtype=np.float64) for k in states[0]}
        self.reset_count[:] = 1
        self.step_count[:] = 0
        self._acc = self.task.fitness_init(self.n_envs)
        return self.observe()

    def observe(self) -> np.ndarray:
        return self.task.observe(self.state, self.spec)

    def step(self, actions) -> StepResult:
        a = np.asarray(actions, dtype=np.float64).reshape(self.n_envs, self.spec.action_dim)
        if not np.isfinite(a).all():
            a = np.nan_to_num(a, nan=0.0, posinf=1.0, neginf=-1.0)
        a = np.minimum(np.maximum(a, -1.0), 1.0)
        self.state, feats = self.task.transition(self.state, a, self.spec)
        self.step_count += 1
        self.task.fitness_update(self._acc, feats, self.spec)
        terminated = self.task.terminated(self.state, self.spec)
        truncated = (self.step_count >= self.spec.episode_length) & ~terminated
        done = terminated | truncated
        obs = self.observe()
        fitness = np.full(self.n_envs, np.nan)
        lengths = np.zeros(self.n_envs, dtype=np.int64)
        terminal_obs = obs
        if done.any():
            finished = np.flatnonzero(done)
            fitness[finished] = self.task.fitness_value(self._acc)[finished]
            lengths[finished] = self.step_count[finished]
            self._reset_envs(finished)
            obs = self.observe()
        return StepResult(
            obs=obs,
            features=feats,
            done=done,
            truncated=truncated,
            terminal_obs=terminal_obs,
            episode_fitness=fitness,
            episode_length=lengths,
        )


def make_env(name: str, n_envs: int, seed: int, **overrides) -> EnvBatch:
    return EnvBatch(get_spec(name, **overrides), n_envs, seed)


def longest_run(flags) -> int:
    best = run = 0
    for f in flags:
        run = run + 1 if f else 0
        best = max(best, run)
    return best


def task_fitness(name: str, trace: Mapping[str, Sequence[float]], spec: EnvSpec | None = None) -> float:
    """Fitness of one completed episode given its per-step feature trace."""
    spec = spec or get_spec(name)
    if name == "point-runner":
        return float(sum(c - p for c, p in zip(trace["cur_dist"], trace["prev_dist"])))
    if name == "rotator":
        tol = spec.params["success_tolerance"]
        return float(longest_run(d < tol for d in trace["rot_dist"]))
    if name == "latch-puller":
        return float(trace["drawer_pos"][-1] > spec.params["open_threshold"])
    if name == "two-armed-bandit":
        return float(trace["payoff"][-1])
    raise UnknownEnv(name)


def env_interface(spec: EnvSpec) -> str:
    """Text listing of the task's features, used as the environment description in prompts."""
    lines = [f"Environment: {spec.name} (observation dim {spec.obs_dim}, action dim {spec.action_dim})",
             f"Episode length: {spec.episode_length} steps, dt = {spec.dt} s",
             "Available features (per step, after the transition):"]
    for name in spec.feature_names:
        doc = spec.feature_docs.get(name, "")
        lines.append(f"  - {name}: {doc}" if doc else f"  - {name}")
    return "\n".join(lines)
