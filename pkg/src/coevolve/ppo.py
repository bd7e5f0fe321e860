"""PPO with GAE on a vectorized task, trained under a reward program.

One *epoch* is one rollout of ``rollout_steps x n_envs`` transitions followed
by ``epochs_per_update`` passes of minibatch updates on the clipped
surrogate.  Gradients are computed analytically (numpy only) and applied
with Adam.  Every random draw comes from a stream keyed by
(seed, epoch, purpose), so a call is reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import rng as rngmod
from .dsl import RewardProgram, evaluate
from .envs import EnvBatch, EnvSpec
from .policy import Net, NetArch, ParamVector, _check

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    epochs_per_update: int = 4
    minibatches: int = 4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    rollout_steps: int = 64
    n_envs: int = 16
    eval_every: int = 10
    stat_window: Optional[int] = None  # None: ten snapshots per series
    max_grad_norm: float = 0.5
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    hidden: tuple = (64, 64)
    eval_episodes: int = 16

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        for name in ("gae_lambda", "clip_eps", "lr", "value_coef", "max_grad_norm", "adam_eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be non-negative")
        for name in ("epochs_per_update", "minibatches", "rollout_steps", "n_envs", "eval_every",
                     "eval_episodes"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.stat_window is not None and self.stat_window < 1:
            raise ValueError("stat_window must be >= 1")

    def arch(self, env: EnvSpec) -> NetArch:
        return NetArch(env.obs_dim, env.action_dim, self.hidden)


@dataclass
class SeriesStats:
    """Windowed means of a per-epoch series plus its global max/mean/min."""

    snapshots: list
    max: float
    mean: float
    min: float

    @classmethod
    def from_series(cls, values, window: Optional[int] = None, n_snapshots: int = 10) -> Optional["SeriesStats"]:
        """Snapshots are means of consecutive ``window``-sized chunks, or of
        ``n_snapshots`` near-equal chunks when no window is given."""
        values = [float(v) for v in values]
        if not values:
            return None
        if window is None:
            chunks = np.array_split(np.asarray(values), min(n_snapshots, len(values)))
        else:
            chunks = [values[i:i + window] for i in range(0, len(values), window)]
        snaps = [float(np.mean(c)) for c in chunks]
        return cls(snaps, max(values), float(np.mean(values)), min(values))

    def to_dict(self) -> dict:
        return {"snapshots": self.snapshots, "max": self.max, "mean": self.mean, "min": self.min}

    @classmethod
    def from_dict(cls, d) -> "SeriesStats":
        return cls(list(d["snapshots"]), d["max"], d["mean"], d["min"])


@dataclass
class TrainingRun:
    final_params: ParamVector
    fitness_trace: list  # [(epoch, mean task fitness)]
    component_stats: dict  # name -> SeriesStats
    episode_length_stats: Optional[SeriesStats]
    task_score_stats: Optional[SeriesStats]
    epochs_consumed: int
    mts: Optional[float]  # None when no episode completed at an evaluation point

    def feedback_stats(self) -> dict:
        """Statistics block consumed by the feedback prompt."""
        return {
            "components": {k: v.to_dict() for k, v in self.component_stats.items()},
            "task_score": self.task_score_stats.to_dict() if self.task_score_stats else None,
            "episode_lengths": self.episode_length_stats.to_dict() if self.episode_length_stats else None,
        }


class Adam:
    def __init__(self, n: int, lr: float, betas=(0.9, 0.999), eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.b1 * self.m + (1.0 - self.b1) * grad
        self.v = self.b2 * self.v + (1.0 - self.b2) * grad * grad
        m_hat = self.m / (1.0 - self.b1 ** self.t)
        v_hat = self.v / (1.0 - self.b2 ** self.t)
        theta -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def compute_gae(rewards, values, dones, gamma: float, lam: float):
    """Generalized advantage estimates and value targets.

    ``rewards`` and ``dones`` have shape (T, ...); ``values`` has shape
    (T + 1, ...) where the last row bootstraps the state after the rollout.
    A done flag at step t stops both the bootstrap and the advantage
    recursion across the episode boundary.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    notdone = 1.0 - np.asarray(dones, dtype=np.float64)
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0])
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * values[t + 1] * notdone[t] - values[t]
        last = delta + gamma * lam * notdone[t] * last
        adv[t] = last
    return adv, adv + values[:-1]


def normalize_advantages(adv, eps: float = 1e-8):
    return (adv - adv.mean()) / (adv.std() + eps)


def gaussian_logp(actions, mean, log_std):
    z = (actions - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * LOG_2PI


def clipped_ratio(ratio, clip_eps: float):
    return np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)


def ppo_loss(flat: np.ndarray, arch: NetArch, batch: dict, cfg: PpoConfig, with_grad: bool = True):
    """Clipped-surrogate loss, value loss and entropy bonus, with the analytic gradient.

    Returns ``(total, parts, grad)`` where ``parts`` holds the policy,
    value and entropy terms and ``grad`` is None when ``with_grad`` is false.
    """
    net = Net(arch, flat)
    obs, act = batch["obs"], batch["actions"]
    adv, ret, logp_old = batch["advantages"], batch["returns"], batch["logp_old"]
    n = len(obs)
    mean, pacts = net.policy(obs)
    value, vacts = net.value(obs)
    log_std = net.log_std
    logp = gaussian_logp(act, mean, log_std)
    ratio = np.exp(logp - logp_old)
    clipped = clipped_ratio(ratio, cfg.clip_eps)
    surr1, surr2 = ratio * adv, clipped * adv
    policy_loss = -np.mean(np.minimum(surr1, surr2))
    value_loss = np.mean((value - ret) ** 2)
    entropy = np.sum(log_std) + 0.5 * arch.action_dim * (LOG_2PI + 1.0)
    total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    parts = {"policy": policy_loss, "value": value_loss, "entropy": entropy}
    if not with_grad:
        return total, parts, None

    grad = np.zeros_like(flat)
    # the unclipped term carries gradient wherever it is the active minimum
    active = surr1 <= surr2
    g_logp = -(active * ratio * adv) / n
    inv_var = np.exp(-2.0 * log_std)
    diff = act - mean
    net.policy_backward(pacts, g_logp[:, None] * diff * inv_var, grad)
    g_log_std = np.sum(g_logp[:, None] * (diff * diff * inv_var - 1.0), axis=0)
    net.view("log_std", grad)[...] += g_log_std - cfg.entropy_coef
    net.value_backward(vacts, cfg.value_coef * 2.0 * (value - ret) / n, grad)
    return total, parts, grad


def _loss_part(flat, arch, batch, cfg, part: str):
    total, parts, grad = ppo_loss(flat, arch, batch, cfg)
    if part == "total":
        return total, grad
    # isolate one term by zeroing the other coefficients
    if part == "value":
        sub = dict(batch, advantages=np.zeros_like(batch["advantages"]))
        c = replace(cfg, entropy_coef=0.0)
        _, p2, g = ppo_loss(flat, arch, sub, c)
        return c.value_coef * p2["value"], g
    if part == "policy":
        c = replace(cfg, entropy_coef=0.0, value_coef=1e-300)
        _, p2, g = ppo_loss(flat, arch, batch, c)
        return p2["policy"], g
    raise ValueError(f"unknown loss part {part!r}")


def default_check_batch(arch: NetArch, params: ParamVector, seed: int = 0, n: int = 32) -> dict:
    """Small synthetic batch for gradient checks; ratios stay near 1."""
    gen = rngmod.stream(seed, "grad-check-batch")
    net = Net(arch, params.as_float64())
    obs = gen.normal(size=(n, arch.obs_dim))
    mean, _ = net.policy(obs)
    actions = mean + np.exp(net.log_std) * gen.normal(size=mean.shape)
    logp = gaussian_logp(actions, mean, net.log_std)
    return {
        "obs": obs,
        "actions": actions,
        "logp_old": logp + 0.05 * gen.normal(size=n),
        "advantages": gen.normal(size=n),
        "returns": gen.normal(size=n),
    }


def surrogate_grad_check(cfg: PpoConfig, params: ParamVector, batch: dict, arch: NetArch,
                         n_coords: int = 50, h: float = 1e-4, seed: int = 0, part: str = "total") -> float:
    """Max |analytic - central finite difference| over random coordinates."""
    _check(params, arch)
    flat = params.as_float64()
    _, grad = _loss_part(flat, arch, batch, cfg, part)
    gen = rngmod.stream(seed, "grad-check-coords")
    coords = gen.choice(len(flat), size=min(n_coords, len(flat)), replace=False)
    worst = 0.0
    for i in coords:
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        fd = (_loss_part(up, arch, batch, cfg, part)[0] - _loss_part(down, arch, batch, cfg, part)[0]) / (2 * h)
        worst = max(worst, abs(fd - grad[i]))
    return worst


def train(reward: RewardProgram, init: ParamVector, p: int, cfg: PpoConfig, env: EnvSpec, seed,
          events: Optional[list] = None, tags: Optional[dict] = None) -> TrainingRun:
    """Run ``p`` PPO epochs from ``init`` under ``reward`` (the improvement operator)."""
    reward.check_features(env.feature_names)
    if p < 0:
        raise ValueError("epoch count must be >= 0")
    arch = cfg.arch(env)
    _check(init, arch)
    key = seed if isinstance(seed, tuple) else (seed,)
    theta = init.as_float64()
    opt = Adam(len(theta), cfg.lr, cfg.adam_betas, cfg.adam_eps)
    batch_env = EnvBatch(env, cfg.n_envs, rngmod.derive_seed(*key, "train-env"))
    obs = batch_env.observe()
    T, N = cfg.rollout_steps, cfg.n_envs
    n_total = T * N
    mb_size = max(1, n_total // cfg.minibatches)

    comp_series = {c.name: [] for c in reward.components}
    length_series, score_series, trace = [], [], []
    pending_fitness: list = []

    for epoch in range(p):
        gen = rngmod.stream(*key, "rollout", epoch)
        net = Net(arch, theta)
        std = np.exp(net.log_std)
        noise = gen.standard_normal((T, N, env.action_dim))
        buf_obs = np.empty((T + 1, N, env.obs_dim))
        buf_act = np.empty((T, N, env.action_dim))
        buf_done = np.empty((T, N))
        feats = {k: np.empty((T, N)) for k in env.feature_names}
        trunc_steps, trunc_obs = [], []
        lengths = []
        for t in range(T):
            mean, _ = net.policy(obs)
            action = mean + std * noise[t]
            buf_obs[t], buf_act[t] = obs, action
            res = batch_env.step(action)
            for k, v in res.features.items():
                feats[k][t] = v
            buf_done[t] = res.done
            if res.done.any():
                pending_fitness.extend(res.episode_fitness[res.done].tolist())
                lengths.extend(res.episode_length[res.done].tolist())
                if res.truncated.any():
                    trunc_steps.append((t, res.truncated.copy()))
                    trunc_obs.append(res.terminal_obs)
            obs = res.obs
        buf_obs[T] = obs

        # rewards, values and log-probs do not feed back into the dynamics,
        # so they are computed once per rollout on the stacked batch
        total, comps = evaluate(reward, feats)
        buf_rew = np.broadcast_to(np.asarray(total, dtype=np.float64), (T, N)).copy()
        all_obs = buf_obs.reshape((T + 1) * N, -1)
        buf_val = net.value(all_obs)[0].reshape(T + 1, N)
        if trunc_steps:
            # time-limit ends are not terminal: bootstrap from the final state
            v_term = net.value(np.concatenate(trunc_obs))[0].reshape(len(trunc_obs), N)
            for (t, mask), vt in zip(trunc_steps, v_term):
                buf_rew[t] += cfg.gamma * np.where(mask, vt, 0.0)
        flat_obs = all_obs[:n_total]
        flat_act = buf_act.reshape(n_total, -1)
        mean_all, _ = net.policy(flat_obs)
        logp_old = gaussian_logp(flat_act, mean_all, net.log_std)
        comp_means = {k: float(np.mean(v)) for k, v in comps.items()}

        adv, ret = compute_gae(buf_rew, buf_val, buf_done, cfg.gamma, cfg.gae_lambda)
        flat_batch = {
            "obs": flat_obs,
            "actions": flat_act,
            "logp_old": logp_old,
            "advantages": normalize_advantages(adv.reshape(-1)),
            "returns": ret.reshape(-1),
        }
        for k in range(cfg.epochs_per_update):
            perm = rngmod.stream(*key, "shuffle", epoch, k).permutation(n_total)
            for start in range(0, n_total - mb_size + 1, mb_size):
                idx = perm[start:start + mb_size]
                mb = {name: arr[idx] for name, arr in flat_batch.items()}
                _, _, grad = ppo_loss(theta, arch, mb, cfg)
                norm = np.sqrt(np.dot(grad, grad))
                if norm > cfg.max_grad_norm:
                    grad *= cfg.max_grad_norm / norm
                opt.step(theta, grad)

        for k in comp_series:
            comp_series[k].append(comp_means[k])
        if lengths:
            length_series.append(float(np.mean(lengths)))
        if (epoch + 1) % cfg.eval_every == 0 or epoch == p - 1:
            if pending_fitness:
                fitness = float(np.mean(pending_fitness))
                trace.append((epoch + 1, fitness))
                score_series.append(fitness)
                if events is not None:
                    events.append({"event": "epoch", **(tags or {}), "epoch": epoch + 1, "fitness": fitness})
            pending_fitness = []

    window = cfg.stat_window  # None: ten near-equal chunks
    final = ParamVector(init.arch_hash, theta, init.lineage + (f"train:{p}",)) if p else init
    return TrainingRun(
        final_params=final,
        fitness_trace=trace,
        component_stats={k: s for k, v in comp_series.items()
                         if (s := SeriesStats.from_series(v, window)) is not None},
        episode_length_stats=SeriesStats.from_series(length_series, window),
        task_score_stats=SeriesStats.from_series(score_series),
        epochs_consumed=p,
        mts=max(f for _, f in trace) if trace else None,
    )


def evaluate_return(params: ParamVector, env: EnvSpec, episodes: int, seed, arch: Optional[NetArch] = None) -> float:
    """Mean task fitness of the mean-action policy over ``episodes`` fresh episodes."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    arch = arch or NetArch(env.obs_dim, env.action_dim)
    _check(params, arch)
    key = seed if isinstance(seed, tuple) else (seed,)
    net = Net(arch, params.as_float64())
    batch = EnvBatch(env, episodes, rngmod.derive_seed(*key, "eval-env"))
    obs = batch.observe()
    fitness = np.full(episodes, np.nan)
    while np.isnan(fitness).any():
        mean, _ = net.policy(obs)
        res = batch.step(mean)
        first = res.done & np.isnan(fitness)
        fitness[first] = res.episode_fitness[first]
        obs = res.obs
    return float(np.mean(fitness))
