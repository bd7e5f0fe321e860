import numpy as np
import pytest

from coevolve.policy import ParamVector
from coevolve.ppo import PpoConfig, SeriesStats, TrainingRun

# small network and rollout; enough for bandit / short co-evolution runs
FAST_PPO = PpoConfig(hidden=(32, 32), rollout_steps=16, n_envs=16, epochs_per_update=2, minibatches=2)


@pytest.fixture
def fast_ppo():
    return FAST_PPO


class StubTrainer:
    """Drop-in for ppo.train: shifts every parameter by ``p * rate * sum(weights)``.

    Keeps the co-evolution bookkeeping testable without running PPO.
    """

    def __init__(self, rate=1e-4):
        self.rate = rate
        self.calls = []

    def __call__(self, reward, init, p, cfg, env, seed, events=None, tags=None):
        self.calls.append({"stage": (tags or {}).get("stage"), "init": init, "p": p, "tags": dict(tags or {}),
                           "reward": reward})
        shift = p * self.rate * sum(reward.weights)
        vals = init.as_float64() + shift
        final = ParamVector(init.arch_hash, vals, init.lineage + (f"stub:{p}",))
        f = float(np.mean(vals))
        trace = [(p, f)] if p else []
        if events is not None and p:
            events.append({"event": "epoch", **(tags or {}), "epoch": p, "fitness": f})
        comp = {c.name: SeriesStats.from_series([c.weight] * 3) for c in reward.components}
        return TrainingRun(final, trace, comp, SeriesStats.from_series([1.0]),
                           SeriesStats.from_series([f]) if trace else None, p, f if trace else None)


def stub_eval(params, env, episodes, seed, arch=None):
    return float(np.mean(params.as_float64()))


@pytest.fixture
def stub_trainer():
    return StubTrainer()
