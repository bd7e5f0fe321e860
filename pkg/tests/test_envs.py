import itertools

import numpy as np
import pytest

from coevolve.envs import (
    ENV_NAMES,
    UnknownEnv,
    get_spec,
    longest_run,
    make_env,
    task_fitness,
)


def _brute_longest_run(flags):
    # every contiguous slice, keep the longest that is all ones
    best = 0
    for i in range(len(flags)):
        for j in range(i, len(flags) + 1):
            if all(flags[i:j]):
                best = max(best, j - i)
    return best


def _rollout(name, n_envs, seed, steps, actions=None):
    env = make_env(name, n_envs, seed)
    spec = env.spec
    gen = np.random.default_rng(123)
    out = []
    for t in range(steps):
        a = actions[t] if actions is not None else gen.uniform(-1, 1, size=(n_envs, spec.action_dim))
        res = env.step(a)
        out.append(res)
    return env, out


@pytest.mark.parametrize("name", ENV_NAMES)
def test_reset_is_deterministic(name):
    a, b = make_env(name, 8, 42), make_env(name, 8, 42)
    assert np.array_equal(a.observe(), b.observe())
    for k in a.state:
        assert np.array_equal(a.state[k], b.state[k])


@pytest.mark.parametrize("name", ENV_NAMES)
def test_seed_and_actions_fix_the_trace(name):
    _, r1 = _rollout(name, 4, 7, 60)
    _, r2 = _rollout(name, 4, 7, 60)
    for x, y in zip(r1, r2):
        assert np.array_equal(x.obs, y.obs)
        for k in x.features:
            assert np.array_equal(x.features[k], y.features[k])


@pytest.mark.parametrize("name", ENV_NAMES)
def test_feature_completeness(name):
    spec = get_spec(name)
    _, res = _rollout(name, 3, 0, 20)
    for r in res:
        assert set(r.features) == set(spec.feature_names)
        for v in r.features.values():
            assert v.shape == (3,)


def test_unknown_env():
    with pytest.raises(UnknownEnv):
        make_env("bad", 1, 0)


def test_rotator_starts_away_from_target():
    for seed in range(50):
        env = make_env("rotator", 1, seed)
        res = env.step(np.zeros((1, 1)))
        assert res.features["prev_rot_dist"][0] > get_spec("rotator").params["success_tolerance"]


def test_point_runner_zero_action_is_stationary():
    env = make_env("point-runner", 5, 3)
    res = env.step(np.zeros((5, 2)))
    assert np.all(res.features["cur_dist"] - res.features["prev_dist"] == 0.0)


@pytest.mark.parametrize("name", ENV_NAMES)
def test_episode_length_without_termination(name):
    spec = get_spec(name)
    env = make_env(name, 2, 0)
    for t in range(spec.episode_length - 1):
        res = env.step(np.zeros((2, spec.action_dim)))
        assert not res.done.any()
    res = env.step(np.zeros((2, spec.action_dim)))
    assert res.done.all() and res.truncated.all()
    assert np.all(res.episode_length == spec.episode_length)


def test_rotator_success_threshold():
    tol = get_spec("rotator").params["success_tolerance"]
    assert tol == 0.1
    # rot_dist 0.05 is a success step under the 0.1 threshold
    assert task_fitness("rotator", {"rot_dist": [0.05]}) == 1.0
    assert task_fitness("rotator", {"rot_dist": [0.1]}) == 0.0


def test_latch_threshold():
    assert get_spec("latch-puller").params["open_threshold"] == 0.39
    assert task_fitness("latch-puller", {"drawer_pos": [0.0, 0.40]}) == 1.0
    assert task_fitness("latch-puller", {"drawer_pos": [0.5, 0.1]}) == 0.0


def test_point_runner_telescoping_example():
    trace = {"cur_dist": [0.1, 0.25, 0.3], "prev_dist": [0.0, 0.1, 0.25]}
    assert task_fitness("point-runner", trace) == pytest.approx(0.3, abs=1e-15)


def test_run_length_example():
    flags = [0, 1, 1, 1, 0, 1]
    assert longest_run(flags) == 3 == _brute_longest_run(flags)
    dists = [0.5 if f == 0 else 0.01 for f in flags]
    assert task_fitness("rotator", {"rot_dist": dists}) == 3.0


def test_run_length_against_brute_force():
    for n in range(0, 11):
        for flags in itertools.product((0, 1), repeat=n):
            assert longest_run(flags) == _brute_longest_run(list(flags))


def _episodes(name, seed, n_envs=3):
    """Run until every env finished one episode; per env return (trace, batch fitness)."""
    spec = get_spec(name)
    env = make_env(name, n_envs, seed)
    gen = np.random.default_rng(seed)
    traces = [{k: [] for k in spec.feature_names} for _ in range(n_envs)]
    out = [None] * n_envs
    while any(o is None for o in out):
        res = env.step(gen.uniform(-1, 1, size=(n_envs, spec.action_dim)))
        for i in range(n_envs):
            if out[i] is not None:
                continue
            for k, v in res.features.items():
                traces[i][k].append(float(v[i]))
            if res.done[i]:
                out[i] = (traces[i], float(res.episode_fitness[i]))
    return out


@pytest.mark.parametrize("name", ENV_NAMES)
def test_batch_fitness_matches_trace_fitness(name):
    for trace, fit in _episodes(name, 5):
        assert task_fitness(name, trace) == pytest.approx(fit, abs=1e-12)


def test_point_runner_fitness_is_displacement():
    for trace, fit in _episodes("point-runner", 11):
        assert fit == pytest.approx(trace["cur_dist"][-1] - trace["prev_dist"][0], abs=1e-9)


def test_actions_are_clamped():
    a, b = make_env("point-runner", 2, 0), make_env("point-runner", 2, 0)
    ra = a.step(np.full((2, 2), 50.0))
    rb = b.step(np.full((2, 2), 1.0))
    assert np.array_equal(ra.obs, rb.obs)


def test_auto_reset_draws_fresh_state():
    spec = get_spec("rotator")
    env = make_env("rotator", 1, 9)
    first = env.state["target"].copy()
    for _ in range(spec.episode_length):
        env.step(np.zeros((1, 1)))
    assert env.reset_count[0] == 2
    assert env.state["target"][0] != first[0]


def test_overrides():
    spec = get_spec("point-runner", episode_length=10)
    assert spec.episode_length == 10
    with pytest.raises(ValueError):
        get_spec("point-runner", no_such_param=1.0)
