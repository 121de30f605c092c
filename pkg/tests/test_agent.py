"""PPO agent: GAE, clipped surrogate, gradients, Adam, checkpoints, train."""

import json
import math

import numpy as np
import pytest

from conftest import make_env_config
from med_dispatch.env import DispatchEnv
from med_dispatch.network import Architecture, PolicyNetwork, policy_forward
from med_dispatch.ppo import (AdamState, PpoHyper, Trajectory, evaluate, gae,
                              greedy_policy, load_checkpoint, noop_policy,
                              ppo_objective, random_policy, save_checkpoint,
                              train, update)


# -- GAE -------------------------------------------------------------------

def make_traj(rewards, values, dones=None):
    traj = Trajectory()
    n = len(rewards)
    traj.rewards = list(rewards)
    traj.values = list(values)
    traj.dones = list(dones) if dones is not None else [False] * n
    traj.observations = [np.zeros(1)] * n
    traj.actions = [0] * n
    traj.log_probs = [0.0] * n
    return traj


def test_gae_undiscounted_hand_example():
    traj = make_traj([1.0, 1.0], [0.0, 0.0])
    adv, rets = gae(traj, gamma=1.0, lam=1.0, last_value=0.0)
    assert adv == pytest.approx([2.0, 1.0])
    assert rets == pytest.approx([2.0, 1.0])


def test_gae_matches_independent_recursion():
    rng = np.random.default_rng(0)
    rewards = rng.normal(size=12)
    values = rng.normal(size=12)
    dones = [False] * 12
    dones[5] = True
    gamma, lam, last = 0.9, 0.7, 0.3
    adv, rets = gae(make_traj(rewards, values, dones), gamma, lam, last)

    # independent forward-sum oracle: A_t = sum_k (gamma*lam)^k delta_{t+k}
    # truncated at episode boundaries
    deltas = np.zeros(12)
    for t in range(12):
        nxt = 0.0 if dones[t] else (values[t + 1] if t < 11 else last)
        deltas[t] = rewards[t] + gamma * nxt - values[t]
    expected = np.zeros(12)
    for t in range(12):
        acc, w = 0.0, 1.0
        for k in range(t, 12):
            acc += w * deltas[k]
            if dones[k]:
                break
            w *= gamma * lam
        expected[t] = acc
    assert adv == pytest.approx(expected, rel=1e-12)
    assert rets == pytest.approx(expected + values, rel=1e-12)


def test_gae_terminal_ignores_last_value():
    traj = make_traj([1.0], [0.5], [True])
    adv, _ = gae(traj, gamma=0.99, lam=0.95, last_value=100.0)
    assert adv == pytest.approx([0.5])


def test_gae_empty_rejected():
    with pytest.raises(ValueError):
        gae(Trajectory(), 0.99, 0.95)


# -- clipped surrogate --------------------------------------------------------

def _single_sample_batch(net, params, obs, action, ratio, adv):
    """Craft old_log_prob so the current ratio is exactly `ratio`."""
    _, _, cache = net.forward(params, obs)
    logp = float(cache["log_probs"][0, action])
    return {"obs": np.atleast_2d(obs), "actions": np.array([action]),
            "old_log_probs": np.array([logp - math.log(ratio)]),
            "advantages": np.array([adv]), "returns": np.array([0.0])}


@pytest.fixture
def tiny_net():
    net = PolicyNetwork(Architecture(n_inputs=3, hidden=(4, 4), n_actions=5))
    params = net.init_params(np.random.default_rng(0))
    return net, params


def test_clip_positive_advantage(tiny_net):
    # ratio 1.3, advantage 2: min(2.6, 1.2*2) = 2.4
    net, params = tiny_net
    obs = np.array([0.1, -0.2, 0.3])
    batch = _single_sample_batch(net, params, obs, 1, ratio=1.3, adv=2.0)
    obj, grad = ppo_objective(net, params, batch, eps=0.2, value_coef=0.0,
                              entropy_coef=0.0)
    assert obj == pytest.approx(2.4, rel=1e-12)
    # pessimistic clip active: the policy gradient vanishes
    assert np.allclose(grad, 0.0, atol=1e-12)


def test_clip_negative_advantage(tiny_net):
    # ratio 0.5, advantage -1: min(-0.5, -0.8) = -0.8
    net, params = tiny_net
    obs = np.array([0.1, -0.2, 0.3])
    batch = _single_sample_batch(net, params, obs, 2, ratio=0.5, adv=-1.0)
    obj, grad = ppo_objective(net, params, batch, eps=0.2, value_coef=0.0,
                              entropy_coef=0.0)
    assert obj == pytest.approx(-0.8, rel=1e-12)
    assert np.allclose(grad, 0.0, atol=1e-12)


def test_unclipped_region_uses_ratio(tiny_net):
    net, params = tiny_net
    obs = np.array([0.1, -0.2, 0.3])
    batch = _single_sample_batch(net, params, obs, 0, ratio=1.1, adv=2.0)
    obj, grad = ppo_objective(net, params, batch, eps=0.2, value_coef=0.0,
                              entropy_coef=0.0)
    assert obj == pytest.approx(2.2, rel=1e-12)
    assert not np.allclose(grad, 0.0)


# -- gradient check --------------------------------------------------------------

def test_gradcheck_full_objective():
    net = PolicyNetwork(Architecture(n_inputs=3, hidden=(2, 2), n_actions=3))
    assert net.n_params <= 64
    rng = np.random.default_rng(1)
    params = net.init_params(rng)
    n = 6
    obs = rng.normal(size=(n, 3))
    actions = rng.integers(0, 3, size=n)
    adv = rng.normal(size=n)
    rets = rng.normal(size=n)
    _, _, cache = net.forward(params, obs)
    old_logp = cache["log_probs"][np.arange(n), actions] \
        + rng.normal(0.0, 0.05, size=n)
    batch = {"obs": obs, "actions": actions, "old_log_probs": old_logp,
             "advantages": adv, "returns": rets}

    _, grad = ppo_objective(net, params, batch, eps=0.2, value_coef=0.5,
                            entropy_coef=0.01)
    h = 1e-6
    fd = np.zeros_like(params)
    for i in range(net.n_params):
        up, dn = params.copy(), params.copy()
        up[i] += h
        dn[i] -= h
        f_up, _ = ppo_objective(net, up, batch, 0.2, 0.5, 0.01)
        f_dn, _ = ppo_objective(net, dn, batch, 0.2, 0.5, 0.01)
        fd[i] = (f_up - f_dn) / (2 * h)
    denom = np.maximum(np.abs(fd), 1.0)
    assert np.max(np.abs(grad - fd) / denom) < 1e-4


def test_forward_probs_and_value_shapes(tiny_net):
    net, params = tiny_net
    obs = np.random.default_rng(2).normal(size=(7, 3))
    probs, values, _ = net.forward(params, obs)
    assert probs.shape == (7, 5) and values.shape == (7,)
    assert np.allclose(probs.sum(axis=1), 1.0)
    assert np.all(probs > 0)
    p, v = policy_forward(net, params, obs[0])
    assert p == pytest.approx(probs[0])
    assert v == pytest.approx(values[0])


def test_zero_params_uniform_policy():
    net = PolicyNetwork(Architecture(n_inputs=4, hidden=(3, 3), n_actions=5))
    probs, values, _ = net.forward(np.zeros(net.n_params), np.ones(4))
    assert probs[0] == pytest.approx(np.full(5, 0.2))
    assert values[0] == 0.0


# -- Adam --------------------------------------------------------------------------

def test_adam_first_step_is_signed():
    g = np.array([3.0, -2.0, 0.0])
    state = AdamState.zeros(3)
    params = np.zeros(3)
    out = update(params, g, state, lr=0.1)
    # bias-corrected first step: lr * g / (|g| + eps) = lr * sign(g)
    assert out == pytest.approx([0.1, -0.1, 0.0], abs=1e-8)
    assert state.t == 1


def test_adam_matches_reference_sequence():
    rng = np.random.default_rng(3)
    params = rng.normal(size=4)
    state = AdamState.zeros(4)
    m = np.zeros(4)
    v = np.zeros(4)
    ref = params.copy()
    for t in range(1, 6):
        g = rng.normal(size=4)
        params = update(params, g, state, lr=1e-2)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref + 1e-2 * (m / (1 - 0.9 ** t)) / (
            np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert params == pytest.approx(ref, rel=1e-12)


# -- checkpoints ---------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, tiny_net):
    net, params = tiny_net
    opt = AdamState(m=np.arange(net.n_params, dtype=float),
                    v=np.ones(net.n_params), t=7)
    rng = np.random.default_rng(5)
    path = tmp_path / "ck.json"
    save_checkpoint(path, net, params, opt, rng, env_steps=1234)
    net2, params2, opt2, doc = load_checkpoint(path)
    assert net2.arch == net.arch
    assert params2 == pytest.approx(params, rel=0, abs=0)
    assert opt2.t == 7
    assert opt2.m == pytest.approx(opt.m)
    assert doc["env_steps"] == 1234
    assert doc["format_version"] == 1


def test_checkpoint_version_rejected(tmp_path, tiny_net):
    net, params = tiny_net
    path = tmp_path / "ck.json"
    save_checkpoint(path, net, params, AdamState.zeros(net.n_params),
                    np.random.default_rng(0), 0)
    doc = json.loads(path.read_text())
    doc["format_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_checkpoint(path)


# -- reference policies ------------------------------------------------------------

def test_reference_policies(tiny_net):
    net, params = tiny_net
    obs = np.array([0.3, 0.1, -0.4])
    rng = np.random.default_rng(0)
    probs, _, _ = net.forward(params, obs)
    assert greedy_policy(net, params)(obs, rng) == int(np.argmax(probs[0]))
    assert noop_policy()(obs, rng) == 0
    draws = {random_policy(5)(obs, rng) for _ in range(100)}
    assert draws <= set(range(5)) and len(draws) > 1


# -- train / evaluate ---------------------------------------------------------------

def tiny_train_setup():
    cfg = make_env_config(horizon=25, initial_vehicles=6, max_meds=2,
                          max_evs=5, cooldown=5)
    hyper = PpoHyper(rollout=64, minibatch=32, epochs=2, total_steps=128,
                     hidden=(8, 8))
    return cfg, hyper


def test_train_smoke_and_curve(tmp_path):
    cfg, hyper = tiny_train_setup()
    net, params, curve = train(lambda: DispatchEnv(cfg), hyper, seed=0,
                               out_dir=tmp_path)
    assert np.all(np.isfinite(params))
    assert len(curve) == 2
    assert [r["env_steps"] for r in curve] == [64, 128]
    for row in curve:
        assert set(row) == {"env_steps", "mean_episode_reward", "objective",
                            "entropy"}
        assert math.isfinite(row["entropy"])
    assert (tmp_path / "final.json").exists()


def test_train_deterministic():
    cfg, hyper = tiny_train_setup()
    _, p1, c1 = train(lambda: DispatchEnv(cfg), hyper, seed=42)
    _, p2, c2 = train(lambda: DispatchEnv(cfg), hyper, seed=42)
    _, p3, _ = train(lambda: DispatchEnv(cfg), hyper, seed=43)
    assert p1.tobytes() == p2.tobytes()
    assert c1 == c2
    assert p1.tobytes() != p3.tobytes()


def test_evaluate_statistics():
    cfg, _ = tiny_train_setup()
    out = evaluate(noop_policy(), lambda: DispatchEnv(cfg), episodes=3,
                   base_seed=11)
    assert out["episodes"] == 3
    assert len(out["per_episode"]) == 3
    again = evaluate(noop_policy(), lambda: DispatchEnv(cfg), episodes=3,
                     base_seed=11)
    assert out == again
    for key in ("mean_episode_reward", "std_episode_reward",
                "depletion_proportion", "avg_range_units", "avg_soc"):
        assert math.isfinite(out[key])


def test_hyper_validation():
    with pytest.raises(ValueError):
        PpoHyper(clip=0.0)
    with pytest.raises(ValueError):
        PpoHyper(gamma=0.0)
    with pytest.raises(ValueError):
        PpoHyper(rollout=0)
