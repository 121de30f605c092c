"""PPO with the clipped surrogate objective over the dispatch environment.

The trainer alternates rollout collection with multi-epoch minibatch Adam
updates on J = clipped surrogate - value_coef * value loss
+ entropy_coef * entropy, ascending J.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .env import DispatchEnv
from .network import Architecture, PolicyNetwork

CHECKPOINT_VERSION = 1
CURVE_WINDOW = 100  # episodes averaged for the reported learning curve


class TrainingError(RuntimeError):
    """Non-finite loss or gradient during training."""


@dataclass(frozen=True)
class PpoHyper:
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    learning_rate: float = 1e-3
    epochs: int = 15
    minibatch: int = 64
    rollout: int = 2048
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    total_steps: int = 400_000
    hidden: tuple = (64, 64)
    checkpoint_every: int = 10  # iterations between saved checkpoints

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ValueError("clip must be in (0, 1)")
        if not 0 < self.gamma <= 1 or not 0 < self.lam <= 1:
            raise ValueError("gamma and lam must be in (0, 1]")
        for name in ("learning_rate", "epochs", "minibatch", "rollout",
                     "total_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass
class Trajectory:
    observations: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    values: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    dones: list = field(default_factory=list)

    def __len__(self):
        return len(self.rewards)

    def arrays(self):
        return (np.asarray(self.observations), np.asarray(self.actions),
                np.asarray(self.log_probs), np.asarray(self.values),
                np.asarray(self.rewards), np.asarray(self.dones, dtype=float))


def gae(traj: Trajectory, gamma: float, lam: float,
        last_value: float = 0.0):
    """Generalized advantage estimation by backward recursion.

    Returns raw (unnormalized) advantages and the value targets
    advantages + values.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    _, _, _, values, rewards, dones = traj.arrays()
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    next_value = last_value
    for t in range(n - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def ppo_objective(net: PolicyNetwork, params: np.ndarray, batch: dict,
                  eps: float, value_coef: float, entropy_coef: float):
    """Objective value and its gradient (for ascent) over one minibatch.

    batch keys: obs, actions, old_log_probs, advantages, returns.
    """
    obs = batch["obs"]
    acts = batch["actions"]
    old_logp = batch["old_log_probs"]
    adv = batch["advantages"]
    rets = batch["returns"]
    n = len(acts)

    probs, values, cache = net.forward(params, obs)
    log_probs = cache["log_probs"]
    logp = log_probs[np.arange(n), acts]
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    surrogate = np.minimum(ratio * adv, clipped * adv)
    entropy = -(probs * log_probs).sum(axis=1)
    value_err = values - rets

    objective = (surrogate.mean() - value_coef * (value_err ** 2).mean()
                 + entropy_coef * entropy.mean())
    if not np.isfinite(objective):
        raise TrainingError("non-finite PPO objective")

    # surrogate gradient is zero where the pessimistic clip is active
    active = ~(((adv >= 0) & (ratio > 1.0 + eps))
               | ((adv < 0) & (ratio < 1.0 - eps)))
    g_logp = np.where(active, ratio * adv, 0.0) / n
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), acts] = 1.0
    dlogits = g_logp[:, None] * (onehot - probs)
    # entropy bonus
    dlogits += entropy_coef * (-probs * (log_probs + entropy[:, None])) / n
    dvalues = -value_coef * 2.0 * value_err / n
    grad = net.backward(cache, dlogits, dvalues)
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite PPO gradient")
    return float(objective), grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def update(params: np.ndarray, gradient: np.ndarray, state: AdamState,
           lr: float, beta1: float = 0.9, beta2: float = 0.999,
           eps: float = 1e-8) -> np.ndarray:
    """One Adam ascent step on the objective; mutates the optimizer state."""
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * gradient
    state.v = beta2 * state.v + (1.0 - beta2) * gradient * gradient
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    return params + lr * m_hat / (np.sqrt(v_hat) + eps)


# -- checkpoints ---------------------------------------------------------


def save_checkpoint(path, net: PolicyNetwork, params: np.ndarray,
                    opt: AdamState, rng: np.random.Generator, env_steps: int):
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "architecture": {
            "n_inputs": net.arch.n_inputs,
            "hidden": list(net.arch.hidden),
            "n_actions": net.arch.n_actions,
        },
        "params": params.tolist(),
        "optimizer": {"m": opt.m.tolist(), "v": opt.v.tolist(), "t": opt.t},
        "rng_state": rng.bit_generator.state,
        "env_steps": env_steps,
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version in {path}")
    arch = Architecture(n_inputs=doc["architecture"]["n_inputs"],
                        hidden=tuple(doc["architecture"]["hidden"]),
                        n_actions=doc["architecture"]["n_actions"])
    net = PolicyNetwork(arch)
    params = np.asarray(doc["params"], dtype=np.float64)
    opt = AdamState(m=np.asarray(doc["optimizer"]["m"]),
                    v=np.asarray(doc["optimizer"]["v"]),
                    t=doc["optimizer"]["t"])
    return net, params, opt, doc


# -- training ------------------------------------------------------------


def train(env_factory: Callable[[], DispatchEnv], hyper: PpoHyper, seed: int,
          out_dir: Optional[Path] = None, workers: int = 1,
          progress: Optional[Callable[[dict], None]] = None):
    """Run PPO; returns (net, params, curve rows).

    curve rows: dicts with env_steps, mean_episode_reward, objective, entropy.
    Each worker owns a private environment instance; the single trainer
    performs all updates.
    """
    envs = [env_factory() for _ in range(workers)]
    obs = [env.reset(seed + 1000 * i) for i, env in enumerate(envs)]
    net = PolicyNetwork(Architecture(n_inputs=obs[0].size, hidden=hyper.hidden))
    rng = np.random.default_rng(seed)
    params = net.init_params(rng)
    opt = AdamState.zeros(net.n_params)

    steps_per_env = max(1, hyper.rollout // workers)
    env_steps = 0
    curve = []
    episode_rewards: list[float] = []
    last_mean = 0.0
    iteration = 0
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    while env_steps < hyper.total_steps:
        iteration += 1
        batches = {"obs": [], "actions": [], "old_log_probs": [],
                   "advantages": [], "returns": []}
        completed_this_iter = []
        for i, env in enumerate(envs):
            traj = Trajectory()
            for _ in range(steps_per_env):
                probs, values, cache = net.forward(params, obs[i])
                action = int(rng.choice(net.arch.n_actions, p=probs[0]))
                logp = float(cache["log_probs"][0, action])
                result = env.step(action)
                traj.observations.append(obs[i])
                traj.actions.append(action)
                traj.log_probs.append(logp)
                traj.values.append(float(values[0]))
                traj.rewards.append(result.reward)
                traj.dones.append(result.done)
                env_steps += 1
                if result.done:
                    completed_this_iter.append(
                        env.stats["episode_reward"])
                    obs[i] = env.reset(seed + 1000 * i + env.step_idx
                                       + env_steps)
                else:
                    obs[i] = result.observation
            if traj.dones[-1]:
                last_value = 0.0
            else:
                _, v, _ = net.forward(params, obs[i])
                last_value = float(v[0])
            adv, rets = gae(traj, hyper.gamma, hyper.lam, last_value)
            o, a, lp, _, _, _ = traj.arrays()
            batches["obs"].append(o)
            batches["actions"].append(a)
            batches["old_log_probs"].append(lp)
            batches["advantages"].append(adv)
            batches["returns"].append(rets)

        data = {k: np.concatenate(v) for k, v in batches.items()}
        adv = data["advantages"]
        data["advantages"] = (adv - adv.mean()) / (adv.std() + 1e-8)

        n = len(data["actions"])
        obj_sum = ent_sum = 0.0
        n_batches = 0
        try:
            for _ in range(hyper.epochs):
                order = rng.permutation(n)
                for start in range(0, n, hyper.minibatch):
                    idx = order[start:start + hyper.minibatch]
                    mb = {"obs": data["obs"][idx],
                          "actions": data["actions"][idx],
                          "old_log_probs": data["old_log_probs"][idx],
                          "advantages": data["advantages"][idx],
                          "returns": data["returns"][idx]}
                    objective, grad = ppo_objective(
                        net, params, mb, hyper.clip, hyper.value_coef,
                        hyper.entropy_coef)
                    params = update(params, grad, opt, hyper.learning_rate)
                    obj_sum += objective
                    n_batches += 1
        except TrainingError:
            if out_dir is not None:
                save_checkpoint(out_dir / "last_good.json", net, params, opt,
                                rng, env_steps)
            raise

        probs_all, _, cache_all = net.forward(params, data["obs"])
        ent_sum = float(-(probs_all * cache_all["log_probs"]).sum(axis=1).mean())
        episode_rewards.extend(completed_this_iter)
        if episode_rewards:
            # running mean over recent episodes smooths the per-iteration
            # sampling noise in the learning curve
            last_mean = float(np.mean(episode_rewards[-CURVE_WINDOW:]))
        row = {"env_steps": env_steps,
               "mean_episode_reward": last_mean,
               "objective": obj_sum / max(n_batches, 1),
               "entropy": ent_sum}
        curve.append(row)
        if progress is not None:
            progress(row)
        if out_dir is not None and (iteration % hyper.checkpoint_every == 0):
            save_checkpoint(out_dir / f"checkpoint_{env_steps:08d}.json",
                            net, params, opt, rng, env_steps)

    if out_dir is not None:
        save_checkpoint(out_dir / "final.json", net, params, opt, rng,
                        env_steps)
    return net, params, curve


# -- evaluation ----------------------------------------------------------


def greedy_policy(net: PolicyNetwork, params: np.ndarray):
    def act(obs, rng):
        probs, _, _ = net.forward(params, obs)
        return int(np.argmax(probs[0]))
    return act


def random_policy(n_actions: int = 5):
    def act(obs, rng):
        return int(rng.integers(n_actions))
    return act


def noop_policy():
    def act(obs, rng):
        return 0
    return act


def evaluate(action_fn, env_factory: Callable[[], DispatchEnv],
             episodes: int = 10, base_seed: int = 0,
             step_callback=None) -> dict:
    """Run seeded episodes and aggregate the five comparison statistics."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rewards, summaries = [], []
    for ep in range(episodes):
        env = env_factory()
        obs = env.reset(base_seed + ep)
        rng = np.random.default_rng(base_seed + ep)
        done = False
        step_idx = 0
        while not done:
            action = action_fn(obs, rng)
            result = env.step(action)
            if step_callback is not None:
                step_callback(ep, step_idx, action, result)
            obs = result.observation
            done = result.done
            step_idx += 1
        summary = env.summary()
        rewards.append(summary["episode_reward"])
        summaries.append(summary)
    rewards = np.asarray(rewards)
    spawned = sum(s["evs_spawned"] for s in summaries)
    depleted = sum(s["depleted"] for s in summaries)
    return {
        "episodes": episodes,
        "mean_episode_reward": float(rewards.mean()),
        "std_episode_reward": float(rewards.std(ddof=0)),
        "depletion_proportion": depleted / spawned if spawned else 0.0,
        "avg_range_units": float(np.mean([s["avg_range_units"]
                                          for s in summaries])),
        "avg_soc": float(np.mean([s["avg_soc"] for s in summaries])),
        "per_episode": summaries,
    }
