"""PPO with a diagonal Gaussian policy, clipped surrogate and GAE."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from metanav.env import ACTION_DIM, STATE_DIM
from metanav.nn import MLP, Adam
from metanav.td3 import observation_scale

_LOG_2PI = math.log(2.0 * math.pi)
LOG_STD_MIN, LOG_STD_MAX = -3.0, 0.5


@dataclass(frozen=True)
class PPOParams:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    lr: float = 3e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    init_log_std: float = math.log(0.3)


class StaleRolloutError(RuntimeError):
    pass


@dataclass
class RolloutStore:
    """On-policy data of one collection round, tagged with the policy version."""

    policy_version: int
    states: list[np.ndarray] = field(default_factory=list)
    actions: list[np.ndarray] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    dones: list[bool] = field(default_factory=list)

    def add(self, s: np.ndarray, a: np.ndarray, log_prob: float, value: float,
            reward: float, done: bool) -> None:
        self.states.append(np.asarray(s, dtype=float))
        self.actions.append(np.asarray(a, dtype=float))
        self.log_probs.append(float(log_prob))
        self.values.append(float(value))
        self.rewards.append(float(reward))
        self.dones.append(bool(done))

    def __len__(self) -> int:
        return len(self.rewards)


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                last_value: float, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates and the matching value targets.

    ``dones[t]`` marks that step t ended its episode, so nothing bootstraps across it.
    """
    n = len(rewards)
    adv = np.zeros(n)
    gae = 0.0
    for t in reversed(range(n)):
        next_value = last_value if t == n - 1 else values[t + 1]
        nonterminal = 1.0 - float(dones[t])
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        gae = delta + gamma * lam * nonterminal * gae
        adv[t] = gae
    return adv, adv + values


def gaussian_log_prob(a: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (a - mean) / np.exp(log_std)
    return -0.5 * (z * z).sum(axis=-1) - log_std.sum() - 0.5 * a.shape[-1] * _LOG_2PI


class PPOAgent:
    algorithm = "ppo"

    def __init__(self, rng: np.random.Generator, params: PPOParams = PPOParams()) -> None:
        self.hp = params
        self.obs_scale = observation_scale()
        self.actor = MLP.create(STATE_DIM, ACTION_DIM, rng, output_activation="tanh")
        self.log_std = np.full(ACTION_DIM, params.init_log_std)
        self.value = MLP.create(STATE_DIM, 1, rng)
        self.policy_opt = Adam(self.actor.params + [self.log_std], params.lr)
        self.value_opt = Adam(self.value.params, params.lr)
        self.version = 0

    def _x(self, s: np.ndarray) -> np.ndarray:
        return np.atleast_2d(s) * self.obs_scale

    def greedy(self, s: np.ndarray) -> np.ndarray:
        return self.actor(self._x(s))[0]

    def act(self, s: np.ndarray, rng: np.random.Generator,
            explore: bool = True) -> tuple[np.ndarray, float, float]:
        """Sampled (unclipped) action, its log-probability, and the state value."""
        mean = self.greedy(s)
        a = mean + np.exp(self.log_std) * rng.normal(size=mean.shape) if explore else mean
        logp = float(gaussian_log_prob(a[None], mean[None], self.log_std)[0])
        v = float(self.value(self._x(s))[0, 0])
        return a, logp, v

    def surrogate_grads(self, s: np.ndarray, a: np.ndarray, old_logp: np.ndarray,
                        adv: np.ndarray) -> tuple[list[np.ndarray], np.ndarray, float]:
        """Gradient of the negated clipped surrogate w.r.t. actor params and log_std."""
        n = len(adv)
        mean, acts = self.actor.forward(self._x(s))
        std = np.exp(self.log_std)
        logp = gaussian_log_prob(a, mean, self.log_std)
        ratio = np.exp(logp - old_logp)
        clipped = np.clip(ratio, 1.0 - self.hp.clip, 1.0 + self.hp.clip)
        surr = np.minimum(ratio * adv, clipped * adv)
        # the unclipped branch is active unless clipping strictly lowers the objective
        active = ratio * adv <= clipped * adv
        dl_dlogp = np.where(active, -adv * ratio / n, 0.0)
        diff = a - mean
        dlogp_dmean = diff / (std * std)
        dlogp_dlogstd = diff * diff / (std * std) - 1.0
        g_actor, _ = self.actor.backward(acts, dl_dlogp[:, None] * dlogp_dmean)
        g_logstd = (dl_dlogp[:, None] * dlogp_dlogstd).sum(axis=0)
        return g_actor, g_logstd, float(-surr.mean())

    def value_grads(self, s: np.ndarray, returns: np.ndarray) -> tuple[list[np.ndarray], float]:
        v, acts = self.value.forward(self._x(s))
        n = len(returns)
        err = v[:, 0] - returns
        g, _ = self.value.backward(acts, (2.0 * self.hp.value_coef * err / n)[:, None])
        return g, float(self.hp.value_coef * np.mean(err ** 2))

    def entropy(self) -> float:
        return float(self.log_std.sum() + 0.5 * ACTION_DIM * (1.0 + _LOG_2PI))

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, net in (("actor", self.actor), ("value", self.value)):
            for i, p in enumerate(net.params):
                out[f"{name}.{i}"] = p
        out["log_std"] = self.log_std
        for name, opt in (("policy_opt", self.policy_opt), ("value_opt", self.value_opt)):
            for i, p in enumerate(opt.state()):
                out[f"{name}.{i}"] = p
        out["version"] = np.array([self.version], dtype=float)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, net in (("actor", self.actor), ("value", self.value)):
            net.params = [arrays[f"{name}.{i}"].copy() for i in range(len(net.params))]
        self.log_std = arrays["log_std"].copy()
        for name, opt in (("policy_opt", self.policy_opt), ("value_opt", self.value_opt)):
            n = len(opt.state())
            opt.load_state([arrays[f"{name}.{i}"] for i in range(n)])
        self.version = int(arrays["version"][0])


def ppo_update(rollouts: RolloutStore, agent: PPOAgent, rng: np.random.Generator,
               minibatches: int = 4) -> dict[str, float]:
    """Clipped-surrogate epochs over shuffled minibatches of one round's rollouts."""
    if rollouts.policy_version != agent.version:
        raise StaleRolloutError(
            f"rollouts from policy v{rollouts.policy_version}, agent is v{agent.version}")
    if len(rollouts) == 0:
        raise ValueError("no rollouts to learn from")
    hp = agent.hp
    s = np.array(rollouts.states)
    a = np.array(rollouts.actions)
    old_logp = np.array(rollouts.log_probs)
    values = np.array(rollouts.values)
    adv, returns = compute_gae(np.array(rollouts.rewards), values, np.array(rollouts.dones),
                               0.0, hp.gamma, hp.gae_lambda)
    if len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = len(adv)
    minibatches = max(1, min(int(minibatches), n))
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "steps": 0.0}
    for _ in range(hp.epochs):
        order = rng.permutation(n)
        for idx in np.array_split(order, minibatches):
            g_actor, g_logstd, pl = agent.surrogate_grads(s[idx], a[idx], old_logp[idx], adv[idx])
            # entropy bonus: d(-c*H)/d(log_std) = -c
            g_logstd = g_logstd - hp.entropy_coef
            agent.policy_opt.step(agent.actor.params + [agent.log_std], g_actor + [g_logstd])
            np.clip(agent.log_std, LOG_STD_MIN, LOG_STD_MAX, out=agent.log_std)
            g_value, vl = agent.value_grads(s[idx], returns[idx])
            agent.value_opt.step(agent.value.params, g_value)
            stats["policy_loss"] += pl
            stats["value_loss"] += vl
            stats["steps"] += 1
    agent.version += 1
    stats["policy_loss"] /= stats["steps"]
    stats["value_loss"] /= stats["steps"]
    return stats
