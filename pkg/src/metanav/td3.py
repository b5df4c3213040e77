"""TD3: twin critics, delayed deterministic actor, target policy smoothing."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from metanav.env import ACTION_DIM, SCAN_FEATURES, STATE_DIM
from metanav.nn import MLP, Adam


@dataclass(frozen=True)
class TD3Params:
    gamma: float = 0.99
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    tau: float = 0.005
    policy_delay: int = 2
    exploration_noise: float = 0.2
    target_noise: float = 0.1
    noise_clip: float = 0.3
    batch_size: int = 128
    buffer_size: int = 100_000


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool

    def __post_init__(self) -> None:
        if np.shape(self.s) != (STATE_DIM,) or np.shape(self.s_next) != (STATE_DIM,):
            raise ValueError(f"states must have shape ({STATE_DIM},)")
        if np.shape(self.a) != (ACTION_DIM,):
            raise ValueError(f"actions must have shape ({ACTION_DIM},)")
        if not math.isfinite(self.r):
            raise ValueError("reward must be finite")


class InsufficientDataError(RuntimeError):
    pass


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions."""

    def __init__(self, capacity: int, state_dim: int = STATE_DIM,
                 action_dim: int = ACTION_DIM) -> None:
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self.size = 0
        self.ptr = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        i = self.ptr
        self.s[i], self.a[i], self.r[i] = t.s, t.a, t.r
        self.s_next[i], self.done[i] = t.s_next, float(t.done)
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def extend(self, transitions: Sequence[Transition]) -> None:
        for t in transitions:
            self.add(t)

    def sample(self, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
        if self.size < n:
            raise InsufficientDataError(f"buffer holds {self.size} < batch size {n}")
        idx = rng.integers(0, self.size, size=n)
        return {"s": self.s[idx], "a": self.a[idx], "r": self.r[idx],
                "s_next": self.s_next[idx], "done": self.done[idx]}


def observation_scale() -> np.ndarray:
    scale = np.ones(STATE_DIM)
    scale[SCAN_FEATURES] = 1.0 / math.pi
    return scale


class TD3Agent:
    algorithm = "td3"

    def __init__(self, rng: np.random.Generator, params: TD3Params = TD3Params()) -> None:
        self.hp = params
        self.obs_scale = observation_scale()
        self.actor = MLP.create(STATE_DIM, ACTION_DIM, rng, output_activation="tanh")
        self.critic1 = MLP.create(STATE_DIM + ACTION_DIM, 1, rng)
        self.critic2 = MLP.create(STATE_DIM + ACTION_DIM, 1, rng)
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.actor_opt = Adam(self.actor.params, params.actor_lr)
        self.critic_opt = Adam(self.critic1.params + self.critic2.params, params.critic_lr)
        self.updates = 0

    def _x(self, s: np.ndarray) -> np.ndarray:
        return np.atleast_2d(s) * self.obs_scale

    def _sa(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        return np.concatenate([self._x(s), np.atleast_2d(a)], axis=1)

    def greedy(self, s: np.ndarray) -> np.ndarray:
        return self.actor(self._x(s))[0]

    def act(self, s: np.ndarray, rng: np.random.Generator, explore: bool = True) -> np.ndarray:
        a = self.greedy(s)
        if explore:
            a = a + rng.normal(0.0, self.hp.exploration_noise, size=a.shape)
        return np.clip(a, -1.0, 1.0)

    def target_values(self, batch: dict[str, np.ndarray],
                      rng: np.random.Generator | None) -> np.ndarray:
        hp = self.hp
        a_next = self.actor_target(self._x(batch["s_next"]))
        if rng is not None:
            noise = np.clip(rng.normal(0.0, hp.target_noise, size=a_next.shape),
                            -hp.noise_clip, hp.noise_clip)
            a_next = np.clip(a_next + noise, -1.0, 1.0)
        sa_next = self._sa(batch["s_next"], a_next)
        q_next = np.minimum(self.critic1_target(sa_next), self.critic2_target(sa_next))[:, 0]
        return batch["r"] + hp.gamma * (1.0 - batch["done"]) * q_next

    def critic_loss(self, batch: dict[str, np.ndarray], y: np.ndarray | None = None) -> float:
        if y is None:
            y = self.target_values(batch, None)
        sa = self._sa(batch["s"], batch["a"])
        q1 = self.critic1(sa)[:, 0]
        q2 = self.critic2(sa)[:, 0]
        return float(np.mean((q1 - y) ** 2) + np.mean((q2 - y) ** 2))

    def update_on_batch(self, batch: dict[str, np.ndarray],
                        rng: np.random.Generator) -> dict[str, float]:
        y = self.target_values(batch, rng)
        sa = self._sa(batch["s"], batch["a"])
        n = len(y)
        q1, acts1 = self.critic1.forward(sa)
        q2, acts2 = self.critic2.forward(sa)
        loss = float(np.mean((q1[:, 0] - y) ** 2) + np.mean((q2[:, 0] - y) ** 2))
        g1, _ = self.critic1.backward(acts1, 2.0 * (q1 - y[:, None]) / n)
        g2, _ = self.critic2.backward(acts2, 2.0 * (q2 - y[:, None]) / n)
        self.critic_opt.step(self.critic1.params + self.critic2.params, g1 + g2)
        self.updates += 1
        out = {"critic_loss": loss}
        if self.updates % self.hp.policy_delay == 0:
            x = self._x(batch["s"])
            a_pi, acts_a = self.actor.forward(x)
            q, acts_q = self.critic1.forward(np.concatenate([x, a_pi], axis=1))
            _, dq_dsa = self.critic1.backward(acts_q, np.full_like(q, -1.0 / n))
            ga, _ = self.actor.backward(acts_a, dq_dsa[:, STATE_DIM:])
            self.actor_opt.step(self.actor.params, ga)
            out["actor_loss"] = float(-q.mean())
            tau = self.hp.tau
            self.actor_target.soft_update_from(self.actor, tau)
            self.critic1_target.soft_update_from(self.critic1, tau)
            self.critic2_target.soft_update_from(self.critic2, tau)
        return out

    def networks(self) -> dict[str, MLP]:
        return {"actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
                "actor_target": self.actor_target, "critic1_target": self.critic1_target,
                "critic2_target": self.critic2_target}

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, net in self.networks().items():
            for i, p in enumerate(net.params):
                out[f"{name}.{i}"] = p
        for name, opt in (("actor_opt", self.actor_opt), ("critic_opt", self.critic_opt)):
            for i, p in enumerate(opt.state()):
                out[f"{name}.{i}"] = p
        out["updates"] = np.array([self.updates], dtype=float)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, net in self.networks().items():
            net.params = [arrays[f"{name}.{i}"].copy() for i in range(len(net.params))]
        for name, opt in (("actor_opt", self.actor_opt), ("critic_opt", self.critic_opt)):
            n = len(opt.state())
            opt.load_state([arrays[f"{name}.{i}"] for i in range(n)])
        self.updates = int(arrays["updates"][0])


def td3_update(buffer: ReplayBuffer, agent: TD3Agent, rng: np.random.Generator) -> dict[str, float]:
    """One twin-critic step (and, every ``policy_delay`` calls, an actor step)."""
    batch = buffer.sample(rng, agent.hp.batch_size)
    return agent.update_on_batch(batch, rng)
