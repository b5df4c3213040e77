from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metanav.ppo import (
    PPOAgent,
    PPOParams,
    RolloutStore,
    StaleRolloutError,
    compute_gae,
    gaussian_log_prob,
    ppo_update,
)


def batch(rng, agent, n=12):
    s = rng.uniform(size=(n, 80))
    acts = [agent.act(si, rng) for si in s]
    a = np.array([x[0] for x in acts])
    logp = np.array([x[1] for x in acts])
    return s, a, logp


def test_ratio_one_is_vanilla_policy_gradient():
    rng = np.random.default_rng(0)
    agent = PPOAgent(rng)
    s, a, logp = batch(rng, agent)
    adv = rng.normal(size=len(s))
    g_actor, g_logstd, _ = agent.surrogate_grads(s, a, logp, adv)

    def vanilla_objective() -> float:
        mean = agent.actor(agent._x(s))
        return float(-np.mean(adv * gaussian_log_prob(a, mean, agent.log_std)))

    h = 1e-6
    for layer in (0, 3, 5):
        p = agent.actor.params[layer].reshape(-1)
        for i in rng.choice(p.size, 5, replace=False):
            old = p[i]
            p[i] = old + h
            up = vanilla_objective()
            p[i] = old - h
            down = vanilla_objective()
            p[i] = old
            assert g_actor[layer].reshape(-1)[i] == pytest.approx((up - down) / (2 * h),
                                                                  rel=1e-4, abs=1e-10)
    for j in range(7):
        old = agent.log_std[j]
        agent.log_std[j] = old + h
        up = vanilla_objective()
        agent.log_std[j] = old - h
        down = vanilla_objective()
        agent.log_std[j] = old
        assert g_logstd[j] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-10)


def test_zero_advantage_leaves_policy_unchanged():
    rng = np.random.default_rng(1)
    agent = PPOAgent(rng, PPOParams(entropy_coef=0.0))
    s, a, logp = batch(rng, agent)
    g_actor, g_logstd, _ = agent.surrogate_grads(s, a, logp, np.zeros(len(s)))
    assert all(np.all(g == 0) for g in g_actor) and np.all(g_logstd == 0)
    store = RolloutStore(agent.version)
    for si, ai, li in zip(s, a, logp):
        store.add(si, ai, li, 0.0, 0.0, False)
    before = [p.copy() for p in agent.actor.params] + [agent.log_std.copy()]
    ppo_update(store, agent, rng)
    for p, q in zip(before, agent.actor.params + [agent.log_std]):
        np.testing.assert_array_equal(p, q)


def test_clipping_zeroes_gradient_outside_trust_region():
    rng = np.random.default_rng(2)
    agent = PPOAgent(rng)
    s, a, logp = batch(rng, agent, 4)
    # old log-probs far lower: ratio >> 1 + clip, positive advantage is clipped
    g_actor, g_logstd, _ = agent.surrogate_grads(s, a, logp - 5.0, np.ones(4))
    assert all(np.all(g == 0) for g in g_actor) and np.all(g_logstd == 0)


def test_gae_telescopes_to_return_minus_value():
    rewards = np.array([1.0, -0.5, 2.0, 0.25, 3.0])
    values = np.array([0.3, 1.1, -0.7, 2.0, 0.4])
    adv, ret = compute_gae(rewards, values, np.array([0, 0, 0, 0, 1]), 0.0, 1.0, 1.0)
    empirical = np.cumsum(rewards[::-1])[::-1]
    np.testing.assert_allclose(adv, empirical - values, rtol=0, atol=1e-12)
    np.testing.assert_allclose(ret, empirical, atol=1e-12)


def test_gae_bootstrap_and_episode_cut():
    adv, _ = compute_gae(np.array([1.0, 1.0]), np.array([0.0, 0.0]), np.array([1, 0]),
                         10.0, 0.5, 1.0)
    # step 0 ends its episode; step 1 bootstraps from last_value
    np.testing.assert_allclose(adv, [1.0, 1.0 + 0.5 * 10.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.floats(0, 1), st.floats(0, 1))
def test_gae_zero_lambda_is_td_error(rewards, gamma, _):
    r = np.array(rewards)
    v = np.linspace(-1, 1, len(r))
    adv, _ = compute_gae(r, v, np.zeros(len(r)), 0.5, gamma, 0.0)
    nxt = np.append(v[1:], 0.5)
    np.testing.assert_allclose(adv, r + gamma * nxt - v, atol=1e-9)


def test_stale_rollouts_refused():
    rng = np.random.default_rng(3)
    agent = PPOAgent(rng)
    s, a, logp = batch(rng, agent, 4)
    store = RolloutStore(agent.version)
    for si, ai, li in zip(s, a, logp):
        store.add(si, ai, li, 0.0, 1.0, False)
    ppo_update(store, agent, rng)
    assert agent.version == 1
    with pytest.raises(StaleRolloutError):
        ppo_update(store, agent, rng)
    with pytest.raises(ValueError):
        ppo_update(RolloutStore(agent.version), agent, rng)


def test_log_prob_matches_scipy_free_formula():
    a = np.array([[0.5, -0.2]])
    mean = np.array([[0.1, 0.3]])
    log_std = np.log(np.array([0.5, 2.0]))
    direct = sum(-0.5 * ((a[0, i] - mean[0, i]) / s) ** 2 - np.log(s) - 0.5 * np.log(2 * np.pi)
                 for i, s in enumerate([0.5, 2.0]))
    assert gaussian_log_prob(a, mean, log_std)[0] == pytest.approx(direct, abs=1e-12)


def test_state_roundtrip_and_determinism():
    def run():
        rng = np.random.default_rng(8)
        agent = PPOAgent(rng)
        s, a, logp = batch(rng, agent, 8)
        store = RolloutStore(0)
        for k, (si, ai, li) in enumerate(zip(s, a, logp)):
            store.add(si, ai, li, 0.1 * k, float(k % 3), k == 7)
        ppo_update(store, agent, rng, minibatches=2)
        return agent
    a, b = run(), run()
    sa, sb = a.state_arrays(), b.state_arrays()
    for k in sa:
        np.testing.assert_array_equal(sa[k], sb[k])
    clone = PPOAgent(np.random.default_rng(0))
    clone.load_state_arrays(sa)
    x = np.random.default_rng(1).uniform(size=80)
    np.testing.assert_array_equal(clone.greedy(x), a.greedy(x))
    assert clone.version == 1
