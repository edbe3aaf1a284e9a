import numpy as np
import pytest
from sklearn.base import clone

from dltv.exploration import Schedule, SelectionRule
from dltv.oracle import empirical_quantiles, policy_q_values, value_iteration
from dltv.quantile_core import mean
from dltv.tabular_rl import (AgentConfig, QuantileTable, QuantileTDAgent, TabularMDP,
                             bellman_target, dltv_action, evaluate_cliff_policy, greedy_action,
                             make_chain, make_cliff_walk, q_value,
                             quantile_loss, quantile_update, rollout, train_episodes)


def test_mdp_validation():
    with pytest.raises(ValueError):
        TabularMDP([[0]], [[0.0]], [[0.5]], gamma=0.9)
    with pytest.raises(ValueError):
        TabularMDP([[0]], [[0.0]], [[1.0]], gamma=1.0)
    with pytest.raises(ValueError):
        TabularMDP([[3]], [[0.0]], [[1.0]], gamma=0.5)


def test_cliff_walk_construction():
    mdp = make_cliff_walk(12, 4, 0.0)
    P = mdp.transition
    assert np.allclose(P.sum(axis=-1), 1.0)
    assert np.all(P.max(axis=-1) == 1.0)  # one-hot without slip
    start = mdp.state(0, 0)
    # right from the start steps into the cliff
    s, r = mdp.step(start, 1, np.random.default_rng(0))
    assert (s, r) == (start, -100.0)
    s, r = mdp.step(mdp.state(1, 5), 2, np.random.default_rng(0))
    assert (s, r) == (start, -100.0)
    s, r = mdp.step(mdp.state(1, 11), 2, np.random.default_rng(0))
    assert (s, r) == (mdp.state(0, 11), 0.0) and mdp.is_terminal(s)
    s, r = mdp.step(mdp.state(2, 0), 3, np.random.default_rng(0))  # wall
    assert (s, r) == (mdp.state(2, 0), -1.0)
    assert mdp.cliff == frozenset((0, c) for c in range(1, 11))
    assert mdp.distance_to_cliff(mdp.state(3, 5)) == 3


def test_cliff_walk_slip_rows():
    mdp = make_cliff_walk(5, 3, 0.2)
    P = mdp.transition
    assert np.allclose(P.sum(axis=-1), 1.0)
    # from the middle, the intended move gets 0.8 + 0.05
    s = mdp.state(1, 2)
    assert P[s, 0, mdp.state(2, 2)] == pytest.approx(0.85)
    assert P[s, 1, mdp.state(1, 3)] == pytest.approx(0.85)
    with pytest.raises(ValueError):
        make_cliff_walk(2, 4)
    with pytest.raises(ValueError):
        make_cliff_walk(4, 1)
    with pytest.raises(ValueError):
        make_cliff_walk(4, 3, 1.0)


def test_q_value_examples():
    table = QuantileTable.constant(3, 2, 4, value=2.5)
    assert q_value(table, 1, 1) == 2.5
    table.thetas[0, 0] = [0, 1, 2, 3]
    assert q_value(table, 0, 0) == 1.5 == mean(table[0, 0])
    with pytest.raises(IndexError):
        q_value(table, 3, 0)
    with pytest.raises(IndexError):
        q_value(table, 0, 2)


def test_dltv_action_examples():
    table = QuantileTable.constant(2, 3, 4)
    assert dltv_action(table, 0, Schedule("decaying", 50), 7) == 0
    table.thetas[0, 1] = [1, 1, 1, 1]
    table.thetas[0, 2] = [-3, -1, 1, 3]  # equal mean, bigger upper spread
    table.thetas[0, 0] = [0.5] * 4
    assert dltv_action(table, 0, Schedule("decaying", 50), 1) == 1
    table.thetas[0, 2] = [-1, 1, 1, 3]
    assert dltv_action(table, 0, Schedule("decaying", 50), 5) == 2
    mdp = make_chain(1)
    with pytest.raises(ValueError):
        dltv_action(QuantileTable.constant(2, 1, 2), 1, Schedule(), 3, mdp=mdp)


def test_bellman_target_examples():
    table = QuantileTable.constant(2, 1, 2)
    table.thetas[1, 0] = [0, 10]
    assert np.array_equal(bellman_target(table, 1.0, 1, 0, 0.9, terminal=True), [1, 1])
    assert np.array_equal(bellman_target(table, 1.0, 1, 0, 0.0), [1, 1])
    assert np.allclose(bellman_target(table, 1.0, 1, 0, 0.9), [1, 10])


def test_quantile_update_examples():
    table = QuantileTable.constant(1, 1, 4)
    table.thetas[0, 0] = [1, 2, 3, 4]
    quantile_update(table, 0, 0, [1, 2, 3, 4], 0.5)
    # not a fixed point: every theta_i sees all four targets
    table = QuantileTable.constant(1, 1, 4, value=2.0)
    assert np.array_equal(quantile_update(table, 0, 0, [2.0] * 4, 0.5), [2.0] * 4)

    table = QuantileTable.constant(1, 1, 2)
    new = quantile_update(table, 0, 0, [1.0, 1.0], 1.0, kappa=1.0)
    assert np.all(new > 0) and new[0] < new[1]
    assert np.allclose(new, [0.25, 0.75])
    with pytest.raises(ValueError):
        quantile_update(table, 0, 0, [1.0, 2.0, 3.0], 0.1)


def test_quantile_update_converges_to_target_quantiles():
    targets = np.array([-2.0, 0.0, 0.5, 3.0, 7.0, 8.0])
    table = QuantileTable.constant(1, 1, 6)
    # small kappa approaches the pinball loss; the step compensates for the clip
    for k in range(20000):
        quantile_update(table, 0, 0, targets, 10.0 / (1 + k / 200), kappa=0.01)
    assert np.allclose(table.thetas[0, 0], empirical_quantiles(targets, 6), atol=0.05)


def test_quantile_update_is_descent():
    rng = np.random.default_rng(0)
    for _ in range(300):
        theta = rng.normal(size=6)
        targets = rng.normal(scale=2, size=6)
        table = QuantileTable(theta[None, None].copy())
        before = quantile_loss(theta, targets)
        after = quantile_loss(quantile_update(table, 0, 0, targets, 1e-3), targets)
        assert after <= before + 1e-12


def test_quantile_update_matches_finite_difference():
    rng = np.random.default_rng(1)
    # the loss is piecewise quadratic, so central differences away from kinks are exact
    h = 1e-4
    for _ in range(200):
        theta = rng.normal(size=4)
        targets = rng.normal(scale=2, size=4)
        u = targets[None] - theta[:, None]
        if np.min(np.abs(u)) < 1e-3 or np.min(np.abs(np.abs(u) - 1)) < 1e-3:
            continue
        table = QuantileTable(theta[None, None].copy())
        step = quantile_update(table, 0, 0, targets, 1.0) - theta
        fd = np.array([(quantile_loss(theta + h * e, targets) - quantile_loss(theta - h * e, targets))
                       / (2 * h) for e in np.eye(4)])
        assert np.allclose(step, -fd, rtol=1e-5, atol=1e-9)


def test_chain_start_value_converges():
    mdp = make_chain(3, gamma=0.9)
    table, records = train_episodes(mdp, AgentConfig(), 1000, np.random.default_rng(0))
    assert q_value(table, 0, 0) == pytest.approx(0.81, abs=1e-2)
    assert len(records) == 3000
    assert records[-1].cum_reward == pytest.approx(1000.0)
    assert [r.step for r in records[:4]] == [1, 2, 3, 4]


def test_gamma_zero_learns_expected_reward():
    mdp = TabularMDP([[0, 0]], [[1.0, -2.0]], [[1.0, 1.0]], gamma=0.0,
                     reward_std=np.array([[1.0, 1.0]]))
    cfg = AgentConfig(step_size=0.02, selection=SelectionRule("epsilon_greedy", epsilon=1.0),
                      max_steps=100)
    table, _ = train_episodes(mdp, cfg, 200, np.random.default_rng(0), log=False)
    assert np.allclose(table.q_values()[0], [1.0, -2.0], atol=0.15)


def test_terminal_targets_never_bootstrap():
    mdp = make_chain(1, gamma=0.9)
    cfg = AgentConfig(init_value=5.0, step_size=0.5, max_steps=5)
    table, _ = train_episodes(mdp, cfg, 400, np.random.default_rng(0), log=False)
    assert q_value(table, 0, 0) == pytest.approx(1.0, abs=1e-2)
    assert np.all(table.thetas[1] == 5.0)  # terminal row is never touched


def _evaluate_policy(mdp, policy, episodes, rng, n=10):
    """Quantile TD on a fixed policy with a per-pair ``1 / (1 + visits / 10)`` step."""
    table = QuantileTable.constant(mdp.n_states, mdp.n_actions, n)
    visits = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(episodes):
        s = mdp.reset(rng)
        for _ in range(200):
            if mdp.is_terminal(s):
                break
            a = policy[s]
            s2, r = mdp.step(s, a, rng)
            visits[s, a] += 1
            targets = bellman_target(table, r, s2, policy[s2], mdp.gamma, terminal=mdp.is_terminal(s2))
            quantile_update(table, s, a, targets, 1.0 / (1.0 + visits[s, a] / 10.0))
            s = s2
    return table


def test_policy_evaluation_matches_linear_solve():
    # Gaussian reward noise keeps returns continuous and symmetric, where the
    # mean of the mid-level quantiles is unbiased
    mdp = make_chain(3, gamma=0.9, reward_std=0.2)
    policy = np.zeros(mdp.n_states, dtype=int)
    exact = policy_q_values(mdp, policy)[:3, 0]
    errs = [_evaluate_policy(mdp, policy, 2000, np.random.default_rng(seed)).q_values()[:3, 0] - exact
            for seed in range(10)]
    scale = np.abs(exact).max()
    assert np.all(np.abs(np.mean(errs, axis=0)) < 1e-2 * scale)


def test_reward_shift_on_continuing_chain():
    # two-state loop, no terminal: Q shifts by c / (1 - gamma)
    def loop(c):
        return TabularMDP([[1], [0]], [[1.0 + c], [0.0 + c]], [[1.0], [1.0]], gamma=0.5)
    c = 2.0
    q0, q1 = value_iteration(loop(0.0), tol=1e-12), value_iteration(loop(c), tol=1e-12)
    assert np.allclose(q1 - q0, c / (1 - 0.5), atol=1e-9)
    cfg = AgentConfig(step_size=0.05, max_steps=200)
    t0, _ = train_episodes(loop(0.0), cfg, 30, np.random.default_rng(0), log=False)
    t1, _ = train_episodes(loop(c), cfg, 30, np.random.default_rng(0), log=False)
    assert np.allclose(t1.q_values() - t0.q_values(), c / (1 - 0.5), atol=0.05)


def test_frozen_target_mode_converges():
    mdp = make_chain(3, gamma=0.9)
    cfg = AgentConfig(target_period=10)
    table, _ = train_episodes(mdp, cfg, 1000, np.random.default_rng(0), log=False)
    assert q_value(table, 0, 0) == pytest.approx(0.81, abs=1e-2)
    with pytest.raises(ValueError):
        AgentConfig(target_period=0)


def test_greedy_target_flag_changes_bootstrap():
    mdp = make_cliff_walk(5, 3, 0.1)
    base = AgentConfig(n_quantiles=4)
    a, _ = train_episodes(mdp, base, 20, np.random.default_rng(0), log=False)
    b, _ = train_episodes(mdp, AgentConfig(n_quantiles=4, greedy_target=True), 20,
                          np.random.default_rng(0), log=False)
    assert not np.array_equal(a.thetas, b.thetas)


def test_agent_estimator_api():
    agent = QuantileTDAgent(n_episodes=1000, n_quantiles=4, random_state=0)
    assert clone(agent).get_params() == agent.get_params()
    agent.fit(make_chain())
    assert agent.q_values()[0, 0] == pytest.approx(0.81, abs=2e-2)
    assert agent.predict([0, 1]).tolist() == [0, 0]
    with pytest.raises(ValueError):
        agent.predict([0], risk_alpha=1.5)


def test_greedy_action_and_rollout():
    mdp = make_cliff_walk(4, 2, 0.0)
    table = QuantileTable.constant(mdp.n_states, 4, 2)
    table.thetas[mdp.state(0, 0), 0] = [1.0, 1.0]  # up
    table.thetas[mdp.state(1, 0), 1] = [1.0, 1.0]
    table.thetas[mdp.state(1, 1), 1] = [1.0, 1.0]
    table.thetas[mdp.state(1, 2), 1] = [1.0, 1.0]
    table.thetas[mdp.state(1, 3), 2] = [1.0, 1.0]
    path = rollout(mdp, table, np.random.default_rng(0))
    assert [a for _, a, _, _ in path] == [0, 1, 1, 1, 2]
    assert greedy_action(table, mdp.state(0, 0), risk_alpha=0.9) == 0
    stats = evaluate_cliff_policy(mdp, table, n_episodes=3)
    assert stats == {"fall_rate": 0.0, "mean_min_distance": 1.0, "mean_return": -4.0,
                     "mean_length": 5.0}
