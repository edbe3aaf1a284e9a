"""Finite MDPs and a tabular quantile-TD agent with the DLTV bonus.

The agent keeps one :class:`~dltv.quantile_core.QuantileDistribution` per
state-action pair and takes one Huber-quantile subgradient step per
transition against the targets ``r + gamma * theta_j(s', a*)``, where ``a*``
is the bonus-augmented argmax at ``s'`` (or the plain mean argmax with
``greedy_target=True``).
"""

from dataclasses import dataclass, field
import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_even_n, check_index, check_level, check_positive, first_argmax
from .exploration import Schedule, SelectionRule, schedule_value
from .quantile_core import (QuantileDistribution, huber_loss, huber_quantile_grad, mean,
                            quantile_levels, truncated_variance_plus, var_alpha, variance)


@dataclass
class TabularMDP:
    """A finite MDP given as an explicit outcome table.

    Each ``(s, a)`` has up to ``M`` outcomes ``(next_state, reward)`` with
    probabilities ``probs[s, a, m]`` (zero-padded).  Rewards belong to
    outcomes rather than to ``(s, a, s')`` so that two different events with
    the same successor (a fall that resets to the start, a bump into a wall
    next to the start) can carry different rewards.  ``reward_std``, if
    given, adds zero-mean Gaussian noise per ``(s, a)``.
    """

    next_states: np.ndarray
    rewards: np.ndarray
    probs: np.ndarray
    gamma: float
    terminal: frozenset = frozenset()
    start: np.ndarray = None
    reward_std: np.ndarray = None

    def __post_init__(self):
        self.next_states = np.asarray(self.next_states, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.probs = np.asarray(self.probs, dtype=float)
        if self.next_states.ndim == 2:
            self.next_states = self.next_states[..., None]
            self.rewards = self.rewards[..., None]
            self.probs = self.probs[..., None]
        if not (self.next_states.shape == self.rewards.shape == self.probs.shape):
            raise ValueError("next_states, rewards and probs must share shape (S, A, M)")
        S = self.next_states.shape[0]
        if np.any((self.next_states < 0) | (self.next_states >= S)):
            raise ValueError("next state index out of range")
        if np.any(self.probs < 0) or not np.allclose(self.probs.sum(axis=-1), 1.0, atol=1e-9):
            raise ValueError("outcome probabilities must be nonnegative and sum to 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        self.terminal = frozenset(int(s) for s in self.terminal)
        if self.start is None:
            self.start = np.zeros(S)
            self.start[0] = 1.0
        self.start = np.asarray(self.start, dtype=float)
        if self.start.shape != (S,) or not np.isclose(self.start.sum(), 1.0):
            raise ValueError("start must be a distribution over states")
        if self.reward_std is not None:
            self.reward_std = np.broadcast_to(np.asarray(self.reward_std, dtype=float),
                                              (S, self.n_actions)).copy()
        self._cum = np.cumsum(self.probs, axis=-1)

    @property
    def n_states(self):
        return self.next_states.shape[0]

    @property
    def n_actions(self):
        return self.next_states.shape[1]

    @property
    def transition(self):
        """Dense ``P[s, a, s']``."""
        P = np.zeros((self.n_states, self.n_actions, self.n_states))
        S, A, M = self.probs.shape
        s_idx, a_idx = np.meshgrid(np.arange(S), np.arange(A), indexing="ij")
        for m in range(M):
            np.add.at(P, (s_idx, a_idx, self.next_states[..., m]), self.probs[..., m])
        return P

    @property
    def expected_reward(self):
        """``E[R | s, a]``."""
        return (self.probs * self.rewards).sum(axis=-1)

    def is_terminal(self, s):
        return s in self.terminal

    def reset(self, rng):
        return int(np.searchsorted(np.cumsum(self.start), rng.random(), side="right"))

    def step(self, s, a, rng):
        """Sample ``(next_state, reward)``."""
        m = int(np.searchsorted(self._cum[s, a], rng.random(), side="right"))
        m = min(m, self.probs.shape[-1] - 1)
        r = float(self.rewards[s, a, m])
        if self.reward_std is not None and self.reward_std[s, a] > 0:
            r += self.reward_std[s, a] * rng.standard_normal()
        return int(self.next_states[s, a, m]), r


def make_chain(n_states=3, gamma=0.9, final_reward=1.0, reward_std=None):
    """Deterministic one-action chain ``0 -> 1 -> ... -> n-1 -> end``.

    Leaving the last state pays ``final_reward`` and enters an absorbing
    terminal state (index ``n_states``), so the start value is
    ``gamma**(n_states - 1) * final_reward``.
    """
    if n_states < 1:
        raise ValueError("chain needs at least one state")
    S = n_states + 1
    nxt = np.minimum(np.arange(S) + 1, n_states)[:, None]
    rew = np.zeros((S, 1))
    rew[n_states - 1, 0] = final_reward
    return TabularMDP(nxt, rew, np.ones((S, 1)), gamma, terminal={n_states}, reward_std=reward_std)


# up, right, down, left; row 0 is the bottom row
MOVES = ((1, 0), (0, 1), (-1, 0), (0, -1))
ACTION_NAMES = ("up", "right", "down", "left")


@dataclass
class GridWorld(TabularMDP):
    """A :class:`TabularMDP` with its grid geometry attached.

    States are ``row * width + col``; the goal is terminal.  Cells listed in
    ``cliff`` are never occupied: moving into one pays ``cliff_reward`` and
    puts the agent back on the start cell.
    """

    width: int = 0
    height: int = 0
    cliff: frozenset = frozenset()
    start_cell: tuple = (0, 0)
    goal_cell: tuple = (0, 0)
    cliff_reward: float = -100.0

    def cell(self, s):
        return divmod(int(s), self.width)

    def state(self, row, col):
        return row * self.width + col

    def distance_to_cliff(self, s):
        """Manhattan distance from state ``s`` to the nearest cliff cell."""
        if not self.cliff:
            return math.inf
        r, c = self.cell(s)
        return min(abs(r - cr) + abs(c - cc) for cr, cc in self.cliff)


def make_gridworld(width, height, slip=0.0, *, cliff=True, gamma=0.95, step_reward=-1.0,
                   cliff_reward=-100.0, goal_reward=0.0):
    """Gridworld with start at the lower-left and goal at the lower-right corner.

    With ``cliff=True`` the bottom-row cells between start and goal form the
    cliff.  With probability ``slip`` the intended move is replaced by one of
    the four moves drawn uniformly (possibly the intended one).  Bumping into
    a wall leaves the agent in place.  Every move pays ``step_reward`` except
    entering the goal (``goal_reward``) or the cliff (``cliff_reward``).
    """
    if width < 3 or height < 2:
        raise ValueError(f"grid must be at least 3 wide and 2 high, got {width}x{height}")
    slip = float(slip)
    if not 0.0 <= slip < 1.0:
        raise ValueError(f"slip must lie in [0, 1), got {slip}")
    start_cell, goal_cell = (0, 0), (0, width - 1)
    cliff_cells = frozenset((0, c) for c in range(1, width - 1)) if cliff else frozenset()
    S, A = width * height, len(MOVES)
    start_state = 0
    goal_state = goal_cell[0] * width + goal_cell[1]

    def outcome(s, move):
        r, c = divmod(s, width)
        nr, nc = r + move[0], c + move[1]
        if not (0 <= nr < height and 0 <= nc < width):
            nr, nc = r, c
        if (nr, nc) in cliff_cells:
            return start_state, cliff_reward
        ns = nr * width + nc
        return ns, goal_reward if ns == goal_state else step_reward

    weights = [(1.0 - slip) + slip / A if m == 0 else slip / A for m in range(A)]
    next_states = np.zeros((S, A, A), dtype=np.int64)
    rewards = np.zeros((S, A, A))
    probs = np.zeros((S, A, A))
    for s in range(S):
        for a in range(A):
            # outcome 0 is the intended move, then the other moves in order
            order = [a] + [b for b in range(A) if b != a]
            for m, b in enumerate(order):
                if s == goal_state:
                    next_states[s, a, m], rewards[s, a, m] = s, 0.0
                else:
                    next_states[s, a, m], rewards[s, a, m] = outcome(s, MOVES[b])
                probs[s, a, m] = weights[m]
    start = np.zeros(S)
    start[start_state] = 1.0
    return GridWorld(next_states, rewards, probs, gamma, terminal={goal_state}, start=start,
                     width=width, height=height, cliff=cliff_cells, start_cell=start_cell,
                     goal_cell=goal_cell, cliff_reward=cliff_reward)


def make_cliff_walk(width=12, height=4, slip=0.1, **kwargs):
    """The cliff-walk gridworld; see :func:`make_gridworld`."""
    return make_gridworld(width, height, slip, cliff=True, **kwargs)


# --------------------------------------------------------------------------
# quantile table and updates


@dataclass
class QuantileTable:
    """Quantile estimates ``thetas[s, a, i]`` for every state-action pair."""

    thetas: np.ndarray

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float)
        if self.thetas.ndim != 3:
            raise ValueError("thetas must have shape (states, actions, N)")
        check_even_n(self.thetas.shape[-1], "number of quantiles")

    @classmethod
    def constant(cls, n_states, n_actions, n_quantiles, value=0.0):
        return cls(np.full((n_states, n_actions, check_even_n(n_quantiles)), float(value)))

    @property
    def n_quantiles(self):
        return self.thetas.shape[-1]

    @property
    def levels(self):
        return quantile_levels(self.n_quantiles)

    def __getitem__(self, sa):
        s, a = sa
        return QuantileDistribution(self.thetas[s, a].copy())

    def q_values(self):
        return self.thetas.mean(axis=-1)

    def copy(self):
        return QuantileTable(self.thetas.copy())


def _check_sa(table, s, a=None):
    S, A, _ = table.thetas.shape
    s = check_index(s, S, "state")
    if a is not None:
        a = check_index(a, A, "action")
    return s, a


def q_value(table, s, a):
    s, a = _check_sa(table, s, a)
    return float(mean(table.thetas[s, a]))


def bonus_scores(table, s, schedule, t):
    """``Q(s, .) + c_t * sqrt(sigma2_plus(s, .))``, one entry per action."""
    row = table.thetas[s]
    c_t = schedule_value(schedule, t) if schedule is not None else 0.0
    return mean(row) + c_t * np.sqrt(truncated_variance_plus(row))


def dltv_action(table, s, schedule, t, mdp=None):
    """Bonus-augmented greedy action at a nonterminal state ``s``."""
    s, _ = _check_sa(table, s)
    if mdp is not None and mdp.is_terminal(s):
        raise ValueError(f"state {s} is terminal")
    return int(first_argmax(bonus_scores(table, s, schedule, t)))


def greedy_action(table, s, risk_alpha=None):
    """Mean-greedy action, or VaR-greedy when ``risk_alpha`` is given."""
    row = table.thetas[s]
    if risk_alpha is None:
        return int(first_argmax(mean(row)))
    return int(first_argmax(var_alpha(row, risk_alpha)))


def bellman_target(table, r, s_next, a_star, gamma, terminal=False):
    """Targets ``r + gamma * theta_j(s_next, a_star)``; just ``r`` after a terminal."""
    n = table.n_quantiles
    if terminal:
        return np.full(n, float(r))
    s_next, a_star = _check_sa(table, s_next, a_star)
    return r + gamma * table.thetas[s_next, a_star]


def quantile_update(table, s, a, targets, alpha, kappa=1.0):
    """One subgradient step on ``sum_i (1/N) sum_j huber_quantile_loss(T_j - theta_i)``.

    Updates ``table`` in place and returns the new estimates for ``(s, a)``.
    """
    s, a = _check_sa(table, s, a)
    targets = np.asarray(targets, dtype=float)
    n = table.n_quantiles
    if targets.shape != (n,):
        raise ValueError(f"expected {n} targets, got shape {targets.shape}")
    theta = table.thetas[s, a]
    u = targets[None, :] - theta[:, None]
    grad = huber_quantile_grad(u, table.levels[:, None], kappa).mean(axis=1)
    table.thetas[s, a] = theta + alpha * grad
    return table.thetas[s, a].copy()


def quantile_loss(theta, targets, kappa=1.0):
    """``sum_i (1/N) sum_j huber_quantile_loss(targets_j - theta_i)``."""
    theta = np.asarray(theta, dtype=float)
    levels = quantile_levels(theta.size)
    u = np.asarray(targets, dtype=float)[None, :] - theta[:, None]
    return float((np.abs(levels[:, None] - (u < 0)) * huber_loss(u, kappa)).mean(axis=1).sum())


# --------------------------------------------------------------------------
# training


@dataclass
class AgentConfig:
    """Hyper-parameters of the tabular DLTV agent.

    ``target_period=None`` bootstraps from the live table; an integer keeps a
    frozen copy synced every ``target_period`` updates.
    """

    step_size: float = 0.1
    schedule: Schedule = field(default_factory=lambda: Schedule("decaying", 50.0))
    kappa: float = 1.0
    n_quantiles: int = 10
    init_value: float = 0.0
    init_spread: float = 0.0
    target_period: int = None
    greedy_target: bool = False
    selection: SelectionRule = None
    max_steps: int = 500
    name: str = "dltv"

    def __post_init__(self):
        check_positive(self.step_size, "step_size")
        check_positive(self.kappa, "kappa")
        check_even_n(self.n_quantiles, "n_quantiles")
        if self.selection is None:
            self.selection = SelectionRule("dltv", self.schedule)
        if self.target_period is not None and self.target_period < 1:
            raise ValueError("target_period must be a positive integer")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")


@dataclass(frozen=True)
class ExperimentRecord:
    run_id: int
    step: int
    agent: str
    action: int
    reward: float
    bonus: float
    cum_reward: float
    optimal: bool = None


def initial_table(mdp, config):
    n = config.n_quantiles
    if config.init_spread > 0:
        init = np.linspace(config.init_value - config.init_spread,
                           config.init_value + config.init_spread, n)
    else:
        init = np.full(n, float(config.init_value))
    return QuantileTable(np.broadcast_to(init, (mdp.n_states, mdp.n_actions, n)).copy())


def _behavior_action(table, s, rule, t, rng):
    if rule.kind == "dltv":
        return dltv_action(table, s, rule.schedule, t)
    if rule.kind == "epsilon_greedy":
        if rng.random() < rule.epsilon:
            return int(rng.integers(table.thetas.shape[1]))
        return greedy_action(table, s)
    if rule.kind == "var_greedy":
        return greedy_action(table, s, rule.alpha)
    if rule.kind == "naive_bonus":
        row = table.thetas[s]
        return int(first_argmax(mean(row) + schedule_value(rule.schedule, t) * np.sqrt(variance(row))))
    return greedy_action(table, s)


def train_episodes(mdp, config, n_episodes, rng, table=None, run_id=0, log=True):
    """Run ``n_episodes`` of interaction and learning.

    The behaviour policy is ``config.selection`` (DLTV by default, with no
    epsilon-greedy component).  The bootstrap action at the successor is the
    same bonus-augmented argmax unless ``config.greedy_target`` is set.  The
    bonus clock ``t`` counts environment steps from 1 across episodes.

    Returns ``(table, records)``; ``records`` is empty when ``log`` is false.
    """
    if n_episodes < 0:
        raise ValueError("n_episodes must be nonnegative")
    table = initial_table(mdp, config) if table is None else table
    target = table if config.target_period is None else table.copy()
    rule = config.selection
    records = []
    t = 0
    cum = 0.0
    for _ in range(n_episodes):
        s = mdp.reset(rng)
        for _ in range(config.max_steps):
            if mdp.is_terminal(s):
                break
            t += 1
            a = _behavior_action(table, s, rule, t, rng)
            s_next, r = mdp.step(s, a, rng)
            done = mdp.is_terminal(s_next)
            if done:
                targets = bellman_target(table, r, s_next, 0, mdp.gamma, terminal=True)
            else:
                if config.greedy_target:
                    a_star = greedy_action(target, s_next)
                else:
                    a_star = dltv_action(target, s_next, config.schedule, t)
                targets = bellman_target(target, r, s_next, a_star, mdp.gamma)
            quantile_update(table, s, a, targets, config.step_size, config.kappa)
            if config.target_period is not None and t % config.target_period == 0:
                target.thetas[...] = table.thetas
            if log:
                cum += r
                bonus = float(bonus_scores(table, s, config.schedule, t)[a] - mean(table.thetas[s, a])) \
                    if rule.kind == "dltv" else 0.0
                records.append(ExperimentRecord(run_id, t, config.name, a, r, bonus, cum))
            s = s_next
    return table, records


def rollout(mdp, table, rng, risk_alpha=None, max_steps=500):
    """One greedy evaluation episode; returns the list of ``(s, a, r, s_next)``."""
    path = []
    s = mdp.reset(rng)
    for _ in range(max_steps):
        if mdp.is_terminal(s):
            break
        a = greedy_action(table, s, risk_alpha)
        s_next, r = mdp.step(s, a, rng)
        path.append((s, a, r, s_next))
        s = s_next
    return path


class QuantileTDAgent(BaseEstimator):
    """Estimator wrapper around :func:`train_episodes`.

    ``fit(mdp)`` trains from scratch; ``predict(states)`` returns greedy
    actions, mean-greedy by default or VaR-greedy with ``risk_alpha``.
    """

    def __init__(self, n_episodes=500, step_size=0.1, c=50.0, schedule="decaying", kappa=1.0,
                 n_quantiles=10, init_value=0.0, init_spread=0.0, target_period=None,
                 greedy_target=False, selection="dltv", epsilon=None, max_steps=500,
                 random_state=None):
        self.n_episodes = n_episodes
        self.step_size = step_size
        self.c = c
        self.schedule = schedule
        self.kappa = kappa
        self.n_quantiles = n_quantiles
        self.init_value = init_value
        self.init_spread = init_spread
        self.target_period = target_period
        self.greedy_target = greedy_target
        self.selection = selection
        self.epsilon = epsilon
        self.max_steps = max_steps
        self.random_state = random_state

    def _config(self):
        schedule = Schedule(self.schedule, self.c)
        return AgentConfig(
            step_size=self.step_size, schedule=schedule, kappa=self.kappa,
            n_quantiles=self.n_quantiles, init_value=self.init_value,
            init_spread=self.init_spread, target_period=self.target_period,
            greedy_target=self.greedy_target,
            selection=SelectionRule(self.selection, schedule, self.epsilon),
            max_steps=self.max_steps)

    def fit(self, mdp, y=None):
        rng = np.random.default_rng(self.random_state)
        self.table_, _ = train_episodes(mdp, self._config(), self.n_episodes, rng, log=False)
        self.n_states_, self.n_actions_ = mdp.n_states, mdp.n_actions
        return self

    def q_values(self):
        check_is_fitted(self, "table_")
        return self.table_.q_values()

    def predict(self, states, risk_alpha=None):
        check_is_fitted(self, "table_")
        if risk_alpha is not None:
            check_level(risk_alpha, "risk_alpha")
        states = np.atleast_1d(np.asarray(states, dtype=np.int64))
        return np.array([greedy_action(self.table_, _check_sa(self.table_, s)[0], risk_alpha)
                         for s in states])


def evaluate_cliff_policy(mdp, table, risk_alpha=None, n_episodes=500, seed=0, max_steps=500):
    """Greedy evaluation on a :class:`GridWorld` with a cliff.

    Episode ``i`` draws from ``default_rng([seed, i])``, so two policies
    evaluated with the same ``seed`` share their random numbers.  The
    per-episode minimum distance to the cliff ignores the start and goal
    cells (both border the cliff by construction) and is 0 for an episode
    containing a fall.
    """
    falls = 0
    min_dist, returns, lengths = [], [], []
    start = mdp.state(*mdp.start_cell)
    for i in range(n_episodes):
        path = rollout(mdp, table, np.random.default_rng([seed, i]), risk_alpha, max_steps)
        fell = any(r == mdp.cliff_reward for _, _, r, _ in path)
        dists = [mdp.distance_to_cliff(s_next) for _, _, r, s_next in path
                 if r != mdp.cliff_reward and s_next != start and not mdp.is_terminal(s_next)]
        falls += fell
        min_dist.append(0.0 if fell or not dists else float(min(dists)))
        returns.append(sum(r for _, _, r, _ in path))
        lengths.append(len(path))
    return {
        "fall_rate": falls / n_episodes,
        "mean_min_distance": float(np.mean(min_dist)),
        "mean_return": float(np.mean(returns)),
        "mean_length": float(np.mean(lengths)),
    }
