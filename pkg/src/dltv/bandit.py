"""Stateless multi-armed bandit testbeds.

Every arm turns one standard-normal draw ``z`` into a reward, which lets a
run pre-draw its noise once and replay it for every agent (common random
numbers) while :func:`pull` stays a plain single-sample call.

==========================  =========================================
kind                        reward for standard normal ``z``
==========================  =========================================
``normal``                  ``mu + sigma * z``
``lognormal_advantage``     ``mu + e**0.5 - exp(z)`` (left-skewed)
``lognormal_disadvantage``  ``mu + exp(z) - e**0.5`` (right-skewed)
``degenerate``              ``mu``
==========================  =========================================
"""

from dataclasses import dataclass
import math

import numpy as np

from ._validation import check_index, check_positive, first_argmax
from .exploration import schedule_value
from .quantile_core import mean, quantile_levels, truncated_variance_plus, var_alpha, variance

ARM_KINDS = ("normal", "lognormal_advantage", "lognormal_disadvantage", "degenerate")

#: Mean of LogNormal(0, 1).
LOGNORMAL_MEAN = math.exp(0.5)


@dataclass(frozen=True)
class ArmSpec:
    kind: str
    mu: float
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ARM_KINDS:
            raise ValueError(f"arm kind must be one of {ARM_KINDS}, got {self.kind!r}")
        if self.kind == "normal":
            check_positive(self.sigma, "sigma")

    def from_normal(self, z):
        """Map standard-normal draw(s) ``z`` to rewards of this arm."""
        z = np.asarray(z, dtype=float)
        if self.kind == "normal":
            return self.mu + self.sigma * z
        if self.kind == "lognormal_advantage":
            return self.mu + LOGNORMAL_MEAN - np.exp(z)
        if self.kind == "lognormal_disadvantage":
            return self.mu + np.exp(z) - LOGNORMAL_MEAN
        return np.full_like(z, self.mu)


@dataclass(frozen=True)
class BanditEnv:
    arms: tuple
    seed: int = None

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(self.arms))
        if not self.arms:
            raise ValueError("a bandit needs at least one arm")

    @property
    def n_arms(self):
        return len(self.arms)

    @property
    def means(self):
        """True expected rewards; every kind's shift is mean-neutral."""
        return np.array([arm.mu for arm in self.arms])

    @property
    def optimal_arm(self):
        return int(np.argmax(self.means))


def pull(env, arm, rng):
    """Draw one reward from ``arm``; the environment itself is unchanged."""
    arm = check_index(arm, env.n_arms, "arm")
    return float(env.arms[arm].from_normal(rng.standard_normal()))


def _draw_means(K, rng):
    if K < 2:
        raise ValueError(f"a testbed needs K >= 2 arms, got {K}")
    return rng.standard_normal(K)


def _rng_and_seed(rng):
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng), rng
    return rng, None


def make_counter_example(K=10, rng=None, sigma_best=1.0, sigma_other=5.0):
    """Normal arms; the best drawn mean gets ``sigma_best``, the rest ``sigma_other``."""
    rng, seed = _rng_and_seed(rng)
    mu = _draw_means(K, rng)
    best = int(np.argmax(mu))
    arms = [ArmSpec("normal", float(m), sigma_best if k == best else sigma_other)
            for k, m in enumerate(mu)]
    return BanditEnv(arms, seed)


def make_asymmetric_env(K=10, rng=None):
    """Best arm left-skewed, all others right-skewed, via LogNormal(0, 1) shifts."""
    rng, seed = _rng_and_seed(rng)
    mu = _draw_means(K, rng)
    best = int(np.argmax(mu))
    arms = [ArmSpec("lognormal_advantage" if k == best else "lognormal_disadvantage", float(m))
            for k, m in enumerate(mu)]
    return BanditEnv(arms, seed)


def make_symmetric_env(K=10, rng=None):
    """Unit-variance normal arms; same means as :func:`make_asymmetric_env` for the same seed."""
    rng, seed = _rng_and_seed(rng)
    mu = _draw_means(K, rng)
    return BanditEnv([ArmSpec("normal", float(m), 1.0) for m in mu], seed)


class _Sampler:
    def __init__(self, arm):
        self.arm = arm

    def __call__(self, rng, size=None):
        z = rng.standard_normal(size)
        out = self.arm.from_normal(z)
        return float(out) if size is None else out

    def __repr__(self):
        return f"{type(self).__name__}({self.arm!r})"


def make_figure1_target(kind, value=0.0, sigma=1.0):
    """Sampler ``f(rng, size=None)`` for the online-estimation demo.

    ``'degenerate'`` always returns ``value``; ``'stochastic'`` draws from
    ``Normal(value, sigma)``.
    """
    if kind == "degenerate":
        return _Sampler(ArmSpec("degenerate", float(value)))
    if kind == "stochastic":
        return _Sampler(ArmSpec("normal", float(value), sigma))
    raise ValueError(f"kind must be 'degenerate' or 'stochastic', got {kind!r}")


def run_bandit(envs, rule, normals, *, n_quantiles=10, step_size=0.1, step_t0=None,
               init_value=0.0, init_spread=0.0, schedule_clock="global", explore=None):
    """Run one quantile-estimating agent on a batch of independent bandits.

    Parameters
    ----------
    envs : sequence of BanditEnv
        One environment per run, all with the same number of arms.
    rule : SelectionRule
    normals : ndarray of shape (runs, horizon, arms)
        Standard-normal draws; arm ``k`` pulled at step ``t`` in run ``r``
        yields ``arms[k].from_normal(normals[r, t, k])``.
    init_value, init_spread : float
        Every arm starts at ``init_value``, or evenly spaced over
        ``init_value +/- init_spread`` when the spread is positive.
    step_size, step_t0 : float
        Pinball step size; if ``step_t0`` is given the step for an arm's
        ``n``-th pull is ``step_size * step_t0 / (step_t0 + n)``.
    schedule_clock : {'global', 'per_arm'}
        Whether the bonus multiplier is indexed by the environment step or by
        the arm's own pull count (an unpulled arm counts as ``t = 1``).
    explore : tuple of ndarray (uniforms, actions), optional
        Pre-drawn ``(runs, horizon)`` randomness for epsilon-greedy.

    Returns
    -------
    dict of (runs, horizon) arrays: ``action``, ``reward``, ``bonus``,
    ``cum_reward``, ``optimal``; plus the final ``thetas`` (runs, arms, N).
    """
    normals = np.asarray(normals, dtype=float)
    R, T, K = normals.shape
    if len(envs) != R or any(env.n_arms != K for env in envs):
        raise ValueError("normals must have shape (len(envs), horizon, n_arms)")
    if schedule_clock not in ("global", "per_arm"):
        raise ValueError(f"schedule_clock must be 'global' or 'per_arm', got {schedule_clock!r}")
    if rule.kind == "epsilon_greedy" and explore is None:
        raise ValueError("epsilon_greedy needs pre-drawn exploration randomness")

    levels = quantile_levels(n_quantiles)
    init = np.linspace(init_value - init_spread, init_value + init_spread, n_quantiles)
    thetas = np.broadcast_to(init, (R, K, n_quantiles)).copy()
    pulls = np.zeros((R, K), dtype=np.int64)
    optimal = np.array([env.optimal_arm for env in envs])
    rows = np.arange(R)

    # every arm's reward for every pre-drawn normal, (R, T, K)
    table = np.empty_like(normals)
    for r, env in enumerate(envs):
        for k, arm in enumerate(env.arms):
            table[r, :, k] = arm.from_normal(normals[r, :, k])

    spread = {"naive_bonus": variance, "dltv": truncated_variance_plus}.get(rule.kind)
    action = np.empty((R, T), dtype=np.int64)
    reward = np.empty((R, T))
    bonus_log = np.zeros((R, T))

    for step in range(T):
        t = step + 1
        if rule.kind == "var_greedy":
            scores = var_alpha(thetas, rule.alpha)
            bonus = None
        else:
            scores = mean(thetas)
            bonus = None
            if spread is not None:
                if schedule_clock == "global":
                    mult = schedule_value(rule.schedule, t)
                else:
                    mult = _per_arm_multiplier(rule.schedule, pulls)
                bonus = mult * np.sqrt(spread(thetas))
                scores = scores + bonus
        actions = first_argmax(scores, axis=1)
        if rule.kind == "epsilon_greedy":
            u, random_actions = explore
            actions = np.where(u[:, step] < rule.epsilon, random_actions[:, step], actions)

        rewards = table[rows, step, actions]
        if step_t0 is None:
            alpha = step_size
        else:
            alpha = (step_size * step_t0 / (step_t0 + pulls[rows, actions]))[:, None]
        chosen = thetas[rows, actions]
        thetas[rows, actions] = chosen + alpha * (levels - (rewards[:, None] < chosen))
        pulls[rows, actions] += 1

        action[:, step] = actions
        reward[:, step] = rewards
        if bonus is not None:
            bonus_log[:, step] = bonus[rows, actions]

    return {
        "action": action,
        "reward": reward,
        "bonus": bonus_log,
        "cum_reward": np.cumsum(reward, axis=1),
        "optimal": action == optimal[:, None],
        "thetas": thetas,
    }


def _per_arm_multiplier(schedule, pulls):
    flat = [schedule_value(schedule, max(int(n), 1)) for n in pulls.ravel()]
    return np.asarray(flat).reshape(pulls.shape)
