"""Bonus schedules and action-selection rules over quantile distributions.

All selectors break ties toward the lowest index.  Bonuses are on the
standard-deviation scale: ``c * sqrt(variance)`` for the naive rule and
``c_t * sqrt(sigma2_plus)`` for DLTV.
"""

from dataclasses import dataclass
import math

import numpy as np

from ._validation import check_level, check_positive, check_probability, first_argmax
from .quantile_core import mean, truncated_variance_plus, var_alpha, variance

SCHEDULE_KINDS = ("constant", "decaying")
RULE_KINDS = ("mean_greedy", "naive_bonus", "dltv", "epsilon_greedy", "var_greedy")


@dataclass(frozen=True)
class Schedule:
    """Bonus multiplier: constant ``c`` or ``c * sqrt(log t / t)``."""

    kind: str = "decaying"
    c: float = 50.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"schedule kind must be one of {SCHEDULE_KINDS}, got {self.kind!r}")
        check_positive(self.c, "c")

    def __call__(self, t):
        return schedule_value(self, t)


def schedule_value(schedule, t):
    """Multiplier at step ``t >= 1``; the decaying schedule is 0 at ``t = 1``."""
    if t < 1:
        raise ValueError(f"schedule step must be >= 1, got {t}")
    if schedule.kind == "constant":
        return float(schedule.c)
    return schedule.c * math.sqrt(math.log(t) / t)


@dataclass(frozen=True)
class SelectionRule:
    kind: str = "dltv"
    schedule: Schedule = None
    epsilon: float = None
    alpha: float = None

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"selection kind must be one of {RULE_KINDS}, got {self.kind!r}")
        if self.kind in ("dltv", "naive_bonus") and self.schedule is None:
            raise ValueError(f"{self.kind} selection requires a schedule")
        if self.kind == "epsilon_greedy":
            if self.epsilon is None:
                raise ValueError("epsilon_greedy selection requires epsilon")
            check_probability(self.epsilon, "epsilon")
        if self.kind == "var_greedy":
            if self.alpha is None:
                raise ValueError("var_greedy selection requires alpha")
            check_level(self.alpha, "alpha")


def _stack(dists):
    if len(dists) == 0:
        raise ValueError("need at least one distribution to select from")
    arrays = [np.asarray(getattr(d, "thetas", d), dtype=float) for d in dists]
    if len({a.shape for a in arrays}) != 1:
        raise ValueError("all distributions must have the same number of quantiles")
    return np.stack(arrays)


def bonus_terms(thetas, rule, t):
    """Per-action bonus added to the mean by ``rule`` at step ``t``.

    ``thetas`` has shape ``(..., actions, N)``; rules without a bonus give zeros.
    """
    if rule.kind == "naive_bonus":
        return schedule_value(rule.schedule, t) * np.sqrt(variance(thetas))
    if rule.kind == "dltv":
        return schedule_value(rule.schedule, t) * np.sqrt(truncated_variance_plus(thetas))
    return np.zeros(np.shape(thetas)[:-1])


def action_scores(thetas, rule, t):
    """Scores that the deterministic part of ``rule`` maximises."""
    if rule.kind == "var_greedy":
        return var_alpha(thetas, rule.alpha)
    return mean(thetas) + bonus_terms(thetas, rule, t)


def select_naive(dists, c):
    """``argmax_k mean_k + c * sigma_k`` with the full quantile variance."""
    thetas = _stack(dists)
    return int(first_argmax(mean(thetas) + c * np.sqrt(variance(thetas))))


def select_dltv(dists, schedule, t):
    """``argmax_k mean_k + c_t * sqrt(sigma2_plus_k)``."""
    thetas = _stack(dists)
    bonus = schedule_value(schedule, t) * np.sqrt(truncated_variance_plus(thetas))
    return int(first_argmax(mean(thetas) + bonus))


def select_var_greedy(dists, alpha):
    """Pick the action with the highest Value-at-Risk at level ``alpha``."""
    check_level(alpha, "alpha")
    return int(first_argmax(var_alpha(_stack(dists), alpha)))


def select_mean_greedy(dists):
    return int(first_argmax(mean(_stack(dists))))


def select_epsilon_greedy(dists, epsilon, rng):
    epsilon = check_probability(epsilon, "epsilon")
    thetas = _stack(dists)
    if rng.random() < epsilon:
        return int(rng.integers(len(thetas)))
    return int(first_argmax(mean(thetas)))


def select_action(dists, rule, t, rng=None):
    """Dispatch on ``rule.kind``; ``rng`` is only consulted by epsilon-greedy."""
    if rule.kind == "epsilon_greedy":
        if rng is None:
            raise ValueError("epsilon_greedy selection needs an rng")
        return select_epsilon_greedy(dists, rule.epsilon, rng)
    return int(first_argmax(action_scores(_stack(dists), rule, t)))
