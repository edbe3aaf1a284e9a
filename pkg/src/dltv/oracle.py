"""Brute-force references for tests and demos.

These deliberately avoid the estimation code paths: quantiles come from
sorting, the normal inverse CDF from a rational approximation polished by
Halley steps on ``math.erfc``, and action values from plain dynamic
programming or a linear solve.
"""

import math

import numpy as np

from ._validation import check_level, check_positive


def exact_quantile(sample, tau):
    """Left-continuous empirical quantile: smallest ``v`` with ``CDF(v) >= tau``."""
    tau = check_level(tau)
    values = np.sort(np.asarray(sample, dtype=float).ravel())
    if values.size == 0:
        raise ValueError("sample must be nonempty")
    if not np.all(np.isfinite(values)):
        raise ValueError("sample must be finite")
    n = values.size
    # k/n >= tau, guarded against tau*n landing a hair above an integer
    k = math.ceil(tau * n - 1e-9 * n)
    return float(values[max(k, 1) - 1])


def empirical_quantiles(sample, n):
    """:func:`exact_quantile` at every mid-level ``(2i - 1) / (2n)``."""
    return np.array([exact_quantile(sample, (2 * i - 1) / (2 * n)) for i in range(1, n + 1)])


# Acklam's coefficients for the inverse standard normal CDF.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def normal_cdf(x, mu=0.0, sigma=1.0):
    sigma = check_positive(sigma, "sigma")
    return 0.5 * math.erfc(-(x - mu) / (sigma * math.sqrt(2.0)))


def _acklam(p):
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if p > 1.0 - _P_LOW:
        return -_acklam(1.0 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
        (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)


def normal_inverse_cdf(tau, mu=0.0, sigma=1.0):
    """``mu + sigma * Phi^{-1}(tau)``.

    The rational approximation is good to about 1e-9 relative; two Halley
    steps bring it to float precision.
    """
    tau = check_level(tau)
    sigma = check_positive(sigma, "sigma")
    if tau > 0.5:
        return mu - sigma * normal_inverse_cdf(1.0 - tau)
    x = _acklam(tau)
    for _ in range(2):
        err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - tau
        u = err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)
    return mu + sigma * x


def lognormal_inverse_cdf(tau, mu=0.0, sigma=1.0):
    return math.exp(normal_inverse_cdf(tau, mu, sigma))


def _terminal_mask(mdp):
    mask = np.zeros(mdp.n_states, dtype=bool)
    mask[list(mdp.terminal)] = True
    return mask


def value_iteration(mdp, tol=1e-8, max_iter=1_000_000):
    """Optimal action values to within ``tol`` in max-norm.

    Iterates the Bellman optimality operator until successive iterates differ
    by less than ``tol * (1 - gamma) / gamma``.  Terminal states have value 0.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    P, R, gamma = mdp.transition, mdp.expected_reward, mdp.gamma
    terminal = _terminal_mask(mdp)
    Q = np.zeros_like(R)
    threshold = tol * (1.0 - gamma) / gamma if gamma > 0 else math.inf
    for _ in range(max_iter):
        V = np.where(terminal, 0.0, Q.max(axis=1))
        Q_new = R + gamma * P @ V
        if np.max(np.abs(Q_new - Q)) < threshold or gamma == 0:
            return Q_new
        Q = Q_new
    raise RuntimeError("value iteration did not converge")


def bellman_residual(mdp, Q):
    terminal = _terminal_mask(mdp)
    V = np.where(terminal, 0.0, Q.max(axis=1))
    return float(np.max(np.abs(mdp.expected_reward + mdp.gamma * mdp.transition @ V - Q)))


def policy_q_values(mdp, policy):
    """Exact ``Q^pi`` for a deterministic ``policy[s]`` by solving the linear system."""
    policy = np.asarray(policy, dtype=np.int64)
    S = mdp.n_states
    P, R = mdp.transition, mdp.expected_reward
    terminal = _terminal_mask(mdp)
    # V = r_pi + gamma * P_pi V, with terminal rows pinned to 0
    P_pi = P[np.arange(S), policy]
    r_pi = R[np.arange(S), policy]
    P_pi = np.where(terminal[:, None], 0.0, P_pi)
    r_pi = np.where(terminal, 0.0, r_pi)
    V = np.linalg.solve(np.eye(S) - mdp.gamma * P_pi, r_pi)
    V[terminal] = 0.0
    return R + mdp.gamma * P @ V
