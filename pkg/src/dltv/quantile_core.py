"""Quantile representation of a return distribution and its statistics.

A distribution is stored as ``N`` quantile estimates ``theta_1..theta_N`` at
the fixed mid-levels ``(2i - 1) / (2N)``.  Every statistic below accepts
either a :class:`QuantileDistribution` or a raw array whose *last* axis holds
the quantiles, so the same code serves single distributions and batched
``(runs, arms, N)`` tables.

Indexing convention for the upper-half spread (:func:`truncated_variance_plus`):
1-based, anchored at the lower median ``theta_{N/2}`` and summing inclusively
over ``i = N/2 .. N`` (``N/2 + 1`` terms), normalised by ``1 / (2N)``.
"""

from dataclasses import dataclass, field
import math
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_thetas, check_even_n, check_level, check_positive


def quantile_levels(n):
    """Mid-levels ``tau_hat_i = (2i - 1) / (2n)`` for ``i = 1..n``."""
    n = check_even_n(n)
    return (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)


@dataclass
class QuantileDistribution:
    """``n`` quantile estimates, kept in index order.

    Estimates are not re-sorted: crossing can happen while learning and is
    not an error.  ``thetas`` may be updated in place by its owner.
    """

    thetas: np.ndarray

    def __post_init__(self):
        thetas = np.array(self.thetas, dtype=float)
        if thetas.ndim != 1:
            raise ValueError("thetas must be one-dimensional")
        check_even_n(thetas.size, "number of quantiles")
        if not np.all(np.isfinite(thetas)):
            raise ValueError("thetas must be finite")
        self.thetas = thetas

    @classmethod
    def constant(cls, n, value=0.0):
        return cls(np.full(check_even_n(n), float(value)))

    @classmethod
    def spread(cls, n, low, high):
        """Evenly spaced estimates over ``[low, high]``."""
        return cls(np.linspace(low, high, check_even_n(n)))

    @property
    def n(self):
        return self.thetas.size

    @property
    def levels(self):
        return quantile_levels(self.n)

    @property
    def is_monotone(self):
        return bool(np.all(np.diff(self.thetas) >= 0))

    def copy(self):
        return QuantileDistribution(self.thetas.copy())


# --------------------------------------------------------------------------
# losses


def check_function(u, tau):
    """Pinball loss ``tau*|u|`` for ``u >= 0`` and ``(1 - tau)*|u|`` otherwise."""
    tau = check_level(tau)
    u = np.asarray(u, dtype=float)
    out = np.where(u >= 0, tau * np.abs(u), (1.0 - tau) * np.abs(u))
    return out if out.ndim else float(out)


def huber_loss(x, kappa=1.0):
    """Quadratic for ``|x| <= kappa``, linear with slope ``kappa`` beyond."""
    kappa = check_positive(kappa, "kappa")
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    out = np.where(ax <= kappa, 0.5 * x * x, kappa * (ax - 0.5 * kappa))
    return out if out.ndim else float(out)


def huber_quantile_loss(u, tau, kappa=1.0):
    """``|tau - 1{u < 0}| * huber_loss(u, kappa)``."""
    tau = check_level(tau)
    u = np.asarray(u, dtype=float)
    out = np.abs(tau - (u < 0)) * huber_loss(u, kappa)
    return out if np.ndim(out) else float(out)


def huber_quantile_grad(u, tau, kappa=1.0):
    """Derivative of :func:`huber_quantile_loss` with respect to the residual ``u``.

    ``tau`` may be an array broadcasting against ``u``.  At ``u = 0`` the
    derivative is 0 from both sides.
    """
    kappa = check_positive(kappa, "kappa")
    u = np.asarray(u, dtype=float)
    return np.abs(tau - (u < 0)) * np.clip(u, -kappa, kappa)


# --------------------------------------------------------------------------
# online estimation


@dataclass
class OnlineEstimatorState:
    """Mutable state of a single-stream online quantile estimator."""

    dist: QuantileDistribution
    step_size: float
    updates_seen: int = 0
    levels: np.ndarray = field(default=None)

    def __post_init__(self):
        self.step_size = check_positive(self.step_size, "step_size")
        if self.levels is None:
            self.levels = quantile_levels(self.dist.n)
        self.levels = np.asarray(self.levels, dtype=float)
        if self.levels.shape != self.dist.thetas.shape:
            raise ValueError("levels and thetas must have the same length")
        if self.updates_seen < 0:
            raise ValueError("updates_seen must be nonnegative")


def pinball_step(thetas, sample, levels, step_size):
    """One subgradient step on the pinball loss of every quantile.

    ``theta_i += step_size * (tau_i - 1{sample < theta_i})``.  A sample equal
    to ``theta_i`` pushes it *up*.  Works on any array whose last axis holds
    the quantiles; ``sample`` and ``step_size`` broadcast against the leading
    axes.  Returns the new array.
    """
    sample = np.asarray(sample, dtype=float)[..., None]
    step_size = np.asarray(step_size, dtype=float)[..., None]
    return thetas + step_size * (levels - (sample < thetas))


def online_update(state, sample):
    """Advance ``state`` in place by one observed ``sample`` and return it."""
    sample = float(sample)
    if not math.isfinite(sample):
        raise ValueError(f"sample must be finite, got {sample!r}")
    state.dist.thetas = pinball_step(state.dist.thetas, sample, state.levels, state.step_size)
    state.updates_seen += 1
    return state


class OnlineQuantileEstimator(BaseEstimator):
    """Streaming estimate of ``n_quantiles`` quantiles of a scalar distribution.

    Parameters
    ----------
    n_quantiles : int, default=10
        Number of mid-level quantiles; must be even.
    learning_rate : {'constant', 'harmonic'}, default='constant'
        ``'constant'`` uses ``eta0`` for every update; ``'harmonic'`` uses
        ``eta0 * t0 / (t0 + t)`` with ``t`` the number of updates so far,
        which satisfies the Robbins-Monro conditions.
    eta0 : float, default=0.1
    t0 : float, default=100.0
    init_value : float, default=0.0
        Initial location of every estimate.
    init_spread : float, default=0.0
        If positive, initial estimates are evenly spaced over
        ``init_value +/- init_spread``.

    Attributes
    ----------
    quantiles_ : ndarray of shape (n_quantiles,)
    levels_ : ndarray of shape (n_quantiles,)
    n_updates_ : int
    """

    def __init__(self, n_quantiles=10, learning_rate="constant", eta0=0.1, t0=100.0,
                 init_value=0.0, init_spread=0.0):
        self.n_quantiles = n_quantiles
        self.learning_rate = learning_rate
        self.eta0 = eta0
        self.t0 = t0
        self.init_value = init_value
        self.init_spread = init_spread

    def _initialize(self):
        n = check_even_n(self.n_quantiles, "n_quantiles")
        if self.learning_rate not in ("constant", "harmonic"):
            raise ValueError(f"unknown learning_rate {self.learning_rate!r}")
        check_positive(self.eta0, "eta0")
        check_positive(self.t0, "t0")
        if self.init_spread > 0:
            init = QuantileDistribution.spread(
                n, self.init_value - self.init_spread, self.init_value + self.init_spread)
        else:
            init = QuantileDistribution.constant(n, self.init_value)
        self.quantiles_ = init.thetas
        self.levels_ = quantile_levels(n)
        self.n_updates_ = 0

    def _rate(self, t):
        if self.learning_rate == "constant":
            return self.eta0
        return self.eta0 * self.t0 / (self.t0 + t)

    def partial_fit(self, X, y=None):
        """Consume the samples in ``X`` (1-D, or a single column) in order."""
        X = _as_samples(X)
        if not hasattr(self, "quantiles_"):
            self._initialize()
        thetas = self.quantiles_
        t = self.n_updates_
        for x in X:
            thetas = thetas + self._rate(t) * (self.levels_ - (x < thetas))
            t += 1
        self.quantiles_ = thetas
        self.n_updates_ = t
        return self

    def fit(self, X, y=None):
        self._initialize()
        return self.partial_fit(X)

    @property
    def distribution_(self):
        check_is_fitted(self, "quantiles_")
        return QuantileDistribution(self.quantiles_.copy())

    def score(self, X, y=None):
        """Negative mean pinball loss of the stored quantiles on ``X``."""
        check_is_fitted(self, "quantiles_")
        X = _as_samples(X)
        u = X[:, None] - self.quantiles_[None, :]
        loss = u * (self.levels_ - (u < 0))
        return -float(loss.sum(axis=1).mean())


def _as_samples(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 1:
        raise ValueError(f"expected a 1-D array of samples, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("samples must be finite")
    return X


# --------------------------------------------------------------------------
# statistics


class VarianceDecomposition(NamedTuple):
    """Full variance and its two half-sums, each weighted ``2/N``."""

    sigma2: float
    sigma2_rt: float
    sigma2_lt: float

    @property
    def additive(self):
        """Whether ``sigma2 == sigma2_rt + sigma2_lt`` holds for this input.

        With ``2/N`` weights on each half the half-sums average to ``sigma2``,
        so this is true only for the degenerate distribution.
        """
        return bool(np.allclose(self.sigma2, self.sigma2_rt + self.sigma2_lt))


def mean(dist):
    m = as_thetas(dist).mean(axis=-1)
    return m if np.ndim(m) else float(m)


def variance(dist):
    thetas = as_thetas(dist)
    v = ((thetas - thetas.mean(axis=-1, keepdims=True)) ** 2).mean(axis=-1)
    return v if np.ndim(v) else float(v)


def variance_decomposition(dist):
    thetas = as_thetas(dist)
    n = thetas.shape[-1]
    sq = (thetas.mean(axis=-1, keepdims=True) - thetas) ** 2
    sigma2 = sq.sum(axis=-1) / n
    rt = 2.0 / n * sq[..., : n // 2].sum(axis=-1)
    lt = 2.0 / n * sq[..., n // 2:].sum(axis=-1)
    if sigma2.ndim == 0:
        return VarianceDecomposition(float(sigma2), float(rt), float(lt))
    return VarianceDecomposition(sigma2, rt, lt)


def truncated_variance_plus(dist):
    """Spread of the upper-half estimates around the lower median estimate."""
    thetas = as_thetas(dist)
    n = thetas.shape[-1]
    anchor = thetas[..., n // 2 - 1: n // 2]
    v = ((anchor - thetas[..., n // 2 - 1:]) ** 2).sum(axis=-1) / (2.0 * n)
    return v if np.ndim(v) else float(v)


def var_level_index(n, alpha):
    """0-based index of the level nearest ``1 - alpha``, ties toward the lower index."""
    alpha = check_level(alpha, "alpha")
    dist = np.abs(quantile_levels(n) - (1.0 - alpha))
    return int(np.argmax(dist <= dist.min() + 1e-12))


def var_alpha(dist, alpha):
    """Value-at-Risk: the stored estimate whose level is nearest ``1 - alpha``."""
    thetas = as_thetas(dist)
    v = thetas[..., var_level_index(thetas.shape[-1], alpha)]
    return v if np.ndim(v) else float(v)
