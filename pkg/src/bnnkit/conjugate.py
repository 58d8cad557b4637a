"""Closed-form conjugate posteriors and matching sampler targets.

Update rules:

* Beta(a, b) prior, Bernoulli data with h successes and t failures
  -> Beta(a + h, b + t). With a = b = 1 this is the uniform-prior coin
  posterior ``(h+t+1)!/(h! t!) r^h (1-r)^t``.
* Dirichlet(alpha) prior, categorical counts c -> Dirichlet(alpha + c).
* Gamma(a, b) prior (shape, rate), ``E`` events over ``n`` intervals
  -> Gamma(a + E, b + n).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import autodiff as ad
from .errors import InvalidArgumentError
from .model_core import (
    Dataset,
    LogDensityModel,
    make_log_transform,
    make_logit_transform,
    make_stick_breaking_transform,
)


class ConjugateKind(enum.Enum):
    BETA_BERNOULLI = "beta_bernoulli"
    DIRICHLET_CATEGORICAL = "dirichlet_categorical"
    GAMMA_POISSON = "gamma_poisson"


@dataclass(frozen=True)
class ConjugatePosterior:
    kind: ConjugateKind
    params: tuple

    def __post_init__(self):
        p = tuple(float(x) for x in np.ravel(self.params))
        if not all(x > 0 for x in p):
            raise InvalidArgumentError(f"hyperparameters must be positive: {p}")
        object.__setattr__(self, "params", p)

    @property
    def _dist(self):
        if self.kind is ConjugateKind.BETA_BERNOULLI:
            return stats.beta(*self.params)
        if self.kind is ConjugateKind.GAMMA_POISSON:
            shape, rate = self.params
            return stats.gamma(shape, scale=1.0 / rate)
        return stats.dirichlet(np.array(self.params))

    def mean(self):
        if self.kind is ConjugateKind.DIRICHLET_CATEGORICAL:
            a = np.array(self.params)
            return a / a.sum()
        return float(self._dist.mean())

    def variance(self):
        if self.kind is ConjugateKind.DIRICHLET_CATEGORICAL:
            return self._dist.var()
        return float(self._dist.var())

    def logpdf(self, x):
        if self.kind is ConjugateKind.DIRICHLET_CATEGORICAL:
            x = np.asarray(x, dtype=float)
            if x.shape[-1] == len(self.params) - 1:
                x = np.append(x, 1.0 - x.sum())
            return float(self._dist.logpdf(x))
        return self._dist.logpdf(x)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        if self.kind is ConjugateKind.DIRICHLET_CATEGORICAL:
            raise InvalidArgumentError("no univariate CDF for a Dirichlet")
        return self._dist.cdf(x)

    def to_dict(self):
        out = {"kind": self.kind.value, "params": list(self.params)}
        if self.kind is ConjugateKind.GAMMA_POISSON:
            out["parameterization"] = "shape-rate"
        out["mean"] = self.mean()
        out["variance"] = self.variance()
        return out


def beta_bernoulli_posterior(alpha0: float, beta0: float, heads: int, tails: int) -> ConjugatePosterior:
    return ConjugatePosterior(ConjugateKind.BETA_BERNOULLI, (alpha0 + heads, beta0 + tails))


def dirichlet_categorical_posterior(alpha0, counts) -> ConjugatePosterior:
    alpha0 = np.asarray(alpha0, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if alpha0.shape != counts.shape:
        raise InvalidArgumentError("alpha0 and counts must have equal length")
    if np.any(alpha0 <= 0):
        raise InvalidArgumentError("alpha0 must be positive")
    return ConjugatePosterior(ConjugateKind.DIRICHLET_CATEGORICAL, tuple(alpha0 + counts))


def gamma_poisson_posterior(alpha0: float, beta0: float, total_events: int, n_intervals: int) -> ConjugatePosterior:
    return ConjugatePosterior(ConjugateKind.GAMMA_POISSON, (alpha0 + total_events, beta0 + n_intervals))


# sampler targets ---------------------------------------------------------


def _beta_bernoulli_model(a, b, heads, tails):
    ca, cb = a + heads - 1.0, b + tails - 1.0

    def log_joint(theta):
        p = theta[0]
        pv = float(ad.value(p))
        if not 0.0 < pv < 1.0:
            return -math.inf
        return ca * ad.log(p) + cb * ad.log(1.0 - p)

    return LogDensityModel(1, log_joint, make_logit_transform(1), "beta_bernoulli", ("p",))


def _gamma_poisson_model(a, b, events, intervals):
    shape, rate = a + events - 1.0, b + intervals

    def log_joint(theta):
        lam = theta[0]
        if not float(ad.value(lam)) > 0.0:
            return -math.inf
        return shape * ad.log(lam) - rate * lam

    return LogDensityModel(1, log_joint, make_log_transform(1), "gamma_poisson", ("lambda",))


def _dirichlet_model(alpha, counts):
    c = np.asarray(alpha, dtype=float) + np.asarray(counts, dtype=float) - 1.0
    k = len(c)

    def log_joint(theta):
        tv = ad.value(theta)
        last = 1.0 - tv.sum()
        if np.any(tv <= 0.0) or not last > 0.0:
            return -math.inf
        return ad.sum(c[:-1] * ad.log(theta)) + c[-1] * ad.log(1.0 - ad.sum(theta))

    names = tuple(f"p_{i}" for i in range(k - 1))
    return LogDensityModel(k - 1, log_joint, make_stick_breaking_transform(k), "dirichlet_categorical", names)


def beta_bernoulli_model(alpha0=1.0, beta0=1.0, heads=0, tails=0) -> LogDensityModel:
    """Unnormalized Beta-Bernoulli log joint in ``p``, logit-transformed."""
    return _beta_bernoulli_model(alpha0, beta0, heads, tails)


def gamma_poisson_model(alpha0=1.0, beta0=1.0, total_events=0, n_intervals=0) -> LogDensityModel:
    """Unnormalized Gamma-Poisson log joint in ``lambda``, log-transformed."""
    return _gamma_poisson_model(alpha0, beta0, total_events, n_intervals)


def dirichlet_categorical_model(alpha0, counts) -> LogDensityModel:
    """Unnormalized log joint over the first ``K-1`` category probabilities
    under a stick-breaking transform."""
    alpha0 = np.asarray(alpha0, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if alpha0.shape != counts.shape:
        raise InvalidArgumentError("alpha0 and counts must have equal length")
    return _dirichlet_model(alpha0, counts)


def as_log_density_model(kind, prior, data: Dataset | None = None) -> LogDensityModel:
    """Sampler target for ``kind`` with prior hyperparameters ``prior``.

    ``data`` carries the raw observations in its first feature column:
    0/1 outcomes (Bernoulli), per-interval event counts (Poisson), or
    category indices ``0..K-1`` (categorical). ``None`` means no data.
    """
    kind = ConjugateKind(kind)
    obs = np.asarray(data.features[:, 0]) if data is not None and len(data) else np.zeros(0)
    if kind is ConjugateKind.BETA_BERNOULLI:
        if not np.all(np.isin(obs, (0, 1))):
            raise InvalidArgumentError("Bernoulli observations must be 0 or 1")
        heads = int(obs.sum())
        return beta_bernoulli_model(prior[0], prior[1], heads, len(obs) - heads)
    if kind is ConjugateKind.GAMMA_POISSON:
        if np.any(obs < 0) or np.any(obs != np.round(obs)):
            raise InvalidArgumentError("Poisson observations must be non-negative integers")
        return gamma_poisson_model(prior[0], prior[1], int(obs.sum()), len(obs))
    if kind is ConjugateKind.DIRICHLET_CATEGORICAL:
        k = len(prior)
        if np.any((obs < 0) | (obs >= k) | (obs != np.round(obs))):
            raise InvalidArgumentError(f"category indices must lie in 0..{k - 1}")
        counts = np.bincount(obs.astype(int), minlength=k)
        return dirichlet_categorical_model(prior, counts)
    raise InvalidArgumentError(f"unsupported kind: {kind}")


def oracle_for(kind, prior, data: Dataset | None = None) -> ConjugatePosterior:
    """Closed-form posterior matching :func:`as_log_density_model`."""
    kind = ConjugateKind(kind)
    obs = np.asarray(data.features[:, 0]) if data is not None and len(data) else np.zeros(0)
    if kind is ConjugateKind.BETA_BERNOULLI:
        h = int(obs.sum())
        return beta_bernoulli_posterior(prior[0], prior[1], h, len(obs) - h)
    if kind is ConjugateKind.GAMMA_POISSON:
        return gamma_poisson_posterior(prior[0], prior[1], int(obs.sum()), len(obs))
    counts = np.bincount(obs.astype(int), minlength=len(prior))
    return dirichlet_categorical_posterior(prior, counts)
