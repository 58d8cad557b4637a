"""Post-inference checks: HPD intervals, posterior predictive checks,
confusion matrices and chain statistics."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InsufficientSampleError, InvalidArgumentError
from .io import write_csv

MIN_HPD_DRAWS = 10
MIN_PPC_DRAWS = 100


@dataclass(frozen=True)
class HpdInterval:
    low: float
    high: float
    mass: float

    @property
    def width(self):
        return self.high - self.low


def hpd(draws, mass: float = 0.9) -> HpdInterval:
    """Shortest window of ``ceil(mass * n)`` sorted draws.

    Assumes a unimodal distribution; for multimodal draws the result is the
    shortest single interval, not a union. Ties go to the lowest start.
    """
    x = np.sort(np.asarray(draws, dtype=float).reshape(-1))
    n = len(x)
    if n < MIN_HPD_DRAWS:
        raise InsufficientSampleError(f"need at least {MIN_HPD_DRAWS} draws, got {n}")
    if not 0 < mass < 1:
        raise InvalidArgumentError("mass must lie in (0, 1)")
    m = min(n, math.ceil(mass * n))
    widths = x[m - 1:] - x[: n - m + 1]
    i = int(np.argmin(widths))
    return HpdInterval(float(x[i]), float(x[i + m - 1]), mass)


# posterior predictive checks ---------------------------------------------


class Statistic(enum.Enum):
    MEAN = "mean"
    VARIANCE = "variance"

    def __call__(self, data):
        data = np.asarray(data, dtype=float)
        return float(data.mean()) if self is Statistic.MEAN else float(data.var())


@dataclass(frozen=True)
class PpcResult:
    observed_stat: float
    replicated_quantile: float
    replicated_stats: np.ndarray

    def to_dict(self):
        return {
            "observed_stat": self.observed_stat,
            "replicated_quantile": self.replicated_quantile,
            "n_replications": len(self.replicated_stats),
        }


def posterior_predictive_check(
    replicate: Callable, draws, observed, statistic=Statistic.MEAN, rng=None
) -> PpcResult:
    """Locate the observed statistic within statistics of replicated data.

    ``replicate(draw, rng)`` returns one simulated dataset for a posterior
    draw. The quantile is ``P(T_rep < T_obs) + P(T_rep == T_obs) / 2``, so
    discrete statistics are not biased by ties. Values near 0 or 1 flag misfit.
    """
    draws = np.asarray(draws)
    if len(draws) < MIN_PPC_DRAWS:
        raise InsufficientSampleError(f"need at least {MIN_PPC_DRAWS} posterior draws, got {len(draws)}")
    statistic = Statistic(statistic)
    rng = rng if rng is not None else np.random.default_rng(0)
    obs = np.asarray(observed.features[:, 0] if hasattr(observed, "features") else observed, dtype=float)
    t_obs = statistic(obs)
    t_rep = np.array([statistic(replicate(d, rng)) for d in draws])
    q = float(np.mean(t_rep < t_obs) + 0.5 * np.mean(t_rep == t_obs))
    return PpcResult(t_obs, q, t_rep)


# classification ------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self):
        return (self.tp + self.tn) / self.total if self.total else math.nan

    @property
    def fpr(self):
        neg = self.fp + self.tn
        return self.fp / neg if neg else 0.0

    @property
    def fnr(self):
        pos = self.fn + self.tp
        return self.fn / pos if pos else 0.0

    def to_dict(self):
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "total": self.total, "accuracy": self.accuracy, "fpr": self.fpr, "fnr": self.fnr,
        }

    def to_csv(self, path):
        """2x2 table, rows = actual label, columns = predicted label."""
        write_csv(path, ["actual", "predicted_0", "predicted_1"],
                  [[0, self.tn, self.fp], [1, self.fn, self.tp]])


def confusion(predictions, labels, threshold: float = 0.5) -> ConfusionMatrix:
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(labels).astype(int)
    if p.shape != y.shape:
        raise InvalidArgumentError("predictions and labels must have equal length")
    yhat = p > threshold
    pos = y == 1
    return ConfusionMatrix(
        tp=int(np.sum(yhat & pos)),
        fp=int(np.sum(yhat & ~pos)),
        tn=int(np.sum(~yhat & ~pos)),
        fn=int(np.sum(~yhat & pos)),
    )


# chain health ---------------------------------------------------------------


def autocorrelation(x):
    x = np.asarray(x, dtype=float)
    n = len(x)
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] <= 0:
        return np.zeros(n)
    return acov / acov[0]


def effective_sample_size(x) -> float:
    """Geyer's initial monotone positive sequence estimator.

    A chain with zero variance returns 1.0 as a sentinel.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4 or np.ptp(x) == 0:
        return 1.0
    rho = autocorrelation(x)
    n_pairs = n // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    total = 0.0
    prev = math.inf
    for p in pairs:
        if p <= 0:
            break
        p = min(p, prev)
        total += p
        prev = p
    tau = max(-1.0 + 2.0 * total, 1.0 / math.log10(max(n, 10)))
    return n / tau


def chain_stats(samples) -> dict:
    """Acceptance, divergences, per-dimension moments and ESS (constrained space).

    Multi-chain sets are split by ``chain`` for ESS and the per-chain values
    summed.
    """
    n = len(samples)
    if n < MIN_PPC_DRAWS:
        raise InsufficientSampleError(f"need at least {MIN_PPC_DRAWS} draws, got {n}")
    x = samples.constrained_draws
    ess = np.zeros(x.shape[1])
    for c in np.unique(samples.chain):
        sel = samples.chain == c
        ess += [effective_sample_size(x[sel, j]) for j in range(x.shape[1])]
    return {
        "n_draws": n,
        "acceptance_rate": float(np.sum(samples.accepted)) / n,
        "mean_accept_prob": float(np.mean(samples.accept_prob)),
        "divergence_count": int(np.sum(samples.divergent)),
        "mean": x.mean(axis=0),
        "std": x.std(axis=0),
        "effective_sample_size": ess,
    }


def summarize(samples, mass: float = 0.9) -> dict:
    """JSON-ready summary: chain_stats plus per-parameter HPD bounds."""
    stats = chain_stats(samples)
    x = samples.constrained_draws
    params = {}
    for j, name in enumerate(samples.param_names):
        iv = hpd(x[:, j], mass)
        params[name] = {
            "mean": float(stats["mean"][j]),
            "std": float(stats["std"][j]),
            "hpd_low": iv.low,
            "hpd_high": iv.high,
            "ess": float(stats["effective_sample_size"][j]),
        }
    return {
        "n_draws": stats["n_draws"],
        "acceptance_rate": stats["acceptance_rate"],
        "mean_accept_prob": stats["mean_accept_prob"],
        "divergence_count": stats["divergence_count"],
        "hpd_mass": mass,
        "params": params,
        "sampler": samples.info.get("sampler"),
        "step_size": samples.info.get("step_size"),
    }
