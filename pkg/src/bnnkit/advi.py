"""Automatic differentiation variational inference with Gaussian families.

The variational family lives in unconstrained coordinates,
``q(zeta) = N(mu, L L^T)`` with ``L`` lower triangular (diagonal for the
mean-field family). Draws are produced by elliptical standardization in the
generative direction, ``zeta = mu + L eta`` with ``eta ~ N(0, I)``, so the
ELBO

    E_q[log p(x, T^-1(zeta)) + log|det J_{T^-1}(zeta)|] + H[q]

becomes an expectation over a fixed standard normal and its gradients with
respect to ``mu`` and ``L`` can be estimated by Monte Carlo:

    grad_mu = E[g(zeta)]
    grad_L  = E[g(zeta) eta^T] + (L^-1)^T        (lower triangle only)

where ``g`` is the gradient of the transformed log density. The entropy of
a Gaussian is known in closed form, so it enters exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AdviDivergenceError, DegenerateFamilyError, EstimationError, InvalidArgumentError
from .gradients import value_and_grad
from .model_core import LogDensityModel, transformed_log_density

LOG_2PI = math.log(2.0 * math.pi)


class Family(enum.Enum):
    MEAN_FIELD = "meanfield"
    FULL_RANK = "fullrank"


@dataclass(frozen=True)
class VariationalState:
    """Gaussian variational parameters. Diagonal entries of ``l_factor`` may be
    negative; the covariance ``L L^T`` is positive semidefinite regardless."""

    mu: np.ndarray
    l_factor: np.ndarray
    family: Family = Family.FULL_RANK

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        L = np.array(self.l_factor, dtype=float).reshape(len(mu), len(mu))
        if np.any(np.triu(L, 1) != 0):
            raise InvalidArgumentError("l_factor must be lower triangular")
        family = Family(self.family)
        if family is Family.MEAN_FIELD and np.any(np.tril(L, -1) != 0):
            raise InvalidArgumentError("mean-field l_factor must be diagonal")
        mu.setflags(write=False)
        L.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "l_factor", L)
        object.__setattr__(self, "family", family)

    @classmethod
    def initial(cls, dim: int, family=Family.FULL_RANK, scale: float = 0.1):
        return cls(np.zeros(dim), scale * np.eye(dim), family)

    @property
    def dim(self):
        return len(self.mu)

    @property
    def covariance(self):
        return self.l_factor @ self.l_factor.T

    def to_dict(self):
        rows = np.tril_indices(self.dim)
        return {
            "family": self.family.value,
            "mu": self.mu.tolist(),
            "l_factor": self.l_factor[rows].tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        mu = np.asarray(d["mu"], dtype=float)
        L = np.zeros((len(mu), len(mu)))
        L[np.tril_indices(len(mu))] = d["l_factor"]
        return cls(mu, L, Family(d["family"]))


@dataclass(frozen=True)
class AdviConfig:
    """Stochastic-ascent settings.

    The step at iteration ``t`` (from 0) is ``base_step / (1 + t)**decay``.
    With ``adaptive`` the step is further divided elementwise by
    ``tau + sqrt(s_t)``, where ``s_t`` is an exponential moving average (weight
    ``ema``) of squared gradients; the decay term keeps the Robbins-Monro
    conditions either way.
    """

    n_mc_samples: int = 10
    base_step: float = 0.1
    decay: float = 0.7
    adaptive: bool = False
    tau: float = 1.0
    ema: float = 0.1
    n_iterations: int = 5000
    elbo_check_every: int = 100
    n_elbo_samples: int = 100
    entropy: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_mc_samples < 1:
            raise InvalidArgumentError("n_mc_samples must be >= 1")
        if not self.base_step > 0:
            raise InvalidArgumentError("base_step must be positive")
        if not 0.5 < self.decay <= 1.0:
            raise InvalidArgumentError("decay must lie in (0.5, 1] for Robbins-Monro steps")
        if self.n_iterations < 0 or self.elbo_check_every < 1:
            raise InvalidArgumentError("bad iteration counts")

    def step(self, t: int) -> float:
        return self.base_step / (1.0 + t) ** self.decay


@dataclass
class ElboGradient:
    grad_mu: np.ndarray
    grad_l: np.ndarray


@dataclass
class AdviResult:
    state: VariationalState
    elbo_trace: np.ndarray  # columns: iteration, elbo
    info: dict = field(default_factory=dict)


def sample_standardized(state: VariationalState, rng, n: int | None = None, eta=None):
    """Draw ``eta ~ N(0, I)`` and return ``(eta, mu + L eta)``.

    With ``n`` given, both outputs are ``(n, K)`` matrices. A pre-drawn ``eta``
    can be passed to reuse common random numbers.
    """
    if eta is None:
        eta = rng.standard_normal(state.dim if n is None else (n, state.dim))
    eta = np.asarray(eta, dtype=float)
    zeta = state.mu + eta @ state.l_factor.T
    return eta, zeta


def gaussian_entropy(state: VariationalState) -> float:
    d = np.abs(np.diag(state.l_factor))
    if np.any(d == 0):
        raise DegenerateFamilyError("zero on the diagonal of l_factor")
    return 0.5 * state.dim * (1.0 + LOG_2PI) + float(np.sum(np.log(d)))


def elbo_estimate(model: LogDensityModel, state: VariationalState, n_mc: int, rng=None, eta=None, entropy=True) -> float:
    """Monte Carlo expected log density plus exact entropy.

    Draws with non-finite density are dropped; if none is finite an
    :class:`EstimationError` is raised.
    """
    if eta is None and n_mc < 1:
        raise InvalidArgumentError("n_mc must be >= 1")
    eta, zeta = sample_standardized(state, rng, n_mc, eta)
    with np.errstate(all="ignore"):
        lp = np.array([transformed_log_density(model, z) for z in np.atleast_2d(zeta)])
    ok = np.isfinite(lp)
    if not ok.any():
        raise EstimationError("every Monte Carlo draw had non-finite log density")
    return float(lp[ok].mean()) + (gaussian_entropy(state) if entropy else 0.0)


def elbo_gradients(model: LogDensityModel, state: VariationalState, n_mc: int, rng=None, eta=None, entropy=True) -> ElboGradient:
    """Reparameterization estimates of the ELBO gradient in ``mu`` and ``L``."""
    L = state.l_factor
    diag = np.diag(L)
    if np.any(diag == 0):
        raise DegenerateFamilyError("zero on the diagonal of l_factor")
    eta, zeta = sample_standardized(state, rng, n_mc, eta)
    eta, zeta = np.atleast_2d(eta), np.atleast_2d(zeta)
    grads = []
    etas = []
    for e, z in zip(eta, zeta):
        lp, g = value_and_grad(model, z)
        if math.isfinite(lp) and np.all(np.isfinite(g)):
            grads.append(g)
            etas.append(e)
    if not grads:
        nan = np.full(state.dim, math.nan)
        return ElboGradient(nan, np.diag(nan))
    G = np.array(grads)
    E = np.array(etas)
    grad_mu = G.mean(axis=0)
    if state.family is Family.MEAN_FIELD:
        grad_l = np.diag((G * E).mean(axis=0))
    else:
        grad_l = np.tril(G.T @ E / len(G))
    if entropy:
        # lower triangle of (L^-1)^T is its diagonal, 1 / L_kk
        grad_l = grad_l + np.diag(1.0 / diag)
    return ElboGradient(grad_mu, grad_l)


def run_advi(model: LogDensityModel, family=Family.FULL_RANK, cfg: AdviConfig = AdviConfig(), init: VariationalState | None = None) -> AdviResult:
    """Maximize the ELBO by stochastic gradient ascent for ``cfg.n_iterations``.

    Fresh standard-normal draws are used at every step. The ELBO is re-estimated
    every ``cfg.elbo_check_every`` iterations (and after the last one) into the
    returned trace. A NaN ELBO or gradient raises :class:`AdviDivergenceError`
    carrying the last finite state.
    """
    family = Family(family)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
    elbo_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
    state = init if init is not None else VariationalState.initial(model.dim, family)
    if state.family is not family:
        state = VariationalState(state.mu, np.diag(np.diag(state.l_factor)) if family is Family.MEAN_FIELD else state.l_factor, family)
    mu = state.mu.copy()
    L = state.l_factor.copy()
    mask = np.eye(model.dim) if family is Family.MEAN_FIELD else np.tril(np.ones((model.dim, model.dim)))
    s_mu = s_l = None
    trace = []
    last_good = state

    def check(it, st):
        try:
            value = elbo_estimate(model, st, cfg.n_elbo_samples, elbo_rng, entropy=cfg.entropy)
        except (EstimationError, DegenerateFamilyError) as exc:
            value = math.nan
            reason = str(exc)
        else:
            reason = "ELBO estimate is NaN"
        if math.isnan(value):
            raise AdviDivergenceError(f"iteration {it}: {reason}", last_good, np.array(trace).reshape(-1, 2), it)
        trace.append((it, value))

    for t in range(cfg.n_iterations):
        current = VariationalState(mu, L, family)
        if t % cfg.elbo_check_every == 0:
            check(t, current)
            last_good = current
        try:
            g = elbo_gradients(model, current, cfg.n_mc_samples, rng, entropy=cfg.entropy)
        except DegenerateFamilyError as exc:
            raise AdviDivergenceError(f"iteration {t}: {exc}", last_good, np.array(trace).reshape(-1, 2), t) from None
        if not (np.all(np.isfinite(g.grad_mu)) and np.all(np.isfinite(g.grad_l))):
            raise AdviDivergenceError(
                f"iteration {t}: non-finite ELBO gradient", last_good, np.array(trace).reshape(-1, 2), t
            )
        step = cfg.step(t)
        if cfg.adaptive:
            if s_mu is None:
                s_mu, s_l = g.grad_mu**2, g.grad_l**2
            else:
                s_mu = cfg.ema * g.grad_mu**2 + (1 - cfg.ema) * s_mu
                s_l = cfg.ema * g.grad_l**2 + (1 - cfg.ema) * s_l
            mu = mu + step * g.grad_mu / (cfg.tau + np.sqrt(s_mu))
            L = L + mask * (step * g.grad_l / (cfg.tau + np.sqrt(s_l)))
        else:
            mu = mu + step * g.grad_mu
            L = L + mask * (step * g.grad_l)
        last_good = current
    final = VariationalState(mu, L, family)
    if cfg.n_iterations > 0:
        check(cfg.n_iterations, final)
    return AdviResult(final, np.array(trace, dtype=float).reshape(-1, 2), {"family": family.value, "iterations": cfg.n_iterations})


def with_seed(cfg: AdviConfig, seed: int) -> AdviConfig:
    return replace(cfg, seed=seed)
