"""Named model presets shared by the CLI and the experiment scripts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conjugate import (
    ConjugatePosterior,
    beta_bernoulli_model,
    beta_bernoulli_posterior,
    dirichlet_categorical_model,
    dirichlet_categorical_posterior,
    gamma_poisson_model,
    gamma_poisson_posterior,
)
from .errors import InvalidArgumentError
from .model_core import LogDensityModel, gaussian_model

PRESETS = ("beta-bernoulli", "gamma-poisson", "dirichlet", "gaussian-2d")


@dataclass
class Preset:
    model: LogDensityModel
    oracle: ConjugatePosterior | None = None
    true_mean: np.ndarray | None = None
    true_cov: np.ndarray | None = None

    def reference(self) -> dict:
        """Known posterior moments, for reporting next to estimates."""
        if self.oracle is not None:
            out = self.oracle.to_dict()
            out["mean"] = np.atleast_1d(self.oracle.mean())[: self.model.dim].tolist()
            out["variance"] = np.atleast_1d(self.oracle.variance())[: self.model.dim].tolist()
            return out
        return {"mean": self.true_mean.tolist(), "covariance": self.true_cov.tolist()}


def parse_floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise InvalidArgumentError(f"expected comma-separated numbers, got {text!r}") from None


def build_preset(name: str, *, alpha=1.0, beta=1.0, heads=0, tails=0, events=0, intervals=0,
                 concentration="1,1,1", counts="0,0,0", mean="1,-1", rho=0.9) -> Preset:
    if name == "beta-bernoulli":
        if heads < 0 or tails < 0:
            raise InvalidArgumentError("heads and tails must be non-negative")
        return Preset(beta_bernoulli_model(alpha, beta, heads, tails),
                      beta_bernoulli_posterior(alpha, beta, heads, tails))
    if name == "gamma-poisson":
        if events < 0 or intervals < 0:
            raise InvalidArgumentError("events and intervals must be non-negative")
        return Preset(gamma_poisson_model(alpha, beta, events, intervals),
                      gamma_poisson_posterior(alpha, beta, events, intervals))
    if name == "dirichlet":
        a, c = parse_floats(concentration), parse_floats(counts)
        if len(a) < 2:
            raise InvalidArgumentError("a Dirichlet needs at least two categories")
        return Preset(dirichlet_categorical_model(a, c), dirichlet_categorical_posterior(a, c))
    if name == "gaussian-2d":
        mu = np.array(parse_floats(mean))
        if mu.shape != (2,):
            raise InvalidArgumentError("gaussian-2d needs a 2-element mean")
        if not -1.0 < rho < 1.0:
            raise InvalidArgumentError("rho must lie in (-1, 1)")
        cov = np.array([[1.0, rho], [rho, 1.0]])
        return Preset(gaussian_model(mu, cov, "gaussian_2d"), true_mean=mu, true_cov=cov)
    raise InvalidArgumentError(f"unknown model preset {name!r}; choose from {', '.join(PRESETS)}")
