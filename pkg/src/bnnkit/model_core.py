"""Target densities, coordinate transforms and datasets.

A :class:`LogDensityModel` carries the constrained-space log joint
``log p(x, theta)`` with the data closed over, plus a :class:`Transform` to
unconstrained coordinates ``zeta``. Samplers and ADVI only ever see
:func:`transformed_log_density`, which adds the log-Jacobian of the inverse
transform.

Everything is kept in log space. Out-of-support points evaluate to ``-inf``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from . import autodiff as ad
from .errors import InvalidArgumentError


class Space(enum.Enum):
    CONSTRAINED = "constrained"
    UNCONSTRAINED = "unconstrained"


@dataclass(frozen=True)
class ParamPoint:
    values: np.ndarray
    space: Space = Space.UNCONSTRAINED

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError(f"non-finite parameter values: {v}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class Transform:
    """Bijection between constrained ``theta`` and unconstrained ``zeta``.

    ``inverse`` and ``log_abs_det_jacobian_inverse`` must be written with
    :mod:`bnnkit.autodiff` primitives so gradients flow through them.
    """

    name: str
    dim: int
    forward: Callable
    inverse: Callable
    log_abs_det_jacobian_inverse: Callable


def identity_transform(dim: int) -> Transform:
    return Transform(
        name="identity",
        dim=dim,
        forward=lambda theta: np.array(theta, dtype=float),
        inverse=lambda zeta: zeta,
        log_abs_det_jacobian_inverse=lambda zeta: 0.0,
    )


def make_log_transform(dim: int) -> Transform:
    """Elementwise ``theta = exp(zeta)`` for positive parameters."""
    if dim < 1:
        raise InvalidArgumentError("dim must be >= 1")
    return Transform(
        name="log",
        dim=dim,
        forward=lambda theta: np.log(np.asarray(theta, dtype=float)),
        inverse=ad.exp,
        log_abs_det_jacobian_inverse=ad.sum,
    )


def make_logit_transform(dim: int) -> Transform:
    """Elementwise log-odds for parameters in (0, 1)."""
    if dim < 1:
        raise InvalidArgumentError("dim must be >= 1")

    def forward(theta):
        theta = np.asarray(theta, dtype=float)
        return np.log(theta) - np.log1p(-theta)

    return Transform(
        name="logit",
        dim=dim,
        forward=forward,
        inverse=ad.logistic,
        log_abs_det_jacobian_inverse=lambda z: ad.sum(ad.log_logistic(z) + ad.log_logistic(-z)),
    )


def make_stick_breaking_transform(k: int) -> Transform:
    """Map ``R^(k-1)`` onto the first ``k-1`` coordinates of the open simplex.

    Stick fractions ``v_j = logistic(zeta_j)`` give
    ``p_j = v_j * prod_{i<j} (1 - v_i)``; the last probability is implicit.
    The map is triangular so its log-Jacobian is a sum of diagonal terms.
    """
    if k < 2:
        raise InvalidArgumentError("need at least two categories")

    def forward(p):
        p = np.asarray(p, dtype=float)
        remaining = 1.0 - np.concatenate([[0.0], np.cumsum(p)[:-1]])
        v = p / remaining
        return np.log(v) - np.log1p(-v)

    def log_rest(z):
        # log prod_{i<j} (1 - v_i), exclusive cumulative sum
        log1m = ad.log_logistic(-z)
        return ad.cumsum(log1m) - log1m

    def inverse(z):
        return ad.exp(ad.log_logistic(z) + log_rest(z))

    def log_det(z):
        return ad.sum(ad.log_logistic(z) + ad.log_logistic(-z) + log_rest(z))

    return Transform("stick_breaking", k - 1, forward, inverse, log_det)


@dataclass(frozen=True)
class LogDensityModel:
    """Unnormalized log joint over ``dim`` parameters with its transform.

    Immutable after construction; safe to share across chains.
    """

    dim: int
    log_joint: Callable
    transform: Transform
    name: str = "model"
    param_names: tuple = ()

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidArgumentError("model dim must be >= 1")
        if self.transform.dim != self.dim:
            raise InvalidArgumentError(
                f"transform dim {self.transform.dim} != model dim {self.dim}"
            )
        if not self.param_names:
            object.__setattr__(
                self, "param_names", tuple(f"theta_{i}" for i in range(self.dim))
            )

    def constrain(self, zeta):
        return ad.value(self.transform.inverse(np.asarray(zeta, dtype=float)))

    def unconstrain(self, theta):
        return np.asarray(self.transform.forward(theta), dtype=float)


def _as_unconstrained(model, zeta):
    if isinstance(zeta, ParamPoint):
        if zeta.space is not Space.UNCONSTRAINED:
            raise InvalidArgumentError("expected a point in unconstrained coordinates")
        zeta = zeta.values
    if not isinstance(zeta, ad.Var):
        zeta = np.asarray(zeta, dtype=float).reshape(-1)
    if len(zeta) != model.dim:
        raise InvalidArgumentError(f"expected length {model.dim}, got {len(zeta)}")
    return zeta


def transformed_log_density(model: LogDensityModel, zeta):
    """``log p(x, T^-1(zeta)) + log|det J_{T^-1}(zeta)|``.

    Accepts a :class:`ParamPoint`, an array, or an autodiff ``Var`` (in which
    case the result is recorded).
    """
    zeta = _as_unconstrained(model, zeta)
    theta = model.transform.inverse(zeta)
    lp = model.log_joint(theta) + model.transform.log_abs_det_jacobian_inverse(zeta)
    if isinstance(lp, ad.Var):
        return lp
    lp = float(lp)
    return -math.inf if math.isnan(lp) else lp


def coin_posterior_density(r: float, h: int, t: int) -> float:
    """Posterior density of the heads probability under a uniform prior.

    ``(h+t+1)! / (h! t!) * r^h (1-r)^t`` evaluated through log-gamma.
    """
    if not 0.0 <= r <= 1.0:
        raise InvalidArgumentError(f"r must lie in [0, 1], got {r}")
    if h < 0 or t < 0:
        raise InvalidArgumentError("counts must be non-negative")
    log_norm = gammaln(h + t + 2) - gammaln(h + 1) - gammaln(t + 1)
    return float(np.exp(log_norm + xlogy(h, r) + xlog1py(t, -r)))


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if len(self.labels) != len(self.features):
                raise InvalidArgumentError("one label per feature row required")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.features.shape[1])]
        elif len(self.feature_names) != self.features.shape[1]:
            raise InvalidArgumentError("feature_names length does not match columns")

    def __len__(self):
        return len(self.features)

    def require_binary_labels(self):
        if self.labels is None:
            raise InvalidArgumentError("dataset has no labels")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise InvalidArgumentError("labels must be 0 or 1")
        return self.labels.astype(int)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        """Header row; feature columns first, optional final ``label`` column."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise InvalidArgumentError(f"{path}: empty file") from None
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header) or any(c.strip() == "" for c in row):
                    raise InvalidArgumentError(f"{path}:{lineno}: missing value")
                try:
                    rows.append([float(c) for c in row])
                except ValueError as exc:
                    raise InvalidArgumentError(f"{path}:{lineno}: {exc}") from None
        data = np.array(rows, dtype=float).reshape(-1, len(header))
        if header[-1] == "label":
            labels = data[:, -1]
            if np.all(labels == np.round(labels)):
                labels = labels.astype(int)
            return cls(data[:, :-1], labels, header[:-1])
        return cls(data, None, header)

    def to_csv(self, path):
        from .io import write_csv

        header = list(self.feature_names)
        cols = [self.features[:, j] for j in range(self.features.shape[1])]
        if self.labels is not None:
            header.append("label")
            cols.append(self.labels)
        write_csv(path, header, zip(*cols))


def sum_models(models: Sequence[LogDensityModel], name="sum") -> LogDensityModel:
    """Product of densities sharing one parameter space and transform."""
    first = models[0]
    for m in models[1:]:
        if m.dim != first.dim:
            raise InvalidArgumentError("models must share dimension")

    def log_joint(theta):
        total = 0.0
        for m in models:
            total = total + m.log_joint(theta)
        return total

    return LogDensityModel(first.dim, log_joint, first.transform, name, first.param_names)


def gaussian_model(mean, cov, name="gaussian") -> LogDensityModel:
    """Unnormalized multivariate normal log density on an unconstrained space."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (len(mean), len(mean)):
        raise InvalidArgumentError("cov must be square and match mean")
    prec = np.linalg.inv(cov)
    half = -0.5 * prec

    def log_joint(theta):
        d = theta - mean
        return ad.sum(d * (d @ half))

    return LogDensityModel(len(mean), log_joint, identity_transform(len(mean)), name)
