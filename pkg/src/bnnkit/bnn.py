"""Bayesian neural networks for binary classification, and the Powerball task.

Network: ``input -> hidden layers (tanh or logistic) -> one logistic output``.
Every weight and bias has an independent ``N(0, prior_std^2)`` prior and the
labels a Bernoulli likelihood. Weights are packed into one flat vector
layer by layer, each layer as its ``fan_in x fan_out`` weight matrix in
row-major order followed by its ``fan_out`` biases.

Inputs flagged for log transform are mapped through ``log(1 + x)`` so that
a query at 0 stays finite.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .advi import VariationalState, sample_standardized
from .diagnostics import hpd
from .errors import InvalidArgumentError
from .mcmc import SampleSet
from .model_core import Dataset, LogDensityModel, identity_transform

N_BALLS = 69
N_DRAWN = 5
# sorted ticket positions used as the two classes (label 0, label 1)
POWERBALL_POSITIONS = (1, 3)


class Activation(enum.Enum):
    TANH = "tanh"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class BnnArchitecture:
    input_dim: int = 1
    hidden_layers: tuple = (5,)
    activation: Activation = Activation.TANH
    prior_std: float = 1.0
    input_log_transform: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_layers):
            raise InvalidArgumentError("layer sizes must be >= 1")
        if not self.prior_std > 0:
            raise InvalidArgumentError("prior_std must be positive")

    @property
    def layer_sizes(self):
        return (self.input_dim, *self.hidden_layers, 1)

    @property
    def n_weights(self):
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    def layer_tag(self, layer: int) -> str:
        n_layers = len(self.layer_sizes) - 1
        if layer == 0:
            return "input"
        if layer == n_layers - 1:
            return "output"
        return "hidden"

    def layout(self):
        """Per layer: ``(weight slice, weight shape, bias slice)``."""
        out = []
        pos = 0
        s = self.layer_sizes
        for a, b in zip(s[:-1], s[1:]):
            w = slice(pos, pos + a * b)
            pos += a * b
            out.append((w, (a, b), slice(pos, pos + b)))
            pos += b
        return out

    def weight_names(self):
        names = []
        for k, (_, (a, b), _) in enumerate(self.layout()):
            names += [f"W{k}[{i},{j}]" for i in range(a) for j in range(b)]
            names += [f"b{k}[{j}]" for j in range(b)]
        return names

    def preprocess(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, self.input_dim)
        if X.shape[1] != self.input_dim:
            raise InvalidArgumentError(f"expected {self.input_dim} input columns, got {X.shape[1]}")
        return np.log1p(X) if self.input_log_transform else X

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden_layers": list(self.hidden_layers),
            "activation": self.activation.value,
            "prior_std": self.prior_std,
            "input_log_transform": self.input_log_transform,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["input_dim"], tuple(d["hidden_layers"]), Activation(d["activation"]),
                   d["prior_std"], d["input_log_transform"])


def _act(arch, x):
    return ad.tanh(x) if arch.activation is Activation.TANH else ad.logistic(x)


def bnn_logits(arch: BnnArchitecture, weights, H):
    """Output pre-activations for preprocessed inputs ``H`` (rows = examples).

    ``weights`` may be an autodiff ``Var``.
    """
    layout = arch.layout()
    for k, (ws, shape, bs) in enumerate(layout):
        W = weights[ws].reshape(*shape)
        z = H @ W + weights[bs]
        H = _act(arch, z) if k < len(layout) - 1 else z
    return H[:, 0]


def bnn_forward(arch: BnnArchitecture, weights, x) -> float:
    """Probability of label 1 for one raw input vector."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if len(x) != arch.input_dim:
        raise InvalidArgumentError(f"expected input of length {arch.input_dim}, got {len(x)}")
    w = np.asarray(weights, dtype=float).reshape(-1)
    if len(w) != arch.n_weights:
        raise InvalidArgumentError(f"expected {arch.n_weights} weights, got {len(w)}")
    return float(expit(bnn_logits(arch, w, arch.preprocess(x[None, :]))[0]))


def predict_proba(arch: BnnArchitecture, weight_draws, X) -> np.ndarray:
    """``(n_draws, n_rows)`` matrix of label-1 probabilities for raw inputs ``X``."""
    Wd = np.atleast_2d(np.asarray(weight_draws, dtype=float))
    H = np.broadcast_to(arch.preprocess(X), (len(Wd),) + arch.preprocess(X).shape)
    layout = arch.layout()
    for k, (ws, shape, bs) in enumerate(layout):
        W = Wd[:, ws].reshape(len(Wd), *shape)
        z = H @ W + Wd[:, None, bs]
        H = (np.tanh(z) if arch.activation is Activation.TANH else expit(z)) if k < len(layout) - 1 else z
    return expit(H[:, :, 0])


def _aggregate(H, y):
    """Collapse duplicate input rows into per-row label counts."""
    uniq, inv = np.unique(H, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    n1 = np.bincount(inv, weights=(y == 1).astype(float), minlength=len(uniq))
    n0 = np.bincount(inv, weights=(y == 0).astype(float), minlength=len(uniq))
    return uniq, n1, n0


def bnn_log_joint(arch: BnnArchitecture, data: Dataset | None) -> LogDensityModel:
    """Bernoulli log likelihood of the labels plus the Gaussian weight prior.

    Identical input rows are merged and their label counts used as weights,
    which is exact and keeps evaluation cost proportional to the number of
    distinct inputs. ``data=None`` (or an empty dataset) gives the prior.
    """
    n_w = arch.n_weights
    inv_var = 1.0 / arch.prior_std**2
    log_norm = -0.5 * n_w * math.log(2 * math.pi * arch.prior_std**2)
    if data is not None and len(data):
        y = data.require_binary_labels()
        H, n1, n0 = _aggregate(arch.preprocess(data.features), y)
    else:
        H = None

    def log_joint(w):
        prior = -0.5 * inv_var * ad.sum(ad.square(w)) + log_norm
        if H is None:
            return prior
        a = bnn_logits(arch, w, H)
        return ad.sum(n1 * ad.log_logistic(a) + n0 * ad.log_logistic(-a)) + prior

    return LogDensityModel(n_w, log_joint, identity_transform(n_w), "bnn", tuple(arch.weight_names()))


# posterior summaries ---------------------------------------------------------


def weight_draws(inference, n_draws: int, rng=None) -> np.ndarray:
    """Posterior weight draws from a SampleSet or a VariationalState.

    From a SampleSet, ``n_draws`` evenly spaced draws are taken; asking for more
    draws than exist resamples with replacement.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if isinstance(inference, VariationalState):
        return sample_standardized(inference, rng, n_draws)[1]
    if isinstance(inference, SampleSet):
        X = inference.constrained_draws
    else:
        X = np.atleast_2d(np.asarray(inference, dtype=float))
    if n_draws <= len(X):
        idx = np.linspace(0, len(X) - 1, n_draws).round().astype(int)
    else:
        idx = rng.integers(0, len(X), n_draws)
    return X[idx]


def _moments(col):
    # identical values would otherwise pick up rounding noise in the std
    if np.ptp(col) == 0:
        return float(col[0]), 0.0
    return float(col.mean()), float(col.std())


@dataclass(frozen=True)
class PredictiveSummary:
    mean_prob: float
    std_prob: float
    hpd_low: float
    hpd_high: float


def posterior_predictive(arch, inference, x_new, n_draws: int = 1000, rng=None, mass: float = 0.9):
    """Mean, std and HPD of the label-1 probability for each query row."""
    W = weight_draws(inference, n_draws, rng)
    P = predict_proba(arch, W, np.asarray(x_new, dtype=float).reshape(-1, arch.input_dim))
    out = []
    for col in P.T:
        iv = hpd(col, mass)
        out.append(PredictiveSummary(*_moments(col), iv.low, iv.high))
    return out


def decision_boundary_grid(arch, inference, x_range, resolution: int, n_draws: int = 500, rng=None):
    """Predictive mean/std on a uniform grid (1-d or 2-d inputs).

    Returns ``(header, rows)`` ready for CSV output.
    """
    if arch.input_dim > 2:
        raise InvalidArgumentError("decision boundary grids support 1-d or 2-d inputs only")
    if resolution < 1:
        raise InvalidArgumentError("resolution must be >= 1")
    lo, hi = x_range
    axis = np.linspace(lo, hi, resolution)
    if arch.input_dim == 1:
        X = axis[:, None]
        header = ["x", "mean_prob", "std_prob"]
    else:
        g0, g1 = np.meshgrid(axis, axis, indexing="ij")
        X = np.column_stack([g0.ravel(), g1.ravel()])
        header = ["x0", "x1", "mean_prob", "std_prob"]
    summ = posterior_predictive(arch, inference, X, n_draws, rng)
    rows = [list(x) + [s.mean_prob, s.std_prob] for x, s in zip(X, summ)]
    return header, rows


def weight_posterior_summary(inference, arch, n_draws: int = 2000, rng=None, mass: float = 0.9):
    """Per flattened weight: layer tag, index within the layer, mean, std, HPD."""
    if isinstance(inference, SampleSet):
        W = inference.constrained_draws
    else:
        W = weight_draws(inference, n_draws, rng)
    if len(W) < 10:
        W = weight_draws(W, 10, rng)
    rows = []
    names = arch.weight_names()
    for k, (ws, _, bs) in enumerate(arch.layout()):
        tag = arch.layer_tag(k)
        idx = list(range(ws.start, ws.stop)) + list(range(bs.start, bs.stop))
        for local, j in enumerate(idx):
            col = W[:, j]
            iv = hpd(col, mass)
            m, sd = _moments(col)
            rows.append({
                "layer": tag, "layer_index": k, "index": local, "name": names[j],
                "mean": m, "std": sd,
                "hpd_low": iv.low, "hpd_high": iv.high,
            })
    return rows


WEIGHT_TABLE_HEADER = ["layer", "layer_index", "index", "name", "mean", "std", "hpd_low", "hpd_high"]


# Powerball ------------------------------------------------------------------


def synthesize_powerball(n_tickets: int, seed: int = 0) -> Dataset:
    """Simulated white-ball tickets turned into a two-class dataset.

    Each ticket is 5 distinct values from 1..69, sorted; it contributes the
    value at sorted position 1 (label 0) and at position 3 (label 1), in that
    order, so rows ``2i`` and ``2i+1`` come from ticket ``i``.
    """
    if n_tickets < 1:
        raise InvalidArgumentError("n_tickets must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    lo, hi = POWERBALL_POSITIONS
    values = np.empty((n_tickets, 2), dtype=int)
    chunk = 50_000
    for start in range(0, n_tickets, chunk):
        m = min(chunk, n_tickets - start)
        keys = rng.random((m, N_BALLS))
        picks = np.sort(np.argpartition(keys, N_DRAWN, axis=1)[:, :N_DRAWN] + 1, axis=1)
        values[start:start + m, 0] = picks[:, lo - 1]
        values[start:start + m, 1] = picks[:, hi - 1]
    labels = np.tile([0, 1], n_tickets)
    return Dataset(values.reshape(-1, 1).astype(float), labels, ["value"])


def split_tickets(data: Dataset, test_fraction: float):
    """Train/test split on ticket boundaries (two consecutive rows per ticket)."""
    n_tickets = len(data) // 2
    n_test = int(round(test_fraction * n_tickets))
    cut = 2 * (n_tickets - n_test)
    train = Dataset(data.features[:cut], data.labels[:cut], list(data.feature_names))
    test = Dataset(data.features[cut:], data.labels[cut:], list(data.feature_names))
    return train, test


def order_statistic_pmf(position: int, n: int = N_BALLS, k: int = N_DRAWN):
    """Exact ``P(X_(position) = v)`` for ``v = 1..n`` when ``k`` distinct values
    are drawn uniformly from ``1..n``, as Fractions."""
    total = comb(n, k)
    return [Fraction(comb(v - 1, position - 1) * comb(n - v, k - position), total) for v in range(1, n + 1)]


def bayes_optimal_accuracy_exact() -> Fraction:
    lo, hi = POWERBALL_POSITIONS
    p_lo, p_hi = order_statistic_pmf(lo), order_statistic_pmf(hi)
    return sum((max(a, b) for a, b in zip(p_lo, p_hi)), Fraction(0)) / 2


def bayes_optimal_accuracy() -> float:
    """Accuracy of the Bayes classifier for position 1 vs position 3 with
    balanced classes: ``0.5 * sum_v max(P1(v), P3(v))``."""
    return float(bayes_optimal_accuracy_exact())
