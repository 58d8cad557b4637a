import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnnkit.diagnostics import (
    Statistic,
    chain_stats,
    confusion,
    effective_sample_size,
    hpd,
    posterior_predictive_check,
    summarize,
)
from bnnkit.errors import InsufficientSampleError, InvalidArgumentError
from bnnkit.mcmc import SampleSet


def _sample_set(x, accepted=None):
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    n = len(x)
    return SampleSet(
        draws=x, constrained_draws=x, log_densities=np.zeros(n),
        accepted=np.ones(n, bool) if accepted is None else accepted,
        divergent=np.zeros(n, bool), energy_error=np.zeros(n), accept_prob=np.ones(n),
        tree_depth=np.zeros(n, int), chain=np.zeros(n, int),
    )


def test_hpd_uniform_grid():
    iv = hpd(np.arange(100.0), 0.9)
    assert abs(iv.width - 89) <= 1
    assert iv.low == 0.0


def test_hpd_gaussian():
    iv = hpd(np.random.default_rng(0).standard_normal(100_000), 0.9)
    assert iv.low == pytest.approx(-1.645, abs=0.05)
    assert iv.high == pytest.approx(1.645, abs=0.05)


def test_hpd_constant_draws():
    iv = hpd(np.full(50, 2.5), 0.9)
    assert iv.low == iv.high == 2.5


def test_hpd_input_checks():
    with pytest.raises(InsufficientSampleError):
        hpd(np.arange(9.0))
    with pytest.raises(InvalidArgumentError):
        hpd(np.arange(20.0), 1.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), m1=st.floats(0.05, 0.95), m2=st.floats(0.05, 0.95))
def test_hpd_width_monotone_in_mass(seed, m1, m2):
    x = np.random.default_rng(seed).gamma(2.0, size=300)
    lo, hi = sorted((m1, m2))
    assert hpd(x, lo).width <= hpd(x, hi).width


def test_hpd_prefers_dense_region():
    x = np.concatenate([np.zeros(900) + np.linspace(0, 1, 900), np.linspace(50, 100, 100)])
    iv = hpd(x, 0.85)
    assert iv.high <= 1.0


# posterior predictive checks -----------------------------------------------------


def _poisson_replicate(n):
    return lambda lam, rng: rng.poisson(lam, n)


def test_ppc_flags_shifted_data():
    rng = np.random.default_rng(0)
    draws = rng.gamma(50, 1 / 25, size=500)  # posterior around 2
    observed = np.full(25, 9.0)
    res = posterior_predictive_check(_poisson_replicate(25), draws, observed, Statistic.MEAN, rng)
    assert res.replicated_quantile > 0.99
    low = posterior_predictive_check(_poisson_replicate(25), draws, np.zeros(25), Statistic.MEAN, rng)
    assert low.replicated_quantile < 0.01


def test_ppc_variance_statistic_detects_overdispersion():
    rng = np.random.default_rng(1)
    observed = rng.negative_binomial(1, 0.2, size=200)  # mean 4, variance 20
    e, n = observed.sum(), len(observed)
    draws = rng.gamma(1 + e, 1 / (1 + n), size=400)
    res = posterior_predictive_check(_poisson_replicate(n), draws, observed, Statistic.VARIANCE, rng)
    assert res.replicated_quantile > 0.99


def test_ppc_requires_enough_draws():
    with pytest.raises(InsufficientSampleError):
        posterior_predictive_check(_poisson_replicate(5), np.ones(1), np.ones(5))
    with pytest.raises(InsufficientSampleError):
        posterior_predictive_check(_poisson_replicate(5), np.ones(99), np.ones(5))


def test_ppc_ties_count_half():
    res = posterior_predictive_check(lambda d, rng: np.ones(4), np.ones(100), np.ones(4), Statistic.MEAN)
    assert res.replicated_quantile == 0.5


# confusion -------------------------------------------------------------------------


def test_confusion_perfect_and_flipped():
    y = np.array([0, 1, 1, 0, 1])
    cm = confusion(y * 0.98 + 0.01, y)
    assert (cm.accuracy, cm.fpr, cm.fnr) == (1.0, 0.0, 0.0)
    cm2 = confusion(1 - y, y)
    assert cm2.accuracy == 0.0


def test_confusion_counts_and_rates():
    y = np.array([1, 1, 1, 0, 0, 0, 0])
    p = np.array([0.9, 0.2, 0.7, 0.6, 0.1, 0.3, 0.51])
    cm = confusion(p, y)
    assert (cm.tp, cm.fn, cm.fp, cm.tn) == (2, 1, 2, 2)
    assert cm.fpr == pytest.approx(0.5) and cm.fnr == pytest.approx(1 / 3)
    with pytest.raises(InvalidArgumentError):
        confusion(p[:3], y)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=200), st.floats(0.01, 0.99))
def test_confusion_sums_to_length(pairs, threshold):
    p, y = map(np.array, zip(*pairs))
    cm = confusion(p, y, threshold)
    assert cm.total == len(pairs) == cm.tp + cm.fp + cm.tn + cm.fn


def test_confusion_csv(tmp_path):
    cm = confusion(np.array([0.9, 0.1, 0.8]), np.array([1, 1, 0]))
    path = tmp_path / "cm.csv"
    cm.to_csv(path)
    assert path.read_text() == "actual,predicted_0,predicted_1\n0,0,1\n1,1,1\n"


# chain health ---------------------------------------------------------------------------


def test_ess_iid_is_near_n():
    x = np.random.default_rng(0).standard_normal((20_000, 2))
    stats = chain_stats(_sample_set(x))
    assert np.all(np.abs(stats["effective_sample_size"] / 20_000 - 1) < 0.2)


def test_ess_of_ar1_matches_theory():
    rng = np.random.default_rng(1)
    phi, n = 0.8, 50_000
    x = np.empty(n)
    x[0] = rng.standard_normal()
    for t in range(1, n):
        x[t] = phi * x[t - 1] + rng.standard_normal()
    expected = n * (1 - phi) / (1 + phi)
    assert effective_sample_size(x) == pytest.approx(expected, rel=0.15)


def test_ess_constant_chain_sentinel():
    stats = chain_stats(_sample_set(np.full(200, 3.0)))
    assert stats["effective_sample_size"][0] == 1.0
    assert math.isfinite(stats["std"][0])


def test_acceptance_rate_exact():
    acc = np.zeros(300, bool)
    acc[::3] = True
    stats = chain_stats(_sample_set(np.random.default_rng(0).normal(size=300), acc))
    assert stats["acceptance_rate"] == 100 / 300


def test_chain_stats_needs_100_draws():
    with pytest.raises(InsufficientSampleError):
        chain_stats(_sample_set(np.zeros(50)))


def test_summary_is_json_ready():
    from bnnkit.io import dumps

    text = dumps(summarize(_sample_set(np.random.default_rng(0).normal(size=(500, 2)))))
    assert '"hpd_low"' in text and '"acceptance_rate"' in text
