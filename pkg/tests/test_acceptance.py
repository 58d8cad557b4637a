"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line (shown in the terminal summary) and
fails if any of its checks fail. Tolerances are the stated ones; nothing here
is loosened to make a check pass.
"""

import hashlib
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from bnnkit.advi import AdviConfig, Family, VariationalState, elbo_estimate, elbo_gradients, run_advi
from bnnkit.bnn import (
    BnnArchitecture,
    bayes_optimal_accuracy,
    bnn_log_joint,
    posterior_predictive,
    split_tickets,
    synthesize_powerball,
)
from bnnkit.cli import EXIT_OK, main
from bnnkit.conjugate import (
    beta_bernoulli_model,
    beta_bernoulli_posterior,
    dirichlet_categorical_model,
    dirichlet_categorical_posterior,
    gamma_poisson_model,
    gamma_poisson_posterior,
)
from bnnkit.diagnostics import Statistic, confusion, hpd, posterior_predictive_check
from bnnkit.gradients import check_gradient
from bnnkit.mcmc import (
    HmcConfig,
    MhConfig,
    NutsConfig,
    PhasePoint,
    hmc,
    is_u_turn,
    leapfrog,
    metropolis_hastings,
    mh_transition_matrix,
    nuts,
)
from bnnkit.model_core import gaussian_model

CORR_MU = np.array([1.0, -1.0])
CORR_COV = np.array([[1.0, 0.9], [0.9, 1.0]])
CORR = gaussian_model(CORR_MU, CORR_COV)
N_DRAWS = 50_000


def _fmt(x, digits=4):
    return f"{x:.{digits}g}"


# 1 -----------------------------------------------------------------------------------


def _conjugate_cases():
    return {
        "beta_bernoulli": (beta_bernoulli_model(1, 1, 7, 3), beta_bernoulli_posterior(1, 1, 7, 3), 0.6),
        "gamma_poisson": (gamma_poisson_model(2, 1, 120, 50), gamma_poisson_posterior(2, 1, 120, 50), 0.09),
        "dirichlet": (
            dirichlet_categorical_model([1, 1, 1], [2, 3, 5]),
            dirichlet_categorical_posterior([1, 1, 1], [2, 3, 5]),
            0.5,
        ),
    }


def _run_sampler(name, model, scale, seed):
    if name == "mh":
        return metropolis_hastings(model, MhConfig(2.4 * scale, N_DRAWS, 1000, seed=seed))
    if name == "hmc":
        return hmc(model, HmcConfig(0.5, 3, N_DRAWS, 1000, seed=seed, target_accept=0.8))
    return nuts(model, NutsConfig(n_samples=N_DRAWS, n_warmup=1000, seed=seed))


@pytest.mark.slow
def test_criterion_01_conjugate_oracle_agreement(report):
    checks = {}
    for model_name, (model, oracle, scale) in _conjugate_cases().items():
        mean = np.atleast_1d(oracle.mean())
        var = np.atleast_1d(oracle.variance())
        for sampler in ("mh", "hmc", "nuts"):
            t0 = time.perf_counter()
            s = _run_sampler(sampler, model, scale, seed=1)
            elapsed = time.perf_counter() - t0
            x = s.constrained_draws
            # the Dirichlet draws carry the first K-1 probabilities; the last is implied
            full = np.column_stack([x, 1 - x.sum(axis=1)]) if model_name == "dirichlet" else x
            err_mean = float(np.max(np.abs(full.mean(axis=0) - mean)))
            err_var = float(np.max(np.abs(full.var(axis=0) / var - 1)))
            key = f"{model_name}/{sampler}"
            checks[f"{key}.mean_err"] = (err_mean <= 0.01, _fmt(err_mean))
            checks[f"{key}.var_rel_err"] = (err_var <= 0.10, _fmt(err_var))
            checks[f"{key}.seconds"] = (elapsed < 30, _fmt(elapsed, 3))
    report(1, "MH/HMC/NUTS match conjugate posteriors at 50k draws", checks)


# 2 -----------------------------------------------------------------------------------


def test_criterion_02_coin_posterior_ks(report):
    s = metropolis_hastings(beta_bernoulli_model(1, 1, 1, 0), MhConfig(2.0, N_DRAWS, 1000, seed=2))
    ks = stats.kstest(s.constrained_draws[:, 0], lambda r: np.clip(r, 0, 1) ** 2).statistic
    report(2, "coin posterior h=1,t=0 matches CDF r^2", {"ks": (ks < 0.05, _fmt(ks))})


# 3 -----------------------------------------------------------------------------------


def _integrate(model, state, eps, n):
    for _ in range(n):
        state = leapfrog(model, state, eps)
    return state


def test_criterion_03_leapfrog_invariants(report):
    rng = np.random.default_rng(3)
    worst_rev = 0.0
    for eps in (0.01, 0.1, 0.25, 0.5):
        for n in (1, 10, 50, 100):
            start = PhasePoint(rng.normal(size=2), rng.normal(size=2))
            mid = _integrate(CORR, start, eps, n)
            back = _integrate(CORR, PhasePoint(mid.position, -mid.momentum), eps, n)
            err = max(np.max(np.abs(back.position - start.position)), np.max(np.abs(back.momentum + start.momentum)))
            worst_rev = max(worst_rev, float(err))

    h = 1e-6
    worst_det = 0.0
    for eps in (0.05, 0.3, 0.5):
        x0 = rng.normal(size=4)

        def step(x):
            out = leapfrog(CORR, PhasePoint(x[:2], x[2:]), eps)
            return np.concatenate([out.position, out.momentum])

        J = np.column_stack([(step(x0 + e) - step(x0 - e)) / (2 * h) for e in np.eye(4) * h])
        worst_det = max(worst_det, abs(np.linalg.det(J) - 1.0))

    # trajectory length eps * L held fixed so only the discretization changes
    a = hmc(CORR, HmcConfig(0.05, 20, 5000, 100, seed=3))
    b = hmc(CORR, HmcConfig(0.025, 40, 5000, 100, seed=3))
    ratio = float(a.energy_error.mean() / b.energy_error.mean())
    report(3, "leapfrog reversibility, volume, energy-error scaling", {
        "round_trip_err": (worst_rev < 1e-10, _fmt(worst_rev)),
        "jacobian_det_err": (worst_det < 1e-6, _fmt(worst_det)),
        "dH_ratio": (3 <= ratio <= 5, _fmt(ratio)),
    })


# 4 -----------------------------------------------------------------------------------


def test_criterion_04_detailed_balance(report):
    pi = np.array([1.0, 2.0, 3.0]) / 6
    q = np.full((3, 3), 0.5) - 0.5 * np.eye(3)
    P = mh_transition_matrix(np.log(pi), q)
    flow = pi[:, None] * P
    err = float(np.max(np.abs(flow - flow.T)))
    report(4, "exact MH kernel on 3 states satisfies detailed balance", {"max_flow_err": (err < 1e-12, _fmt(err))})


# 5 -----------------------------------------------------------------------------------


def test_criterion_05_nuts(report):
    turn_cases = [
        is_u_turn([1.0], [-1.0], [1.0]),
        not is_u_turn([-1.0], [1.0], [1.0]),
        not is_u_turn([0.0, 0.0], [1.0, 1.0], [1.0, 0.5]),
        is_u_turn([0.0, 0.0], [1.0, 1.0], [-1.0, -0.5]),
    ]
    target = gaussian_model([0.0, 0.0], CORR_COV)
    s = nuts(target, NutsConfig(target_accept=0.8, n_samples=10_000, n_warmup=1000, seed=5))
    mean_err = float(np.max(np.abs(s.draws.mean(axis=0))))
    rho = float(np.corrcoef(s.draws.T)[0, 1])
    acc = float(s.accept_prob.mean())
    report(5, "NUTS u-turn rule, rho=0.9 Gaussian, adapted acceptance", {
        "u_turn_cases": (all(turn_cases), f"{sum(turn_cases)}/{len(turn_cases)}"),
        "mean_err": (mean_err < 0.05, _fmt(mean_err)),
        "corr_err": (abs(rho - 0.9) < 0.05, _fmt(abs(rho - 0.9))),
        "accept": (0.7 <= acc <= 0.9, _fmt(acc)),
    })


# 6 -----------------------------------------------------------------------------------


def test_criterion_06_gradient_engine(report):
    data = synthesize_powerball(200, seed=2)
    models = {
        "gaussian": CORR,
        "beta_bernoulli": beta_bernoulli_model(2.0, 3.0, 7, 3),
        "gamma_poisson": gamma_poisson_model(2.0, 1.0, 120, 50),
        "dirichlet": dirichlet_categorical_model([1.0, 2.0, 1.5], [5, 3, 8]),
    }
    for hidden in ((2,), (5,), (5, 5)):
        models[f"bnn{list(hidden)}"] = bnn_log_joint(BnnArchitecture(hidden_layers=hidden), data)
    rng = np.random.default_rng(6)
    checks = {}
    for name, model in models.items():
        worst = 0.0
        for _ in range(25):
            worst = max(worst, check_gradient(model, rng.normal(size=model.dim), tol=1e-5).max_rel_error)
        checks[name] = (worst < 1e-5, _fmt(worst))
    report(6, "gradients agree with finite differences at 25 points per model", checks)


# 7 -----------------------------------------------------------------------------------


def _frozen_noise_fd_error(model, state, eta, h=1e-6):
    g = elbo_gradients(model, state, len(eta), eta=eta)
    k = state.dim
    mask = np.eye(k) if state.family is Family.MEAN_FIELD else np.tril(np.ones((k, k)))

    def f(mu, L):
        return elbo_estimate(model, VariationalState(mu, L, state.family), len(eta), eta=eta)

    worst = 0.0
    for i in range(k):
        e = np.zeros(k)
        e[i] = h
        num = (f(state.mu + e, state.l_factor) - f(state.mu - e, state.l_factor)) / (2 * h)
        worst = max(worst, abs(num - g.grad_mu[i]) / max(abs(num), 1e-8))
    for i, j in zip(*np.nonzero(mask)):
        E = np.zeros((k, k))
        E[i, j] = h
        num = (f(state.mu, state.l_factor + E) - f(state.mu, state.l_factor - E)) / (2 * h)
        worst = max(worst, abs(num - g.grad_l[i, j]) / max(abs(num), 1e-8))
    return worst


def test_criterion_07_advi(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    fd = max(
        _frozen_noise_fd_error(CORR, VariationalState([0.2, -0.4], [[0.8, 0.0], [0.3, 0.6]]), rng.standard_normal((10, 2))),
        _frozen_noise_fd_error(
            CORR, VariationalState([0.2, -0.4], np.diag([0.8, 0.6]), Family.MEAN_FIELD), rng.standard_normal((10, 2))
        ),
    )
    full = run_advi(CORR, Family.FULL_RANK, AdviConfig(n_iterations=5000, seed=1)).state
    mf = run_advi(CORR, Family.MEAN_FIELD, AdviConfig(n_iterations=5000, seed=1)).state
    elapsed = time.perf_counter() - t0
    mu_err = float(np.max(np.abs(full.mu - CORR_MU)))
    sig_err = float(np.linalg.norm(full.covariance - CORR_COV) / np.linalg.norm(CORR_COV))
    mf_var = np.diag(mf.covariance)
    report(7, "ADVI gradients, full-rank recovery, mean-field variance shrinkage", {
        "fd_rel_err": (fd < 1e-5, _fmt(fd)),
        "mu_err": (mu_err < 0.05, _fmt(mu_err)),
        "sigma_rel_frob": (sig_err < 0.1, _fmt(sig_err)),
        "mf_var": (bool(np.all(mf_var < np.diag(CORR_COV))), np.array2string(mf_var, precision=3)),
        "seconds": (elapsed < 60, _fmt(elapsed, 3)),
    })


# 8 and 9 ----------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def powerball_fit():
    t0 = time.perf_counter()
    data = synthesize_powerball(20_000, seed=1)
    train, test = split_tickets(data, 0.2)
    arch = BnnArchitecture(hidden_layers=(5,), activation="tanh", input_log_transform=True)
    cfg = AdviConfig(n_iterations=3000, base_step=0.5, adaptive=True, seed=1)
    state = run_advi(bnn_log_joint(arch, train), Family.FULL_RANK, cfg).state
    rng = np.random.default_rng(9)
    pred = posterior_predictive(arch, state, test.features, 1000, rng)
    cm = confusion(np.array([p.mean_prob for p in pred]), test.labels)
    table = posterior_predictive(arch, state, np.arange(0, 70.0)[:, None], 1000, rng)
    return {"accuracy": cm.accuracy, "std": np.array([s.std_prob for s in table]),
            "seconds": time.perf_counter() - t0}


@pytest.mark.slow
def test_criterion_08_powerball_accuracy(report, powerball_fit):
    acc = powerball_fit["accuracy"]
    bayes = bayes_optimal_accuracy()
    report(8, "held-out Powerball accuracy, full-rank ADVI, 20k tickets", {
        "accuracy": (acc >= 0.78, _fmt(acc)),
        "gap_to_bayes": (abs(acc - bayes) <= 0.03, _fmt(abs(acc - bayes))),
        "seconds": (powerball_fit["seconds"] < 600, _fmt(powerball_fit["seconds"], 3)),
    })


@pytest.mark.slow
def test_criterion_09_uncertainty(report, powerball_fit):
    std = powerball_fit["std"]
    mid = float(std[11:21].mean())
    edge = float(std[[2, 3, 45, 50]].mean())
    report(9, "predictive std: mid values above edge values; value 0 maximal", {
        "mid_vs_edge": (mid > edge, f"{_fmt(mid)}>{_fmt(edge)}"),
        "value0_is_max": (std[0] == std.max(), f"{_fmt(std[0])} vs max {_fmt(std.max())} at {int(std.argmax())}"),
    })


# 10 ------------------------------------------------------------------------------------------


def test_criterion_10_calibration(report):
    rng = np.random.default_rng(10)
    n_flips, covered = 20, 0
    for rep in range(200):
        p = rng.uniform()
        heads = int(rng.binomial(n_flips, p))
        s = metropolis_hastings(beta_bernoulli_model(1, 1, heads, n_flips - heads), MhConfig(1.5, 2000, 200, seed=rep))
        iv = hpd(s.constrained_draws[:, 0], 0.9)
        covered += iv.low <= p <= iv.high
    coverage = covered / 200

    inside = 0
    for rep in range(100):
        lam = rng.gamma(2.0, 1.0)
        y = rng.poisson(lam, 30)
        s = metropolis_hastings(gamma_poisson_model(2.0, 1.0, int(y.sum()), len(y)), MhConfig(0.5, 1000, 200, seed=rep))
        res = posterior_predictive_check(lambda d, r: r.poisson(d[0], len(y)), s.constrained_draws, y,
                                         Statistic.MEAN, np.random.default_rng(rep))
        inside += 0.05 <= res.replicated_quantile <= 0.95
    frac = inside / 100
    report(10, "HPD coverage and PPC calibration", {
        "hpd90_coverage": (coverage >= 0.85, _fmt(coverage)),
        "ppc_inside_frac": (frac >= 0.90, _fmt(frac)),
    })


# 11 ------------------------------------------------------------------------------------------


def _digests(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(Path(directory).iterdir()) if p.is_file()}


def test_criterion_11_cli_determinism(report, tmp_path):
    runs = {
        "sample_nuts": ["sample", "--model", "dirichlet", "--counts", "2,3,5", "--n", "300", "--warmup", "100"],
        "sample_mh_csv": ["sample", "--model", "gamma-poisson", "--sampler", "mh", "--events", "12",
                          "--intervals", "5", "--n", "500", "--format", "csv"],
        "sample_hmc": ["sample", "--model", "gaussian-2d", "--sampler", "hmc", "--n", "300", "--warmup", "100"],
        "advi": ["advi", "--model", "gaussian-2d", "--iterations", "500"],
    }
    checks = {}
    for name, argv in runs.items():
        a, b = tmp_path / name / "a", tmp_path / name / "b"
        ok = main([*argv, "--seed", "11", "--output-dir", str(a)]) == EXIT_OK
        ok &= main(["rerun", str(a / "manifest.json"), "--output-dir", str(b)]) == EXIT_OK
        checks[name] = (ok and _digests(a) == _digests(b), f"{len(_digests(a))} files")

    a, b = tmp_path / "pb" / "a", tmp_path / "pb" / "b"
    stages = {
        "synthesize": ["--tickets", "2000"],
        "train": ["--iterations", "300"],
        "evaluate": ["--n-draws", "200"],
        "boundary": ["--resolution", "20", "--n-draws", "100"],
        "weights": ["--n-draws", "200"],
    }
    ok = True
    for stage, extra in stages.items():
        ok &= main(["powerball", stage, *extra, "--seed", "11", "--output-dir", str(a)]) == EXIT_OK
    for stage in stages:
        ok &= main(["rerun", str(a / f"manifest_{stage}.json"), "--output-dir", str(b)]) == EXIT_OK
    checks["powerball"] = (ok and _digests(a) == _digests(b), f"{len(_digests(a))} files")
    report(11, "CLI reruns from manifests are bitwise identical", checks)
