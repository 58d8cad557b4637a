"""Random-walk Metropolis-Hastings, HMC and NUTS in unconstrained coordinates.

All three samplers share the same conventions:

* the chain state is a point ``zeta`` in unconstrained space and the target
  is :func:`~bnnkit.model_core.transformed_log_density`;
* the initial point is drawn from a standard normal, redrawn up to 100 times
  until the density is finite;
* warmup iterations are run and then discarded;
* every sampler is deterministic given ``(model, config)``.

NUTS follows the slice-variable formulation: a slice level ``log u`` is drawn
below the joint density of the start point, the trajectory is doubled in a
random direction until either end makes a U-turn, and the next state is drawn
uniformly from the leaves that lie above the slice. Step sizes are tuned
during warmup by dual averaging.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import InitializationError, InvalidArgumentError
from .gradients import value_and_grad
from .io import write_csv
from .model_core import LogDensityModel, transformed_log_density

MAX_INIT_TRIES = 100
DIVERGENCE_THRESHOLD = 1000.0


# configs ----------------------------------------------------------------


@dataclass(frozen=True)
class MhConfig:
    proposal_scale: float | tuple = 1.0
    n_samples: int = 1000
    n_warmup: int = 500
    seed: int = 0

    def __post_init__(self):
        if np.any(np.asarray(self.proposal_scale, dtype=float) <= 0):
            raise InvalidArgumentError("proposal_scale must be positive")
        if self.n_samples < 1 or self.n_warmup < 0:
            raise InvalidArgumentError("need n_samples >= 1 and n_warmup >= 0")


@dataclass(frozen=True)
class HmcConfig:
    step_size: float = 0.1
    n_leapfrog: int = 20
    n_samples: int = 1000
    n_warmup: int = 500
    seed: int = 0
    # when set, step_size is only the starting point for warmup dual averaging
    target_accept: float | None = None

    def __post_init__(self):
        if not self.step_size > 0:
            raise InvalidArgumentError("step_size must be positive")
        if self.n_leapfrog < 1:
            raise InvalidArgumentError("n_leapfrog must be >= 1")
        if self.n_samples < 1 or self.n_warmup < 0:
            raise InvalidArgumentError("need n_samples >= 1 and n_warmup >= 0")
        if self.target_accept is not None and not 0 < self.target_accept < 1:
            raise InvalidArgumentError("target_accept must lie in (0, 1)")


@dataclass(frozen=True)
class NutsConfig:
    target_accept: float = 0.8
    max_tree_depth: int = 10
    n_samples: int = 1000
    n_warmup: int = 1000
    seed: int = 0
    # skip the initial-step heuristic and start adaptation from this value
    step_size: float | None = None

    def __post_init__(self):
        if not 0 < self.target_accept < 1:
            raise InvalidArgumentError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 0:
            raise InvalidArgumentError("max_tree_depth must be >= 0")
        if self.n_samples < 1 or self.n_warmup < 0:
            raise InvalidArgumentError("need n_samples >= 1 and n_warmup >= 0")
        if self.step_size is not None and not self.step_size > 0:
            raise InvalidArgumentError("step_size must be positive")


@dataclass(frozen=True)
class PhasePoint:
    position: np.ndarray
    momentum: np.ndarray

    def __post_init__(self):
        q = np.array(self.position, dtype=float).reshape(-1)
        p = np.array(self.momentum, dtype=float).reshape(-1)
        if q.shape != p.shape:
            raise InvalidArgumentError("position and momentum lengths differ")
        object.__setattr__(self, "position", q)
        object.__setattr__(self, "momentum", p)


# sample container -------------------------------------------------------


@dataclass
class SampleSet:
    """Posterior draws plus per-draw sampler statistics.

    ``log_densities`` are transformed (unconstrained-space) log densities.
    ``accepted`` means the chain moved; ``accept_prob`` is the Metropolis
    acceptance probability (for NUTS, the tree average used by adaptation).
    """

    draws: np.ndarray
    constrained_draws: np.ndarray
    log_densities: np.ndarray
    accepted: np.ndarray
    divergent: np.ndarray
    energy_error: np.ndarray
    accept_prob: np.ndarray
    tree_depth: np.ndarray
    chain: np.ndarray
    param_names: tuple = ()
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.draws)
        for name in ("constrained_draws", "log_densities", "accepted", "divergent",
                     "energy_error", "accept_prob", "tree_depth", "chain"):
            if len(getattr(self, name)) != n:
                raise InvalidArgumentError(f"{name} has {len(getattr(self, name))} rows, expected {n}")
        if not self.param_names:
            self.param_names = tuple(f"theta_{i}" for i in range(self.draws.shape[1]))

    def __len__(self):
        return len(self.draws)

    @property
    def dim(self):
        return self.draws.shape[1]

    def to_csv(self, path):
        header = list(self.param_names) + [
            "log_density", "accepted", "divergent", "energy_error",
            "accept_prob", "tree_depth", "chain",
        ]
        rows = (
            list(self.constrained_draws[i]) + [
                self.log_densities[i], bool(self.accepted[i]), bool(self.divergent[i]),
                self.energy_error[i], self.accept_prob[i], int(self.tree_depth[i]),
                int(self.chain[i]),
            ]
            for i in range(len(self))
        )
        write_csv(path, header, rows)

    @classmethod
    def from_csv(cls, path, model: LogDensityModel | None = None):
        """Reload draws written by :meth:`to_csv`.

        Unconstrained draws are recovered through ``model`` when given;
        otherwise the constrained values are reused as-is.
        """
        from .io import read_csv

        header, rows = read_csv(path)
        k = header.index("log_density")
        data = np.array([[float(c) for c in row] for row in rows], dtype=float).reshape(-1, len(header))
        constrained = data[:, :k]
        if model is not None:
            draws = np.array([model.unconstrain(t) for t in constrained]).reshape(len(data), -1)
        else:
            draws = constrained.copy()
        return cls(
            draws=draws,
            constrained_draws=constrained,
            log_densities=data[:, k],
            accepted=data[:, k + 1].astype(bool),
            divergent=data[:, k + 2].astype(bool),
            energy_error=data[:, k + 3],
            accept_prob=data[:, k + 4],
            tree_depth=data[:, k + 5].astype(int),
            chain=data[:, k + 6].astype(int),
            param_names=tuple(header[:k]),
        )


def merge_sample_sets(sets) -> SampleSet:
    """Concatenate per-chain results; ``chain`` tags are preserved."""
    sets = list(sets)
    cat = lambda name: np.concatenate([getattr(s, name) for s in sets])  # noqa: E731
    return SampleSet(
        draws=np.vstack([s.draws for s in sets]),
        constrained_draws=np.vstack([s.constrained_draws for s in sets]),
        log_densities=cat("log_densities"),
        accepted=cat("accepted"),
        divergent=cat("divergent"),
        energy_error=cat("energy_error"),
        accept_prob=cat("accept_prob"),
        tree_depth=cat("tree_depth"),
        chain=cat("chain"),
        param_names=sets[0].param_names,
        info={"chains": [s.info for s in sets]},
    )


class _Recorder:
    def __init__(self, n, dim):
        self.draws = np.empty((n, dim))
        self.lp = np.empty(n)
        self.accepted = np.zeros(n, dtype=bool)
        self.divergent = np.zeros(n, dtype=bool)
        self.energy_error = np.zeros(n)
        self.accept_prob = np.zeros(n)
        self.tree_depth = np.zeros(n, dtype=int)

    def finish(self, model, chain, info):
        n = len(self.draws)
        constrained = np.array([model.constrain(z) for z in self.draws]).reshape(n, -1)
        return SampleSet(
            draws=self.draws,
            constrained_draws=constrained,
            log_densities=self.lp,
            accepted=self.accepted,
            divergent=self.divergent,
            energy_error=self.energy_error,
            accept_prob=self.accept_prob,
            tree_depth=self.tree_depth,
            chain=np.full(n, chain, dtype=int),
            param_names=tuple(model.param_names),
            info=info,
        )


def chain_rng(seed: int, chain: int = 0) -> np.random.Generator:
    """Independent PCG64 stream for one chain."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chain,)))


def initial_point(model: LogDensityModel, rng, need_grad=False):
    for _ in range(MAX_INIT_TRIES):
        z = rng.standard_normal(model.dim)
        if need_grad:
            lp, g = value_and_grad(model, z)
            if math.isfinite(lp) and np.all(np.isfinite(g)):
                return z, lp, g
        else:
            lp = transformed_log_density(model, z)
            if math.isfinite(lp):
                return z, lp, None
    raise InitializationError(
        f"no finite log density after {MAX_INIT_TRIES} standard-normal draws"
    )


def _resolve_init(model, rng, init, need_grad):
    if init is None:
        return initial_point(model, rng, need_grad)
    z = np.array(init, dtype=float).reshape(model.dim)
    if need_grad:
        lp, g = value_and_grad(model, z)
        ok = math.isfinite(lp) and np.all(np.isfinite(g))
    else:
        lp, g = transformed_log_density(model, z), None
        ok = math.isfinite(lp)
    if not ok:
        raise InitializationError(f"initial point has non-finite density: {z}")
    return z, lp, g


# Metropolis-Hastings ----------------------------------------------------


def mh_log_accept_prob(log_pi_current, log_pi_candidate, log_q_forward=0.0, log_q_backward=0.0):
    """``log min(1, pi(c) q(cur|c) / (pi(cur) q(c|cur)))``.

    ``log_q_forward`` is ``log q(candidate | current)`` and ``log_q_backward``
    is ``log q(current | candidate)``; both cancel for symmetric proposals.
    """
    if log_pi_candidate == -math.inf:
        return -math.inf
    return min(0.0, (log_pi_candidate + log_q_backward) - (log_pi_current + log_q_forward))


def mh_transition_matrix(log_pi, proposal):
    """Exact MH kernel on a finite state space.

    ``proposal[i, j]`` is ``q(j | i)``. Off-diagonal entries are
    ``q(j|i) * alpha(i, j)``; the rejected mass stays on the diagonal.
    """
    log_pi = np.asarray(log_pi, dtype=float)
    q = np.asarray(proposal, dtype=float)
    k = len(log_pi)
    P = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            if i != j and q[i, j] > 0:
                a = mh_log_accept_prob(log_pi[i], log_pi[j], math.log(q[i, j]), math.log(q[j, i]))
                P[i, j] = q[i, j] * math.exp(a)
        P[i, i] = 1.0 - (P[i].sum() - P[i, i])
    return P


def metropolis_hastings(model: LogDensityModel, cfg: MhConfig, init=None, chain: int = 0) -> SampleSet:
    """Random-walk Metropolis with a Gaussian proposal of per-dimension std
    ``cfg.proposal_scale``."""
    rng = chain_rng(cfg.seed, chain)
    z, lp, _ = _resolve_init(model, rng, init, need_grad=False)
    scale = np.broadcast_to(np.asarray(cfg.proposal_scale, dtype=float), (model.dim,))
    rec = _Recorder(cfg.n_samples, model.dim)
    n_accept = 0
    for it in range(cfg.n_warmup + cfg.n_samples):
        cand = z + scale * rng.standard_normal(model.dim)
        lp_cand = transformed_log_density(model, cand)
        log_a = mh_log_accept_prob(lp, lp_cand)
        accept = math.log(rng.random()) < log_a if log_a > -math.inf else False
        if accept:
            z, lp = cand, lp_cand
        k = it - cfg.n_warmup
        if k >= 0:
            n_accept += accept
            rec.draws[k] = z
            rec.lp[k] = lp
            rec.accepted[k] = accept
            rec.accept_prob[k] = math.exp(log_a)
    info = {"sampler": "mh", "acceptance_rate": n_accept / cfg.n_samples}
    return rec.finish(model, chain, info)


# leapfrog + HMC ---------------------------------------------------------


def _leapfrog(model, theta, r, grad, eps):
    r = r + 0.5 * eps * grad
    theta = theta + eps * r
    lp, grad = value_and_grad(model, theta)
    r = r + 0.5 * eps * grad
    return theta, r, grad, lp


def leapfrog(model: LogDensityModel, state: PhasePoint, eps: float) -> PhasePoint:
    """One half-kick / drift / half-kick step of Hamiltonian dynamics."""
    _, g = value_and_grad(model, state.position)
    theta, r, _, _ = _leapfrog(model, state.position, state.momentum, g, eps)
    return PhasePoint(theta, r)


def hamiltonian(log_density, momentum):
    return -log_density + 0.5 * float(np.dot(momentum, momentum))


def _hmc_transition(model, z, lp, g, eps, n_leapfrog, rng):
    r0 = rng.standard_normal(model.dim)
    h0 = hamiltonian(lp, r0)
    theta, r, grad, lp_new = z, r0, g, lp
    divergent = False
    for _ in range(n_leapfrog):
        theta, r, grad, lp_new = _leapfrog(model, theta, r, grad, eps)
        if not (math.isfinite(lp_new) and np.all(np.isfinite(grad))):
            divergent = True
            break
    if divergent:
        h1 = math.inf
        log_a = -math.inf
    else:
        h1 = hamiltonian(lp_new, r)
        log_a = min(0.0, h0 - h1) if math.isfinite(h1) else -math.inf
        divergent = not math.isfinite(h1)
    accept = log_a > -math.inf and math.log(rng.random()) < log_a
    if accept:
        # the flipped momentum -r is discarded: momenta are redrawn every iteration
        z, lp, g = theta, lp_new, grad
    return z, lp, g, accept, math.exp(log_a), divergent, abs(h1 - h0)


def hmc(model: LogDensityModel, cfg: HmcConfig, init=None, chain: int = 0) -> SampleSet:
    rng = chain_rng(cfg.seed, chain)
    z, lp, g = _resolve_init(model, rng, init, need_grad=True)
    eps = cfg.step_size
    adapter = DualAveraging(eps, cfg.target_accept) if cfg.target_accept is not None else None
    rec = _Recorder(cfg.n_samples, model.dim)
    for it in range(cfg.n_warmup + cfg.n_samples):
        if adapter is not None and it == cfg.n_warmup:
            eps = adapter.final_step_size if cfg.n_warmup else eps
        z, lp, g, acc, a, div, de = _hmc_transition(model, z, lp, g, eps, cfg.n_leapfrog, rng)
        k = it - cfg.n_warmup
        if k < 0:
            if adapter is not None:
                eps = adapter.update(a)
            continue
        rec.draws[k] = z
        rec.lp[k] = lp
        rec.accepted[k] = acc
        rec.accept_prob[k] = a
        rec.divergent[k] = div
        rec.energy_error[k] = de
    info = {"sampler": "hmc", "step_size": eps, "n_leapfrog": cfg.n_leapfrog}
    return rec.finish(model, chain, info)


# step-size adaptation ---------------------------------------------------


class DualAveraging:
    """Primal-dual averaging of ``log eps`` toward a target acceptance rate.

    Shrinkage point ``log(10 * eps0)``, ``gamma=0.05``, ``t0=10``,
    ``kappa=0.75``.
    """

    def __init__(self, eps0, target_accept=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        if not eps0 > 0:
            raise InvalidArgumentError("initial step size must be positive")
        self.mu = math.log(10.0 * eps0)
        self.target = target_accept
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.t = 0
        self.h_bar = 0.0
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.t += 1
        w = 1.0 / (self.t + self.t0)
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_stat)
        self.log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        eta = self.t ** -self.kappa
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def step_size(self):
        return math.exp(self.log_eps)

    @property
    def final_step_size(self):
        """Averaged iterate, used once warmup ends."""
        return math.exp(self.log_eps_bar) if self.t else math.exp(self.log_eps)


def adapt_step_size(history, target_accept: float = 0.8, eps0: float = 1.0) -> float:
    """Run dual averaging over a sequence of acceptance statistics and return
    the current step size."""
    da = DualAveraging(eps0, target_accept)
    eps = eps0
    for a in history:
        eps = da.update(a)
    return eps


def find_reasonable_step_size(model, z, lp, g, rng, eps=1.0):
    """Halve or double ``eps`` until one leapfrog step has acceptance near 1/2."""
    r = rng.standard_normal(model.dim)
    h0 = hamiltonian(lp, r)

    def log_ratio(e):
        _, r1, _, lp1 = _leapfrog(model, z, r, g, e)
        h1 = hamiltonian(lp1, r1) if math.isfinite(lp1) else math.inf
        return h0 - h1 if math.isfinite(h1) else -math.inf

    lr = log_ratio(eps)
    direction = 1 if lr > math.log(0.5) else -1
    for _ in range(100):
        if direction == 1 and not lr > math.log(0.5):
            break
        if direction == -1 and not lr < math.log(0.5):
            break
        eps = eps * 2.0 ** direction
        lr = log_ratio(eps)
    if direction == 1:
        eps = eps / 2.0
    return eps


# NUTS --------------------------------------------------------------------


def is_u_turn(theta_start, theta_end, momentum) -> bool:
    """True when ``momentum`` points back toward the start: ``r . (theta' - theta) < 0``."""
    return float(np.dot(momentum, np.asarray(theta_end) - np.asarray(theta_start))) < 0


def _no_u_turn(theta_minus, r_minus, theta_plus, r_plus):
    d = theta_plus - theta_minus
    return float(np.dot(d, r_minus)) >= 0 and float(np.dot(d, r_plus)) >= 0


class _Tree(NamedTuple):
    theta_minus: np.ndarray
    r_minus: np.ndarray
    grad_minus: np.ndarray
    theta_plus: np.ndarray
    r_plus: np.ndarray
    grad_plus: np.ndarray
    theta_prop: np.ndarray
    lp_prop: float
    grad_prop: np.ndarray
    r_prop: np.ndarray
    n_valid: int
    keep_going: bool
    alpha_sum: float
    n_alpha: int
    divergent: bool


def _build_tree(model, theta, r, grad, log_u, direction, depth, eps, joint0, rng):
    if depth == 0:
        theta1, r1, grad1, lp1 = _leapfrog(model, theta, r, grad, direction * eps)
        joint = lp1 - 0.5 * float(np.dot(r1, r1))
        if not (math.isfinite(joint) and np.all(np.isfinite(grad1))):
            joint = -math.inf
        n_valid = int(log_u <= joint)
        keep_going = log_u < joint + DIVERGENCE_THRESHOLD
        alpha = math.exp(min(0.0, joint - joint0)) if joint > -math.inf else 0.0
        return _Tree(theta1, r1, grad1, theta1, r1, grad1, theta1, lp1, grad1, r1,
                     n_valid, keep_going, alpha, 1, not keep_going)

    inner = _build_tree(model, theta, r, grad, log_u, direction, depth - 1, eps, joint0, rng)
    if not inner.keep_going:
        return inner
    if direction == -1:
        outer = _build_tree(model, inner.theta_minus, inner.r_minus, inner.grad_minus,
                            log_u, direction, depth - 1, eps, joint0, rng)
        minus = (outer.theta_minus, outer.r_minus, outer.grad_minus)
        plus = (inner.theta_plus, inner.r_plus, inner.grad_plus)
    else:
        outer = _build_tree(model, inner.theta_plus, inner.r_plus, inner.grad_plus,
                            log_u, direction, depth - 1, eps, joint0, rng)
        minus = (inner.theta_minus, inner.r_minus, inner.grad_minus)
        plus = (outer.theta_plus, outer.r_plus, outer.grad_plus)
    n_valid = inner.n_valid + outer.n_valid
    prop = (inner.theta_prop, inner.lp_prop, inner.grad_prop, inner.r_prop)
    # uniform over the union of valid leaves
    if outer.n_valid > 0 and rng.random() < outer.n_valid / n_valid:
        prop = (outer.theta_prop, outer.lp_prop, outer.grad_prop, outer.r_prop)
    keep_going = outer.keep_going and _no_u_turn(minus[0], minus[1], plus[0], plus[1])
    return _Tree(*minus, *plus, *prop, n_valid, keep_going,
                 inner.alpha_sum + outer.alpha_sum, inner.n_alpha + outer.n_alpha,
                 inner.divergent or outer.divergent)


def _nuts_transition(model, z, lp, g, eps, max_depth, rng):
    r0 = rng.standard_normal(model.dim)
    joint0 = lp - 0.5 * float(np.dot(r0, r0))
    # log of u ~ Uniform(0, exp(joint0))
    log_u = joint0 - rng.exponential()
    theta_minus = theta_plus = z
    r_minus = r_plus = r0
    grad_minus = grad_plus = g
    new = (z, lp, g, r0)
    n_valid = 1
    keep_going = True
    depth = 0
    alpha_sum, n_alpha = 0.0, 0
    divergent = False
    while keep_going and depth < max(max_depth, 1):
        direction = 1 if rng.random() < 0.5 else -1
        if direction == -1:
            t = _build_tree(model, theta_minus, r_minus, grad_minus, log_u, -1, depth, eps, joint0, rng)
            theta_minus, r_minus, grad_minus = t.theta_minus, t.r_minus, t.grad_minus
        else:
            t = _build_tree(model, theta_plus, r_plus, grad_plus, log_u, 1, depth, eps, joint0, rng)
            theta_plus, r_plus, grad_plus = t.theta_plus, t.r_plus, t.grad_plus
        if t.keep_going and t.n_valid > 0 and rng.random() < t.n_valid / (n_valid + t.n_valid):
            new = (t.theta_prop, t.lp_prop, t.grad_prop, t.r_prop)
        if t.keep_going:
            n_valid += t.n_valid
        alpha_sum += t.alpha_sum
        n_alpha += t.n_alpha
        divergent = divergent or t.divergent
        keep_going = t.keep_going and _no_u_turn(theta_minus, r_minus, theta_plus, r_plus)
        depth += 1
    accept_stat = alpha_sum / n_alpha if n_alpha else 0.0
    moved = new[0] is not z
    energy_error = abs(hamiltonian(new[1], new[3]) + joint0)
    return new[:3], depth, accept_stat, divergent, moved, energy_error


def nuts(model: LogDensityModel, cfg: NutsConfig, init=None, chain: int = 0) -> SampleSet:
    rng = chain_rng(cfg.seed, chain)
    z, lp, g = _resolve_init(model, rng, init, need_grad=True)
    eps = cfg.step_size if cfg.step_size is not None else find_reasonable_step_size(model, z, lp, g, rng)
    adapter = DualAveraging(eps, cfg.target_accept)
    rec = _Recorder(cfg.n_samples, model.dim)
    for it in range(cfg.n_warmup + cfg.n_samples):
        if it == cfg.n_warmup and cfg.n_warmup > 0:
            eps = adapter.final_step_size
        (z, lp, g), depth, a, div, moved, de = _nuts_transition(
            model, z, lp, g, eps, cfg.max_tree_depth, rng
        )
        k = it - cfg.n_warmup
        if k < 0:
            eps = adapter.update(a)
            continue
        rec.draws[k] = z
        rec.lp[k] = lp
        rec.accepted[k] = moved
        rec.accept_prob[k] = a
        rec.divergent[k] = div
        rec.tree_depth[k] = depth
        rec.energy_error[k] = de
    info = {"sampler": "nuts", "step_size": eps, "max_tree_depth": cfg.max_tree_depth}
    return rec.finish(model, chain, info)


# multiple chains --------------------------------------------------------

SAMPLERS = {"mh": metropolis_hastings, "hmc": hmc, "nuts": nuts}


def sample_chains(sampler, model: LogDensityModel, cfg, n_chains: int = 1, max_workers=None) -> SampleSet:
    """Run ``n_chains`` independent chains (one RNG stream each) and merge."""
    if isinstance(sampler, str):
        sampler = SAMPLERS[sampler]
    if n_chains == 1:
        return sampler(model, cfg, chain=0)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(lambda c: sampler(model, cfg, chain=c), range(n_chains)))
    return merge_sample_sets(results)


def with_seed(cfg, seed):
    return replace(cfg, seed=seed)
