"""Truncated stick-breaking MCMC for the mixture model, plus the
two-component baseline sampler and the conditional (frozen-partition)
refit chain.

One iteration cycles through: disease probabilities, cluster
trajectories (adaptive random-walk Metropolis, exact prior draws for
empty clusters), dependence parameters (log-scale and logit-scale
random walks), the concentration parameter, cluster assignments, stick
fractions, and the base-measure hyperparameters.  Per-iteration
conditional and marginal data log likelihoods are recorded as the main
convergence diagnostics.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import betaln, gammaln

from .model import (
    BaseMeasureHyper,
    DependenceParams,
    ModelState,
    ObservationBlocks,
    stick_breaking_weights,
)
from .rng import substream

# ---------------------------------------------------------------------------
# configuration

PRELIMINARY_TRUNCATION = 50
TRUNCATION_RANGE = (5, 50)
SCALAR_TARGET_ACCEPT = 0.44


def _identity3():
    return np.eye(3)


def _ones3():
    return np.ones(3)


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters; defaults follow the model's reference priors."""

    gamma2_shape: float = 0.1
    gamma2_rate: float = 0.1
    sigma2_shape: float = 0.1
    sigma2_rate: float = 0.1
    rho_a: float = 1.0            # Beta prior on rho; (1, 1) is uniform
    rho_b: float = 1.0
    alpha_shape: float = 1.0      # Gamma (shape, rate) prior on concentration
    alpha_rate: float = 1.0
    theta_star_mean: np.ndarray = field(default_factory=_ones3)
    theta_star_prec: float = 1e-2
    Sigma_df: float = 5.0
    Sigma_scale: np.ndarray = field(default_factory=_identity3)
    a: float = 0.5
    b: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "theta_star_mean", np.asarray(self.theta_star_mean, dtype=float))
        object.__setattr__(self, "Sigma_scale", np.asarray(self.Sigma_scale, dtype=float))


@dataclass(frozen=True)
class SamplerConfig:
    """Chain length, truncation, seeding, and adaptation settings.

    ``truncation_H="auto"`` sizes the truncation from a preliminary run
    (twice the 95th percentile of the nonempty-cluster count).
    ``likelihood_off`` is a test hook that drops every data term so the
    chain samples the prior.  ``conditional_skip`` selects which steps a
    conditional refit omits: "paper" freezes assignments and the
    concentration update, "alt" freezes assignments and sticks.
    """

    iterations: int = 20000
    burn_in: int = 10000
    thin: int = 10
    truncation_H: int | str = "auto"
    preliminary_iterations: int = 2000
    seed: int = 0
    adapt_target_accept: float = 0.234
    adapt: bool = True
    likelihood_off: bool = False
    conditional_skip: str = "paper"
    priors: PriorSpec = field(default_factory=PriorSpec)

    def __post_init__(self):
        if self.iterations <= 0 or not (0 <= self.burn_in < self.iterations):
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.truncation_H != "auto" and int(self.truncation_H) < 1:
            raise ValueError("truncation_H must be 'auto' or a positive integer")
        if not (0 < self.adapt_target_accept < 1):
            raise ValueError("adapt_target_accept must lie in (0, 1)")
        if self.conditional_skip not in ("paper", "alt"):
            raise ValueError("conditional_skip must be 'paper' or 'alt'")

    @property
    def n_retained(self):
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class PosteriorTrace:
    """Retained draws plus per-iteration diagnostics for one chain."""

    draws: list
    retained_iterations: np.ndarray
    cond_loglik: np.ndarray
    marg_loglik: np.ndarray
    nonempty_counts: np.ndarray
    accept_rates: dict
    seed: int
    config: SamplerConfig

    def __len__(self):
        return len(self.draws)


@dataclass(frozen=True)
class TwoComponentState:
    """Baseline model state: one trajectory and dependence set per group."""

    phi: float
    thetas: np.ndarray                 # (2, 3); row d is the group-d trajectory
    deps: tuple                        # (DependenceParams, DependenceParams)
    base: BaseMeasureHyper

    def __post_init__(self):
        if not (0.0 <= self.phi <= 1.0):
            raise ValueError("phi must lie in [0, 1]")
        thetas = np.asarray(self.thetas, dtype=float)
        if thetas.shape != (2, 3):
            raise ValueError("thetas must be (2, 3)")
        object.__setattr__(self, "thetas", thetas)


@dataclass
class TwoComponentTrace:
    draws: list
    retained_iterations: np.ndarray
    loglik: np.ndarray
    accept_rates: dict
    seed: int
    config: SamplerConfig

    def __len__(self):
        return len(self.draws)


# ---------------------------------------------------------------------------
# adaptive random-walk proposals

class AdaptiveRW:
    """Random-walk proposal with Robbins-Monro scale and covariance
    adaptation toward a target acceptance rate.

    The step size adapts as ``count**-decay`` and the proposal
    covariance tracks the empirical covariance of visited points.
    ``freeze()`` stops adaptation (call at end of burn-in) while
    acceptance counting continues.
    """

    def __init__(self, dim, target, init_scale=None, decay=0.6):
        self.dim = dim
        self.target = target
        self.decay = decay
        self.log_scale = math.log(init_scale if init_scale is not None else 2.38 / math.sqrt(dim))
        self.mean = np.zeros(dim)
        self.cov = np.eye(dim)
        self._chol = np.eye(dim)
        self._count = 0
        self.proposals = 0
        self.accepted = 0
        self.frozen = False

    def propose(self, x, rng):
        step = self._chol @ rng.standard_normal(self.dim)
        return np.asarray(x, dtype=float) + math.exp(self.log_scale) * step

    def observe(self, x, accept_prob, accepted):
        self.proposals += 1
        self.accepted += bool(accepted)
        if self.frozen:
            return
        self._count += 1
        eta = self._count ** -self.decay
        self.log_scale += eta * (accept_prob - self.target)
        x = np.asarray(x, dtype=float)
        d = x - self.mean
        self.mean = self.mean + eta * d
        self.cov = self.cov + eta * (np.outer(d, d) - self.cov)
        self._chol = np.linalg.cholesky(self.cov + 1e-9 * np.eye(self.dim))

    def freeze(self):
        self.frozen = True

    @property
    def accept_rate(self):
        return self.accepted / self.proposals if self.proposals else float("nan")


def _make_adapters(H, config):
    adapters = {"gamma2": AdaptiveRW(1, SCALAR_TARGET_ACCEPT, init_scale=0.5),
                "sigma2": AdaptiveRW(1, SCALAR_TARGET_ACCEPT, init_scale=0.5),
                "rho": AdaptiveRW(1, SCALAR_TARGET_ACCEPT, init_scale=0.5)}
    for h in range(H):
        adapters[f"theta_{h}"] = AdaptiveRW(3, config.adapt_target_accept, init_scale=0.3)
    return adapters


# ---------------------------------------------------------------------------
# small density and state helpers

def _accept_prob(log_r):
    if math.isnan(log_r):
        return 0.0
    return min(1.0, math.exp(min(log_r, 0.0)))


def _bern_matrix(d, phis):
    """(N, H) Bernoulli log pmf for 0/1 labels; faster than xlogy here."""
    with np.errstate(divide="ignore"):
        logp = np.log(phis)
        log1mp = np.log1p(-phis)
    return np.where(d[:, None] == 1.0, logp[None, :], log1mp[None, :])


def _invgamma_logpdf(x, shape, rate):
    return shape * math.log(rate) - gammaln(shape) - (shape + 1.0) * math.log(x) - rate / x


def _beta_logpdf(x, a, b):
    return (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - betaln(a, b)


def _mvn3_logpdf_many(X, mean, cov_chol):
    """Log MVN3 density for each row of X given a Cholesky factor."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = np.linalg.solve(cov_chol, (X - mean).T)
    return -0.5 * (3.0 * np.log(2.0 * np.pi) + (z * z).sum(axis=0)) \
        - np.log(np.diagonal(cov_chol)).sum()


def inv_wishart_rvs(df, scale, rng):
    """Draw from the inverse Wishart with density proportional to
    |X|^{-(df+p+1)/2} exp(-tr(scale X^{-1})/2), via the Bartlett
    decomposition."""
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    if df <= p - 1:
        raise ValueError("df must exceed p - 1")
    A = np.zeros((p, p))
    A[np.diag_indices(p)] = np.sqrt(rng.chisquare(df - np.arange(p)))
    A[np.tril_indices(p, -1)] = rng.standard_normal(p * (p - 1) // 2)
    L = np.linalg.cholesky(scale)
    X = np.linalg.solve(A, L.T)                # A^{-1} L'
    return X.T @ X


def _as_blocks(data):
    if isinstance(data, ObservationBlocks):
        return data
    return ObservationBlocks.from_patients(data)


def _replace_state(state, **changes):
    fields = dict(assignments=state.assignments, sticks=state.sticks,
                  weights=state.weights, phis=state.phis, thetas=state.thetas,
                  dep=state.dep, alpha=state.alpha, base=state.base)
    fields.update(changes)
    new = ModelState._unchecked(**fields)
    if "sticks" not in changes:
        cache = getattr(state, "_log1m_sticks", None)
        if cache is not None:
            object.__setattr__(new, "_log1m_sticks", cache)
    return new


class _Cache:
    """Covariance factors and the (N, H) log-likelihood matrix for the
    current state; kept coherent across the update steps of one sweep."""

    __slots__ = ("factors", "matrix")

    def __init__(self, factors=None, matrix=None):
        self.factors = factors
        self.matrix = matrix


def _ensure_cache(cache, blocks, state):
    if cache is None:
        cache = _Cache()
    if cache.factors is None:
        cache.factors = blocks.cov_factors(state.dep)
    if cache.matrix is None:
        cache.matrix = blocks.loglik_matrix(cache.factors, state.thetas)
    return cache


# ---------------------------------------------------------------------------
# update steps

def update_phi(state, data, rng, likelihood_off=False):
    """Conjugate Beta update of every cluster's disease probability.

    Cluster h draws Beta(a + #diseased members, b + #healthy members);
    empty clusters draw from the Beta(a, b) base measure.
    """
    blocks = _as_blocks(data)
    H = state.n_components
    a, b = state.base.a, state.base.b
    if likelihood_off:
        phis = rng.beta(a, b, size=H)
    else:
        d = blocks.diseases
        if np.any(np.isnan(d)):
            raise ValueError("update_phi requires labeled patients")
        n1 = np.bincount(state.assignments[d == 1.0], minlength=H)
        n0 = np.bincount(state.assignments[d == 0.0], minlength=H)
        phis = rng.beta(a + n1, b + n0)
    return _replace_state(state, phis=phis)


def update_theta_clusters(state, data, rng, adapters=None, cache=None,
                          likelihood_off=False):
    """One Metropolis step per nonempty cluster's trajectory vector;
    empty clusters are redrawn exactly from the MVN base measure.

    ``adapters`` maps ``"theta_<h>"`` to AdaptiveRW instances; without
    them a fixed-scale random walk is used.  ``cache`` (internal) lets
    the chain reuse covariance factors and keeps the likelihood matrix
    in sync with accepted moves.
    """
    blocks = _as_blocks(data)
    H = state.n_components
    counts = np.bincount(state.assignments, minlength=H)
    Sigma_chol = np.linalg.cholesky(state.base.Sigma)

    empty = np.ones(H, dtype=bool) if likelihood_off else counts == 0
    candidates = np.empty((H, 3))
    n_empty = int(empty.sum())
    if n_empty:
        z = rng.standard_normal((n_empty, 3))
        candidates[empty] = state.base.theta_star + z @ Sigma_chol.T
    nonempty = np.flatnonzero(~empty)
    for h in nonempty:
        adapter = adapters.get(f"theta_{h}") if adapters else None
        if adapter is not None:
            candidates[h] = adapter.propose(state.thetas[h], rng)
        else:
            candidates[h] = state.thetas[h] + 0.1 * rng.standard_normal(3)

    if likelihood_off:
        return _replace_state(state, thetas=candidates)

    cache = _ensure_cache(cache, blocks, state)
    cand_cols = blocks.loglik_matrix(cache.factors, candidates)     # (N, H)
    accept = empty.copy()                                           # prior draws always land
    if nonempty.size:
        onehot = state.assignments[:, None] == np.arange(H)[None, :]
        cur_sums = np.where(onehot, cache.matrix, 0.0).sum(axis=0)
        cand_sums = np.where(onehot, cand_cols, 0.0).sum(axis=0)
        cur_prior = _mvn3_logpdf_many(state.thetas, state.base.theta_star, Sigma_chol)
        cand_prior = _mvn3_logpdf_many(candidates, state.base.theta_star, Sigma_chol)
        with np.errstate(invalid="ignore"):
            log_r = cand_sums - cur_sums + cand_prior - cur_prior
        log_u = np.log(rng.random(H))
        mh_accept = log_u < log_r                                   # NaN compares False
        accept[nonempty] = mh_accept[nonempty]
        if adapters is not None:
            for h in nonempty:
                adapters[f"theta_{h}"].observe(
                    candidates[h] if accept[h] else state.thetas[h],
                    _accept_prob(float(log_r[h])), bool(accept[h]))

    thetas = np.where(accept[:, None], candidates, state.thetas)
    cache.matrix = np.where(accept[None, :], cand_cols, cache.matrix)
    return _replace_state(state, thetas=thetas)


def _dep_log_prior(dep, priors):
    return (_invgamma_logpdf(dep.gamma2, priors.gamma2_shape, priors.gamma2_rate)
            + _invgamma_logpdf(dep.sigma2, priors.sigma2_shape, priors.sigma2_rate)
            + _beta_logpdf(dep.rho, priors.rho_a, priors.rho_b))


def _update_dependence_core(dep, blocks, resid, priors, rng, adapters=None,
                            likelihood_off=False, cur_factors=None, cur_ll=None):
    """Sequential MH updates of gamma2, sigma2 (log-normal pseudo random
    walks, proposal correction included) and rho (logit-scale walk with
    Jacobian), at fixed residuals.  Returns the new parameters, their
    covariance factors, and the total log likelihood.

    The autocorrelation matrix depends only on rho, so the gamma2 and
    sigma2 proposals reuse it and only rebuild the covariance scale.
    """
    gamma2, sigma2, rho = dep.gamma2, dep.sigma2, dep.rho
    R = None
    factors = cur_factors

    def loglik(g2, s2, corr):
        if likelihood_off:
            return None, 0.0
        f = blocks.cov_factors_from_corr(corr, g2, s2)
        return f, float(blocks.loglik_quad(f, resid).sum())

    if not likelihood_off:
        R = blocks.corr(rho)
        if factors is None or cur_ll is None:
            factors, cur_ll = loglik(gamma2, sigma2, R)
    else:
        cur_ll = 0.0

    for name in ("gamma2", "sigma2", "rho"):
        adapter = adapters.get(name) if adapters else None
        if name == "rho":
            cur_t = math.log(rho) - math.log1p(-rho)
        else:
            cur_t = math.log(gamma2 if name == "gamma2" else sigma2)
        if adapter is not None:
            prop_t = float(adapter.propose(np.array([cur_t]), rng)[0])
        else:
            prop_t = cur_t + 0.5 * rng.standard_normal()

        cand = None
        cand_R = R
        if name == "rho":
            # saturating logistic; math.exp would overflow below -709
            prop_val = 0.0 if prop_t < -700 else 1.0 / (1.0 + math.exp(-min(prop_t, 700.0)))
            # log Jacobian of expit: log rho + log(1 - rho), stable form
            correction = (-np.logaddexp(0.0, -prop_t) - np.logaddexp(0.0, prop_t)
                          + np.logaddexp(0.0, -cur_t) + np.logaddexp(0.0, cur_t))
            if 0.0 < prop_val < 1.0:
                cand = DependenceParams(gamma2, sigma2, prop_val)
                if not likelihood_off:
                    cand_R = blocks.corr(prop_val)
        else:
            # exp would overflow above ~709; such proposals are rejected
            prop_val = math.exp(prop_t) if abs(prop_t) < 700 else 0.0
            correction = prop_t - cur_t  # log-normal proposal asymmetry
            if 0.0 < prop_val < np.inf:
                cand = DependenceParams(prop_val, sigma2, rho) if name == "gamma2" \
                    else DependenceParams(gamma2, prop_val, rho)

        accepted = False
        log_r = -np.inf
        if cand is not None:
            try:
                cand_factors, cand_ll = loglik(cand.gamma2, cand.sigma2, cand_R)
            except np.linalg.LinAlgError:
                cand_factors, cand_ll = None, None
            if cand_ll is not None:
                cur = DependenceParams(gamma2, sigma2, rho)
                log_r = (_dep_log_prior(cand, priors) - _dep_log_prior(cur, priors)
                         + cand_ll - cur_ll + correction)
                accepted = bool(math.log(rng.random()) < log_r)
                if accepted:
                    gamma2, sigma2, rho = cand.gamma2, cand.sigma2, cand.rho
                    factors, cur_ll, R = cand_factors, cand_ll, cand_R
        if adapter is not None:
            new_t = (math.log(rho) - math.log1p(-rho)) if name == "rho" else \
                math.log(gamma2 if name == "gamma2" else sigma2)
            adapter.observe(np.array([new_t]), _accept_prob(float(log_r)), accepted)

    return DependenceParams(gamma2, sigma2, rho), factors, cur_ll


def update_dependence(state, data, rng, adapters=None, priors=None, cache=None,
                      likelihood_off=False):
    """MH sweep over the dependence parameters, targeting the prior
    times the product of patient likelihoods at the current cluster
    assignments (random intercepts integrated out)."""
    blocks = _as_blocks(data)
    priors = priors if priors is not None else PriorSpec()
    if likelihood_off:
        resid, cur_factors, cur_ll = None, None, 0.0
    else:
        resid = blocks.residuals(state.thetas, state.assignments)
        cur_factors = cache.factors if cache is not None and cache.factors is not None else None
        cur_ll = None
        if cur_factors is not None and cache.matrix is not None:
            cur_ll = float(cache.matrix[np.arange(blocks.n_patients), state.assignments].sum())
    dep, factors, _ = _update_dependence_core(
        state.dep, blocks, resid, priors, rng, adapters=adapters,
        likelihood_off=likelihood_off, cur_factors=cur_factors, cur_ll=cur_ll)
    if cache is not None and not likelihood_off and dep != state.dep:
        cache.factors = factors
        cache.matrix = blocks.loglik_matrix(factors, state.thetas)
    return _replace_state(state, dep=dep)


def update_alpha(state, rng, priors=None):
    """Conjugate Gamma update of the concentration parameter.

    With a Gamma(a0, b0) prior and sticks V_h ~ Beta(1, alpha), the
    posterior is Gamma(a0 + H - 1, b0 - sum_{h<H} log(1 - V_h)); the
    subtraction keeps the rate positive (each term is negative).

    Sticks saturate in float64 (V rounds to 1 when alpha is small), so
    the exact log(1 - V) values recorded by update_sticks are preferred
    over recomputing from the stored sticks.
    """
    priors = priors if priors is not None else PriorSpec()
    log1m = getattr(state, "_log1m_sticks", None)
    if log1m is None:
        log1m = np.log1p(-state.sticks[:-1])
    rate = priors.alpha_rate - float(np.sum(log1m))
    shape = priors.alpha_shape + state.n_components - 1
    alpha = rng.gamma(shape, 1.0 / rate)
    return _replace_state(state, alpha=max(alpha, 1e-300))


def update_assignments(state, data, rng, cache=None, likelihood_off=False):
    """Multinomial reassignment of every patient given weights, disease
    terms, and trajectory likelihoods, computed in log space."""
    blocks = _as_blocks(data)
    with np.errstate(divide="ignore"):
        logits = np.broadcast_to(np.log(state.weights),
                                 (blocks.n_patients, state.n_components)).copy()
    if not likelihood_off:
        d = blocks.diseases
        if np.any(np.isnan(d)):
            raise ValueError("update_assignments requires labeled patients")
        cache = _ensure_cache(cache, blocks, state)
        logits += _bern_matrix(d, state.phis) + cache.matrix
    finite = np.isfinite(logits).any(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise ValueError(f"assignment probabilities vanished for patient index {bad}; "
                         "state is numerically corrupt")
    # Gumbel-max draw from each row's categorical distribution
    assignments = np.argmax(logits + rng.gumbel(size=logits.shape), axis=1)
    return _replace_state(state, assignments=assignments)


def update_sticks(state, rng):
    """Conjugate Beta update of stick fractions; the last stick stays 1
    and the weights are recomputed by stick breaking.

    The complement 1 - V_h ~ Beta(alpha + m_h, 1 + n_h) is drawn
    directly so its logarithm stays exact when V_h saturates to 1 in
    float64; the concentration update consumes those logs.
    """
    H = state.n_components
    counts = np.bincount(state.assignments, minlength=H).astype(float)
    greater = counts[::-1].cumsum()[::-1] - counts   # patients in later clusters
    v = np.ones(H)
    log1m = np.zeros(0)
    if H > 1:
        comp = rng.beta(state.alpha + greater[:-1], 1.0 + counts[:-1])
        log1m = np.log(np.maximum(comp, 1e-300))
        v[:-1] = np.clip(1.0 - comp, 1e-12, 1.0 - 1e-12)
    new = _replace_state(state, sticks=v, weights=stick_breaking_weights(v))
    object.__setattr__(new, "_log1m_sticks", log1m)
    return new


def _update_base_core(thetas, base, priors, rng):
    H = thetas.shape[0]
    eye = np.eye(3)
    Sigma_inv = np.linalg.solve(base.Sigma, eye)
    A = priors.theta_star_prec * eye + H * Sigma_inv
    A_chol = np.linalg.cholesky(A)
    rhs = priors.theta_star_prec * priors.theta_star_mean + Sigma_inv @ thetas.sum(axis=0)
    m = np.linalg.solve(A, rhs)
    # V = A^{-1}; theta_star = m + chol(V) z realized as a triangular solve
    z = rng.standard_normal(3)
    theta_star = m + np.linalg.solve(A_chol.T, z)
    centered = thetas - theta_star
    Sigma = inv_wishart_rvs(priors.Sigma_df + H,
                            priors.Sigma_scale + centered.T @ centered, rng)
    return BaseMeasureHyper(theta_star, Sigma, base.a, base.b)


def update_base_measure(state, rng, priors=None):
    """Gibbs update of the base-measure location (conjugate normal) and
    scale (conjugate inverse Wishart), using all H cluster trajectories."""
    priors = priors if priors is not None else PriorSpec()
    base = _update_base_core(state.thetas, state.base, priors, rng)
    return _replace_state(state, base=base)


# ---------------------------------------------------------------------------
# initialization and the main chains

def _patient_summaries(blocks):
    """Per-patient (mean value, least-squares slope) feature matrix."""
    mask = blocks.obs_mask
    n = blocks.n_obs.astype(float)
    mean_t = blocks.times.sum(axis=1) / n
    mean_y = blocks.values.sum(axis=1) / n
    tc = np.where(mask, blocks.times - mean_t[:, None], 0.0)
    denom = (tc ** 2).sum(axis=1)
    slope = np.where(denom > 0, (tc * blocks.values).sum(axis=1) / np.where(denom > 0, denom, 1.0), 0.0)
    return np.column_stack([mean_y, slope])


def _kmeans_seed(features, k, rng, n_iter=10):
    x = np.asarray(features, dtype=float)
    scale = x.std(axis=0)
    x = x / np.where(scale > 0, scale, 1.0)
    n = x.shape[0]
    k = min(k, n)
    centers = x[rng.choice(n, size=k, replace=False)]
    labels = np.zeros(n, dtype=np.intp)
    for _ in range(n_iter):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dist.argmin(axis=1)
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
    return labels


def _coarse_sigmoid_fit(blocks):
    """Deterministic grid fit of one sigmoid to the pooled observations.

    Initializing trajectories at the prior mean can strand the MH chain
    in the step-function mode of the sigmoid (huge rate, huge offset);
    a 27-point grid search lands the chain in the data-supported basin.
    """
    t = blocks.times[blocks.obs_mask]
    y = blocks.values[blocks.obs_mask]
    from scipy.special import expit
    asymptotes = np.quantile(y, [0.75, 0.9, 1.0])
    best, best_sse = None, np.inf
    for a in asymptotes:
        for r in (0.05, 0.15, 0.3):
            for o in (-1.0, -2.0, -4.0):
                sse = float(((y - a * expit(r * t + o)) ** 2).sum())
                if sse < best_sse:
                    best, best_sse = (a, r, o), sse
    return np.array(best)


def _residual_variance(blocks):
    multi = blocks.n_obs >= 2
    if multi.any():
        n = blocks.n_obs[multi].astype(float)
        values = blocks.values[multi]
        mask = blocks.obs_mask[multi]
        mean_y = values.sum(axis=1) / n
        dev = np.where(mask, values - mean_y[:, None], 0.0)
        dof = (n - 1.0).sum()
        return max(float((dev ** 2).sum() / dof), 1e-3)
    all_values = blocks.values[blocks.obs_mask]
    return max(float(np.var(all_values)), 1e-3)


def _initial_state(blocks, H, config, rng, assignments=None):
    priors = config.priors
    if assignments is None:
        k0 = min(H, 8)
        assignments = _kmeans_seed(_patient_summaries(blocks), k0, rng)
    assignments = np.asarray(assignments, dtype=np.intp)
    var0 = _residual_variance(blocks)
    dep = DependenceParams(gamma2=var0 / 2.0, sigma2=var0 / 2.0, rho=0.5)
    base = BaseMeasureHyper(
        theta_star=_coarse_sigmoid_fit(blocks),
        Sigma=priors.Sigma_scale / max(priors.Sigma_df - 4.0, 1.0),  # prior mean of Sigma
        a=priors.a, b=priors.b)
    counts = np.bincount(assignments, minlength=H).astype(float)
    greater = counts[::-1].cumsum()[::-1] - counts
    v = np.ones(H)
    if H > 1:
        v[:-1] = np.clip((1.0 + counts[:-1]) / (2.0 + counts[:-1] + greater[:-1]),
                         1e-12, 1.0 - 1e-12)
    return ModelState(
        assignments=assignments,
        sticks=v,
        weights=stick_breaking_weights(v),
        phis=np.full(H, 0.5),
        thetas=np.tile(base.theta_star, (H, 1)),
        dep=dep,
        alpha=1.0,
        base=base,
    )


def _validate_training_data(patients):
    for p in patients:
        if p.disease is None:
            raise ValueError(f"patient {p.id} has no disease label; "
                             "training data must be fully labeled")
        if p.n_obs == 0:
            raise ValueError(f"patient {p.id} has no observations")


def _diagnostics(state, blocks, matrix):
    c = state.assignments
    d = blocks.diseases
    bern = _bern_matrix(d, state.phis)
    n = blocks.n_patients
    idx = np.arange(n)
    cond = matrix[idx, c].sum() + bern[idx, c].sum()
    with np.errstate(divide="ignore"):
        logits = np.log(state.weights)[None, :] + bern + matrix
    top = logits.max(axis=1)
    marg = (top + np.log(np.exp(logits - top[:, None]).sum(axis=1))).sum()
    return float(cond), float(marg)


def truncation_from_counts(counts):
    """ceil(2 x 95th percentile) of nonempty-cluster counts, clamped."""
    q95 = np.quantile(np.asarray(counts), 0.95, method="higher")
    lo, hi = TRUNCATION_RANGE
    return int(np.clip(math.ceil(2.0 * q95), lo, hi))


def select_truncation(data, config=None, rng=None):
    """Choose the stick-breaking truncation from a preliminary run:
    twice the 95th percentile of the post-burn-in nonempty-cluster
    count, clamped to a sane range."""
    config = config if config is not None else SamplerConfig()
    prelim = replace(config,
                     iterations=config.preliminary_iterations,
                     burn_in=config.preliminary_iterations // 2,
                     thin=1,
                     truncation_H=PRELIMINARY_TRUNCATION)
    trace = run_chain(data, prelim, rng=rng)
    return truncation_from_counts(trace.nonempty_counts[prelim.burn_in:])


def run_chain(data, config=None, rng=None, frozen_assignments=None):
    """Run the full sampler and return a PosteriorTrace.

    ``data`` is a sequence of labeled patients.  Reproducible given
    ``config.seed`` (or an explicitly passed generator).  When
    ``frozen_assignments`` is given the chain runs in conditional mode:
    assignments stay fixed and the steps named by
    ``config.conditional_skip`` are omitted.
    """
    config = config if config is not None else SamplerConfig()
    patients = list(data)
    _validate_training_data(patients)
    blocks = ObservationBlocks.from_patients(patients)
    if rng is None:
        rng = substream(config.seed, "chain")

    conditional = frozen_assignments is not None
    if conditional:
        frozen_assignments = np.asarray(frozen_assignments, dtype=np.intp)
        k = int(frozen_assignments.max()) + 1
        if config.truncation_H == "auto":
            H = k
        else:
            H = int(config.truncation_H)
            if k > H:
                raise ValueError(f"partition has {k} clusters but truncation_H={H}")
    elif config.truncation_H == "auto":
        H = select_truncation(data, config, rng=rng)
    else:
        H = int(config.truncation_H)

    state = _initial_state(blocks, H, config, rng,
                           assignments=frozen_assignments if conditional else None)
    adapters = _make_adapters(H, config) if config.adapt else None
    priors = config.priors
    off = config.likelihood_off

    cache = _Cache()
    if not off:
        cache.factors = blocks.cov_factors(state.dep)
        cache.matrix = blocks.loglik_matrix(cache.factors, state.thetas)
    else:
        cache.matrix = np.zeros((blocks.n_patients, H))

    skip_alpha = conditional and config.conditional_skip == "paper"
    skip_sticks = conditional and config.conditional_skip == "alt"

    n_iter, burn_in, thin = config.iterations, config.burn_in, config.thin
    draws = []
    retained_iterations = []
    cond_ll = np.empty(n_iter)
    marg_ll = np.empty(n_iter)
    nonempty = np.empty(n_iter, dtype=np.intp)

    for it in range(n_iter):
        state = update_phi(state, blocks, rng, likelihood_off=off)
        state = update_theta_clusters(state, blocks, rng, adapters=adapters,
                                      cache=None if off else cache, likelihood_off=off)
        state = update_dependence(state, blocks, rng, adapters=adapters,
                                  priors=priors, cache=None if off else cache,
                                  likelihood_off=off)
        if not skip_alpha:
            state = update_alpha(state, rng, priors=priors)
        if not conditional:
            state = update_assignments(state, blocks, rng,
                                       cache=None if off else cache,
                                       likelihood_off=off)
        if not skip_sticks:
            state = update_sticks(state, rng)
        state = update_base_measure(state, rng, priors=priors)

        cond_ll[it], marg_ll[it] = _diagnostics(state, blocks, cache.matrix)
        nonempty[it] = state.nonempty_count()

        if adapters is not None and it + 1 == burn_in:
            for ad in adapters.values():
                ad.freeze()
        if it >= burn_in and (it - burn_in + 1) % thin == 0:
            state.validate()
            draws.append(state)
            retained_iterations.append(it)

    accept_rates = {k: ad.accept_rate for k, ad in (adapters or {}).items()}
    return PosteriorTrace(
        draws=draws,
        retained_iterations=np.asarray(retained_iterations, dtype=np.intp),
        cond_loglik=cond_ll,
        marg_loglik=marg_ll,
        nonempty_counts=nonempty,
        accept_rates=accept_rates,
        seed=config.seed,
        config=config,
    )


def run_conditional_chain(data, partition, config=None, rng=None):
    """Refit with the partition frozen: identified per-cluster draws.

    ``partition`` is a PartitionEstimate or a 1..k label vector.  By
    default the concentration update is skipped along with the
    assignment step; set ``config.conditional_skip="alt"`` to instead
    keep the concentration update and freeze the sticks.
    """
    labels = np.asarray(getattr(partition, "labels", partition), dtype=np.intp)
    if labels.min() < 1:
        raise ValueError("partition labels must be 1-based cluster ids")
    return run_chain(data, config=config, rng=rng, frozen_assignments=labels - 1)


# ---------------------------------------------------------------------------
# two-component baseline

def run_two_component(data, config=None, rng=None):
    """Fit the classic baseline: one trajectory and dependence set per
    disease group, a shared prevalence parameter, and the same priors
    as the mixture model (the base measure is updated over the two
    group trajectories)."""
    config = config if config is not None else SamplerConfig()
    patients = list(data)
    _validate_training_data(patients)
    groups = [[p for p in patients if p.disease == d] for d in (0, 1)]
    if not groups[0] or not groups[1]:
        raise ValueError("two-component model needs both disease classes present")
    group_blocks = [ObservationBlocks.from_patients(g) for g in groups]
    if rng is None:
        rng = substream(config.seed, "two-component")
    priors = config.priors

    var0 = [_residual_variance(b) for b in group_blocks]
    deps = tuple(DependenceParams(v / 2.0, v / 2.0, 0.5) for v in var0)
    theta_init = np.stack([_coarse_sigmoid_fit(b) for b in group_blocks])
    base = BaseMeasureHyper(
        theta_star=theta_init.mean(axis=0),
        Sigma=priors.Sigma_scale / max(priors.Sigma_df - 4.0, 1.0),
        a=priors.a, b=priors.b)
    state = TwoComponentState(phi=0.5, thetas=theta_init, deps=deps, base=base)

    adapters = None
    if config.adapt:
        adapters = {}
        for d in (0, 1):
            adapters[f"theta_{d}"] = AdaptiveRW(3, config.adapt_target_accept, init_scale=0.3)
            for name in ("gamma2", "sigma2", "rho"):
                adapters[f"{name}_{d}"] = AdaptiveRW(1, SCALAR_TARGET_ACCEPT, init_scale=0.5)

    n1 = group_blocks[1].n_patients
    n0 = group_blocks[0].n_patients
    zeros = [np.zeros(b.n_patients, dtype=np.intp) for b in group_blocks]
    factors = [b.cov_factors(dep) for b, dep in zip(group_blocks, state.deps)]

    n_iter, burn_in, thin = config.iterations, config.burn_in, config.thin
    draws, retained_iterations = [], []
    loglik = np.empty(n_iter)

    for it in range(n_iter):
        phi = rng.beta(priors.a + n1, priors.b + n0)

        thetas = state.thetas.copy()
        total_ll = 0.0
        new_deps = list(state.deps)
        Sigma_chol = np.linalg.cholesky(state.base.Sigma)
        for d in (0, 1):
            blocks = group_blocks[d]
            adapter = adapters.get(f"theta_{d}") if adapters else None
            prop = adapter.propose(thetas[d], rng) if adapter is not None else \
                thetas[d] + 0.1 * rng.standard_normal(3)
            cur_resid = blocks.residuals(thetas[d:d + 1], zeros[d])
            prop_resid = blocks.residuals(prop[None, :], zeros[d])
            cur_ll = float(blocks.loglik_quad(factors[d], cur_resid).sum())
            prop_ll = float(blocks.loglik_quad(factors[d], prop_resid).sum())
            log_r = float(prop_ll - cur_ll
                          + _mvn3_logpdf_many(prop, state.base.theta_star, Sigma_chol)[0]
                          - _mvn3_logpdf_many(thetas[d], state.base.theta_star, Sigma_chol)[0])
            accepted = bool(math.log(rng.random()) < log_r)
            if accepted:
                thetas[d] = prop
                cur_resid, cur_ll = prop_resid, prop_ll
            if adapter is not None:
                adapter.observe(thetas[d], _accept_prob(log_r), accepted)

            sub_adapters = None
            if adapters is not None:
                sub_adapters = {name: adapters[f"{name}_{d}"]
                                for name in ("gamma2", "sigma2", "rho")}
            new_dep, new_factors, ll = _update_dependence_core(
                state.deps[d], blocks, cur_resid, priors, rng,
                adapters=sub_adapters, cur_factors=factors[d], cur_ll=cur_ll)
            new_deps[d] = new_dep
            factors[d] = new_factors
            total_ll += ll

        # base-measure updates over the two group trajectories (H = 2)
        new_base = _update_base_core(thetas, state.base, priors, rng)
        state = TwoComponentState(phi=phi, thetas=thetas, deps=tuple(new_deps),
                                  base=new_base)
        loglik[it] = total_ll + n1 * math.log(phi) + n0 * math.log1p(-phi)

        if adapters is not None and it + 1 == burn_in:
            for ad in adapters.values():
                ad.freeze()
        if it >= burn_in and (it - burn_in + 1) % thin == 0:
            draws.append(state)
            retained_iterations.append(it)

    accept_rates = {k: ad.accept_rate for k, ad in (adapters or {}).items()}
    return TwoComponentTrace(
        draws=draws,
        retained_iterations=np.asarray(retained_iterations, dtype=np.intp),
        loglik=loglik,
        accept_rates=accept_rates,
        seed=config.seed,
        config=config,
    )
