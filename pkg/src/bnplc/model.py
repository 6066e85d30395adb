"""Probabilistic model core: data types, sigmoid trajectory, and the
marginalized Gaussian likelihood shared by the sampler, prediction, and
the simulation harness.

The longitudinal response of a subject observed at times t is modeled as
a sigmoid mean curve plus a subject-level random intercept (variance
``gamma2``) and an autocorrelated residual (variance ``sigma2``,
correlation ``rho`` between measurements one week apart).  The random
intercept is always integrated out, so the working covariance of one
subject's response vector is ``sigma2 * R + gamma2 * 11'`` with
``R[j, k] = rho ** (|t_j - t_k| / 7)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit, logsumexp, xlogy

LOG_2PI = np.log(2.0 * np.pi)


def _as_vector(x, name):
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True)
class TrajectoryParams:
    """Sigmoid curve parameters: asymptote, rate, and time offset."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (3,):
            raise ValueError("theta must have exactly 3 components")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta components must be finite")
        object.__setattr__(self, "theta", theta)


@dataclass(frozen=True)
class DependenceParams:
    """Within-subject dependence: intercept variance, residual variance,
    and one-week autocorrelation."""

    gamma2: float
    sigma2: float
    rho: float

    def __post_init__(self):
        if not (self.gamma2 > 0 and np.isfinite(self.gamma2)):
            raise ValueError("gamma2 must be positive and finite")
        if not (self.sigma2 > 0 and np.isfinite(self.sigma2)):
            raise ValueError("sigma2 must be positive and finite")
        if not (0.0 < self.rho < 1.0):
            raise ValueError("rho must lie strictly in (0, 1)")


@dataclass(frozen=True)
class ClusterParams:
    """One mixture component: disease probability and mean trajectory."""

    phi: float
    traj: TrajectoryParams

    def __post_init__(self):
        if not (0.0 <= self.phi <= 1.0):
            raise ValueError("phi must lie in [0, 1]")


@dataclass(frozen=True)
class BaseMeasureHyper:
    """Hyperparameters of the mixture base measure: Beta(a, b) for the
    disease probability and MVN3(theta_star, Sigma) for the trajectory."""

    theta_star: np.ndarray
    Sigma: np.ndarray
    a: float = 0.5
    b: float = 0.5

    def __post_init__(self):
        ts = np.asarray(self.theta_star, dtype=float)
        S = np.asarray(self.Sigma, dtype=float)
        if ts.shape != (3,):
            raise ValueError("theta_star must be a 3-vector")
        if S.shape != (3, 3) or not np.allclose(S, S.T):
            raise ValueError("Sigma must be 3x3 symmetric")
        if np.any(np.linalg.eigvalsh(S) <= 0):
            raise ValueError("Sigma must be positive definite")
        if not (self.a > 0 and self.b > 0):
            raise ValueError("a and b must be positive")
        object.__setattr__(self, "theta_star", ts)
        object.__setattr__(self, "Sigma", S)


@dataclass(frozen=True)
class Patient:
    """One subject: optional disease label, measurement days, responses.

    ``disease`` is 1 (diseased), 0 (healthy), or None when the label is
    to be predicted.  ``values`` are on the analysis scale; no transform
    is applied internally.  Empty observation vectors are allowed for
    pure-prior prediction, but patients used for fitting need at least
    one measurement.
    """

    id: str
    disease: int | None
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = _as_vector(self.times, "times")
        values = _as_vector(self.values, "values")
        if times.shape != values.shape:
            raise ValueError(f"patient {self.id}: times and values length mismatch")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(values)):
            raise ValueError(f"patient {self.id}: non-finite measurement")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError(f"patient {self.id}: times must be strictly increasing")
        if self.disease is not None and self.disease not in (0, 1):
            raise ValueError(f"patient {self.id}: disease must be 0, 1, or None")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def n_obs(self):
        return self.times.size


@dataclass(frozen=True)
class ModelState:
    """One complete state of the truncated stick-breaking mixture.

    ``assignments`` holds zero-based cluster indices; ``sticks`` are the
    stick-breaking fractions V_1..V_H with the last fixed at 1, and
    ``weights`` the implied mixture weights.  ``phis`` and ``thetas``
    hold the per-cluster disease probabilities and trajectory vectors
    (row h).  Instances are value objects: never mutate the arrays.
    """

    assignments: np.ndarray
    sticks: np.ndarray
    weights: np.ndarray
    phis: np.ndarray
    thetas: np.ndarray
    dep: DependenceParams
    alpha: float
    base: BaseMeasureHyper

    def __post_init__(self):
        object.__setattr__(self, "assignments", np.asarray(self.assignments, dtype=np.intp))
        object.__setattr__(self, "sticks", np.asarray(self.sticks, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "phis", np.asarray(self.phis, dtype=float))
        object.__setattr__(self, "thetas", np.asarray(self.thetas, dtype=float))
        self.validate()

    def validate(self):
        """Check every type invariant; raises ValueError on violation."""
        a, v, w = self.assignments, self.sticks, self.weights
        H = v.size
        if w.shape != (H,) or self.phis.shape != (H,) or self.thetas.shape != (H, 3):
            raise ValueError("inconsistent component dimensions")
        if v[-1] != 1.0:
            raise ValueError("last stick must equal 1")
        if np.any((v < 0) | (v > 1)):
            raise ValueError("sticks must lie in [0, 1]")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if np.max(np.abs(w - stick_breaking_weights(v))) > 1e-12:
            raise ValueError("weights do not match the stick-breaking identity")
        if np.any((self.phis < 0) | (self.phis > 1)):
            raise ValueError("phis must lie in [0, 1]")
        if a.size and (a.min() < 0 or a.max() >= H):
            raise ValueError("assignments out of range")
        if not (self.alpha > 0):
            raise ValueError("alpha must be positive")

    @classmethod
    def _unchecked(cls, assignments, sticks, weights, phis, thetas, dep, alpha, base):
        """Construct without validation; fields must already be proper
        arrays satisfying the invariants (internal sampler fast path)."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "assignments", assignments)
        object.__setattr__(obj, "sticks", sticks)
        object.__setattr__(obj, "weights", weights)
        object.__setattr__(obj, "phis", phis)
        object.__setattr__(obj, "thetas", thetas)
        object.__setattr__(obj, "dep", dep)
        object.__setattr__(obj, "alpha", alpha)
        object.__setattr__(obj, "base", base)
        return obj

    @property
    def n_components(self):
        return self.weights.size

    @property
    def clusters(self):
        """Per-cluster parameters as ClusterParams objects."""
        return tuple(
            ClusterParams(phi=float(p), traj=TrajectoryParams(t))
            for p, t in zip(self.phis, self.thetas)
        )

    def nonempty_count(self):
        return int(np.unique(self.assignments).size)


def stick_breaking_weights(sticks):
    """Map stick fractions V to mixture weights psi_h = V_h prod_{k<h}(1 - V_k)."""
    v = np.asarray(sticks, dtype=float)
    ones_minus = np.concatenate(([1.0], np.cumprod(1.0 - v[:-1])))
    return v * ones_minus


def eval_trajectory(traj, t):
    """Evaluate the sigmoid mean curve at time(s) t.

    ``traj`` may be a TrajectoryParams or any length-3 array-like
    (asymptote, rate, offset).  Overflow in the exponent saturates to 0
    or the asymptote instead of producing non-finite output.
    """
    theta = traj.theta if isinstance(traj, TrajectoryParams) else np.asarray(traj, dtype=float)
    return theta[0] * expit(theta[1] * np.asarray(t, dtype=float) + theta[2])


def build_covariance(times, dep):
    """Working covariance sigma2 * R + gamma2 * 11' for one subject.

    R[j, k] = rho ** (|t_j - t_k| / 7); the diagonal is sigma2 + gamma2.
    """
    t = _as_vector(times, "times")
    if t.size == 0:
        raise ValueError("times must be nonempty")
    lag = np.abs(t[:, None] - t[None, :]) / 7.0
    return dep.sigma2 * dep.rho ** lag + dep.gamma2


def patient_loglik(patient, traj, dep):
    """Log density of one patient's responses, random intercept integrated out.

    Multivariate normal with mean ``eval_trajectory(traj, times)`` and
    covariance ``build_covariance(times, dep)``, evaluated through a
    Cholesky factorization (no explicit inverse).

    Raises
    ------
    numpy.linalg.LinAlgError
        If the covariance is numerically non-positive-definite (for
        valid parameters this indicates degeneracy such as duplicated
        measurement times).
    """
    if patient.n_obs == 0:
        raise ValueError("patient_loglik requires at least one observation")
    cov = build_covariance(patient.times, dep)
    resid = patient.values - eval_trajectory(traj, patient.times)
    factor = cho_factor(cov, lower=True)
    half_logdet = np.sum(np.log(np.diag(factor[0])))
    quad = resid @ cho_solve(factor, resid)
    return float(-0.5 * (patient.n_obs * LOG_2PI + quad) - half_logdet)


def _bernoulli_logpmf(d, phis):
    """log phi^d (1-phi)^(1-d) elementwise; xlogy keeps 0*log(0) = 0."""
    return xlogy(d, phis) + xlogy(1.0 - d, 1.0 - phis)


def data_loglik(state, patients, mode="conditional"):
    """Data log likelihood under one model state.

    ``conditional`` scores each patient at its assigned cluster
    (trajectory term plus the Bernoulli disease term); ``marginal``
    integrates over cluster membership with the mixture weights, via
    log-sum-exp.  All patients must carry a disease label.
    """
    if mode not in ("conditional", "marginal"):
        raise ValueError(f"unknown mode {mode!r}")
    blocks = ObservationBlocks.from_patients(patients)
    if np.any(np.isnan(blocks.diseases)):
        raise ValueError("data_loglik requires labeled patients")
    if state.assignments.size != blocks.n_patients:
        raise ValueError("state assignments inconsistent with data length")
    factors = blocks.cov_factors(state.dep)
    if mode == "conditional":
        traj_ll = blocks.loglik_assigned(factors, state.thetas, state.assignments)
        bern = _bernoulli_logpmf(blocks.diseases, state.phis[state.assignments])
        return float(np.sum(traj_ll) + np.sum(bern))
    mat = blocks.loglik_matrix(factors, state.thetas)
    with np.errstate(divide="ignore"):
        logits = np.log(state.weights)[None, :] + _bernoulli_logpmf(
            blocks.diseases[:, None], state.phis[None, :]
        ) + mat
    return float(np.sum(logsumexp(logits, axis=1)))


class ObservationBlocks:
    """Patient data padded to a common observation count for batched
    likelihood work.

    Shorter records are padded and their covariance rows and columns
    replaced by identity, which makes the padded covariance block
    diagonal: one stacked Cholesky factorization and one batched solve
    cover the whole data set, and padded positions contribute nothing
    to quadratic forms or log determinants.
    """

    def __init__(self, times, values, obs_mask, n_obs, diseases):
        self.times = times            # (N, m) padded measurement days
        self.values = values          # (N, m) padded responses
        self.obs_mask = obs_mask      # (N, m) True at real observations
        self.n_obs = n_obs            # (N,)
        self.diseases = diseases      # (N,) float, NaN when unlabeled
        self.n_patients = times.shape[0]
        # pairs where either index is padding: covariance gets identity there
        pair = obs_mask[:, :, None] & obs_mask[:, None, :]
        self._pad_pair = ~pair
        self._eye = np.eye(times.shape[1])
        self._lag = np.abs(times[:, :, None] - times[:, None, :]) / 7.0

    @classmethod
    def from_patients(cls, patients):
        patients = list(patients)
        n = len(patients)
        if n == 0:
            raise ValueError("need at least one patient")
        n_obs = np.array([p.n_obs for p in patients], dtype=np.intp)
        if np.any(n_obs == 0):
            bad = patients[int(np.argmin(n_obs))]
            raise ValueError(f"patient {bad.id} has no observations")
        m = int(n_obs.max())
        times = np.zeros((n, m))
        values = np.zeros((n, m))
        obs_mask = np.zeros((n, m), dtype=bool)
        diseases = np.full(n, np.nan)
        for i, p in enumerate(patients):
            times[i, :p.n_obs] = p.times
            values[i, :p.n_obs] = p.values
            obs_mask[i, :p.n_obs] = True
            if p.disease is not None:
                diseases[i] = p.disease
        return cls(times, values, obs_mask, n_obs, diseases)

    def corr(self, rho):
        """(N, m, m) autocorrelation matrices rho ** (|lag| / 7)."""
        return rho ** self._lag

    def cov_factors_from_corr(self, R, gamma2, sigma2):
        """Cholesky factors for sigma2 * R + gamma2 * 11', reusing a
        correlation matrix across gamma2 and sigma2 proposals."""
        cov = np.where(self._pad_pair, self._eye, sigma2 * R + gamma2)
        chol = np.linalg.cholesky(cov)
        half_logdet = np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        return chol, half_logdet

    def cov_factors(self, dep):
        """Stacked Cholesky factors (N, m, m) and half log-determinants (N,)."""
        return self.cov_factors_from_corr(self.corr(dep.rho), dep.gamma2, dep.sigma2)

    def residuals(self, thetas, assignments):
        """(N, m) padded residuals with each patient at its assigned cluster."""
        th = np.asarray(thetas, dtype=float)[assignments]
        mean = th[:, 0, None] * expit(th[:, 1, None] * self.times + th[:, 2, None])
        return np.where(self.obs_mask, self.values - mean, 0.0)

    def loglik_quad(self, factors, resid):
        """(N,) log densities from padded residuals and covariance factors."""
        chol, half_logdet = factors
        z = np.linalg.solve(chol, resid[:, :, None])[:, :, 0]
        quad = np.einsum("gn,gn->g", z, z)
        return -0.5 * (self.n_obs * LOG_2PI + quad) - half_logdet

    def loglik_matrix(self, factors, thetas):
        """(N, H) matrix of per-patient log densities under each cluster."""
        chol, half_logdet = factors
        thetas = np.asarray(thetas, dtype=float)
        mean = thetas[:, 0, None, None] * expit(
            thetas[:, 1, None, None] * self.times[None, :, :] + thetas[:, 2, None, None]
        )                                                        # (H, N, m)
        resid = np.where(self.obs_mask[None, :, :], self.values[None, :, :] - mean, 0.0)
        z = np.linalg.solve(chol, np.moveaxis(resid, 0, 2))      # (N, m, H)
        quad = np.einsum("gnh,gnh->gh", z, z)
        return -0.5 * (self.n_obs[:, None] * LOG_2PI + quad) - half_logdet[:, None]

    def loglik_assigned(self, factors, thetas, assignments):
        """(N,) log densities with each patient at its assigned cluster."""
        return self.loglik_quad(factors, self.residuals(thetas, assignments))
