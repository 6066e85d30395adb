"""Disease-probability prediction for (possibly partial) trajectories,
Bayesian-model-averaged over a posterior trace, plus thresholding and
ROC/AUC utilities.

The per-draw probability weighs each cluster's disease probability by
its mixture weight times the marginal Gaussian density of the observed
values; an empty observation vector falls back to the prior disease
mass of the draw.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from scipy.linalg import cho_factor, cho_solve

from .mcmc import TwoComponentState, TwoComponentTrace
from .model import ModelState, ObservationBlocks, build_covariance, eval_trajectory

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class PredictionResult:
    """Model-averaged disease probability with a central credible interval."""

    prob: float
    interval: tuple
    per_draw: np.ndarray | None = None

    def __post_init__(self):
        lo, hi = self.interval
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError("interval must be ordered and inside [0, 1]")
        if not (0.0 <= self.prob <= 1.0):
            raise ValueError("prob must lie in [0, 1]")


def _mvn_logliks(times, values, thetas, dep):
    """Log density of the observation vector under each trajectory row."""
    thetas = np.atleast_2d(thetas)
    cov = build_covariance(times, dep)
    factor = cho_factor(cov, lower=True)
    half_logdet = np.sum(np.log(np.diag(factor[0])))
    out = np.empty(thetas.shape[0])
    n = len(times)
    for h, th in enumerate(thetas):
        resid = values - eval_trajectory(th, times)
        out[h] = -0.5 * (n * LOG_2PI + resid @ cho_solve(factor, resid)) - half_logdet
    return out


def predict_draw(draw, times, values):
    """Disease probability for one posterior draw.

    For a mixture state this is the weight-and-likelihood-weighted
    average of the cluster disease probabilities; for a two-component
    state it is the usual Bayes classifier probability.  With no
    observations the prior disease mass of the draw is returned.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape:
        raise ValueError("times and values must align")
    if isinstance(draw, TwoComponentState):
        if times.size == 0:
            return float(draw.phi)
        ll0 = _mvn_logliks(times, values, draw.thetas[0], draw.deps[0])[0]
        ll1 = _mvn_logliks(times, values, draw.thetas[1], draw.deps[1])[0]
        logit = np.log(draw.phi) - np.log1p(-draw.phi) + ll1 - ll0
        with np.errstate(over="ignore"):
            return float(1.0 / (1.0 + np.exp(-logit)))
    if not isinstance(draw, ModelState):
        raise TypeError(f"cannot predict from {type(draw).__name__}")
    if times.size == 0:
        return float(draw.weights @ draw.phis)
    logliks = _mvn_logliks(times, values, draw.thetas, draw.dep)
    with np.errstate(divide="ignore"):
        logw = np.log(draw.weights) + logliks
    logw -= logw.max()
    w = np.exp(logw)
    return float((w @ draw.phis) / w.sum())


def bma_predict(trace, times, values, interval_level=0.5):
    """Average ``predict_draw`` over all retained draws.

    The interval is the central credible interval of the per-draw
    probabilities at the given level, using linearly interpolated
    empirical quantiles.
    """
    draws = trace.draws if hasattr(trace, "draws") else list(trace)
    if len(draws) == 0:
        raise ValueError("empty trace")
    per_draw = np.array([predict_draw(d, times, values) for d in draws])
    return _summarize(per_draw, interval_level)


def _summarize(per_draw, interval_level):
    lo, hi = np.quantile(per_draw, [(1 - interval_level) / 2,
                                    (1 + interval_level) / 2])
    return PredictionResult(prob=float(per_draw.mean()),
                            interval=(float(lo), float(hi)),
                            per_draw=per_draw)


def _prob_matrix_mixture(draws, patients):
    """(n_draws, N) per-draw probabilities for a mixture trace, batched."""
    nonempty_idx = [i for i, p in enumerate(patients) if p.n_obs > 0]
    empty_idx = [i for i, p in enumerate(patients) if p.n_obs == 0]
    out = np.empty((len(draws), len(patients)))
    blocks = None
    if nonempty_idx:
        blocks = ObservationBlocks.from_patients([patients[i] for i in nonempty_idx])
        cols = np.asarray(nonempty_idx)
    for r, draw in enumerate(draws):
        if empty_idx:
            out[r, empty_idx] = draw.weights @ draw.phis
        if blocks is None:
            continue
        factors = blocks.cov_factors(draw.dep)
        mat = blocks.loglik_matrix(factors, draw.thetas)
        with np.errstate(divide="ignore"):
            logw = np.log(draw.weights)[None, :] + mat
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        out[r, cols] = (w @ draw.phis) / w.sum(axis=1)
    return out


def _prob_matrix_two_component(draws, patients):
    nonempty_idx = [i for i, p in enumerate(patients) if p.n_obs > 0]
    empty_idx = [i for i, p in enumerate(patients) if p.n_obs == 0]
    out = np.empty((len(draws), len(patients)))
    blocks = None
    if nonempty_idx:
        blocks = ObservationBlocks.from_patients([patients[i] for i in nonempty_idx])
        cols = np.asarray(nonempty_idx)
    for r, draw in enumerate(draws):
        if empty_idx:
            out[r, empty_idx] = draw.phi
        if blocks is None:
            continue
        ll = np.empty((blocks.n_patients, 2))
        for d in (0, 1):
            factors = blocks.cov_factors(draw.deps[d])
            ll[:, d] = blocks.loglik_matrix(factors, draw.thetas[d:d + 1])[:, 0]
        logit = np.log(draw.phi) - np.log1p(-draw.phi) + ll[:, 1] - ll[:, 0]
        with np.errstate(over="ignore"):
            out[r, cols] = 1.0 / (1.0 + np.exp(-logit))
    return out


def prediction_matrix(trace, patients):
    """(n_draws, N) matrix of per-draw disease probabilities."""
    draws = trace.draws
    if len(draws) == 0:
        raise ValueError("empty trace")
    if isinstance(trace, TwoComponentTrace) or isinstance(draws[0], TwoComponentState):
        return _prob_matrix_two_component(draws, patients)
    return _prob_matrix_mixture(draws, patients)


def bma_predict_many(trace, patients, interval_level=0.5, keep_per_draw=False):
    """Vectorized ``bma_predict`` for a set of patients."""
    probs = prediction_matrix(trace, patients)
    results = []
    for j in range(probs.shape[1]):
        res = _summarize(probs[:, j], interval_level)
        if not keep_per_draw:
            res = PredictionResult(prob=res.prob, interval=res.interval)
        results.append(res)
    return results


def classify(prob, threshold):
    """Bayes rule with a strict threshold: 1 iff prob > threshold."""
    if not (0.0 <= threshold <= 1.0):
        raise ValueError("threshold must lie in [0, 1]")
    arr = np.asarray(prob)
    out = (arr > threshold).astype(int)
    return int(out) if np.isscalar(prob) or arr.ndim == 0 else out


def roc_auc(probs, labels):
    """AUC by the Mann-Whitney pair statistic (ties count one half) and
    the ROC curve over all distinct thresholds.

    Returns ``(auc, curve)`` where curve is a list of
    ``(fpr, tpr, threshold)`` with classification rule prob > threshold.
    """
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    pos = probs[labels == 1]
    neg = probs[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = rankdata(probs)
    auc = (ranks[labels == 1].sum() - pos.size * (pos.size + 1) / 2.0) \
        / (pos.size * neg.size)
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    curve = []
    for t in np.unique(probs)[::-1]:
        tpr = (pos.size - np.searchsorted(pos_sorted, t, side="right")) / pos.size
        fpr = (neg.size - np.searchsorted(neg_sorted, t, side="right")) / neg.size
        curve.append((float(fpr), float(tpr), float(t)))
    return float(auc), curve


def best_threshold(curve, cost_ratio=1.0):
    """Threshold maximizing tpr - cost_ratio * fpr (Youden index at
    cost_ratio 1); ties resolve to the smallest threshold."""
    best = None
    for fpr, tpr, t in curve:
        score = tpr - cost_ratio * fpr
        if best is None or score > best[0] + 1e-15 or \
                (abs(score - best[0]) <= 1e-15 and t < best[1]):
            best = (score, t)
    if best is None:
        raise ValueError("empty curve")
    return best[1]
