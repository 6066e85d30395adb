"""Convergence diagnostics for posterior traces.

The main tool is the classic Geweke comparison of early and late
segments of a scalar chain (by default the data log-likelihood trace),
with segment variances estimated by a Bartlett-windowed autocovariance
to account for autocorrelation.
"""

import numpy as np


def spectral_variance(x, window=None):
    """Long-run variance of a (possibly autocorrelated) series via a
    Bartlett-windowed autocovariance sum."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        return 0.0
    if window is None:
        window = max(1, int(np.sqrt(n)))
    xc = x - x.mean()
    gamma0 = float(xc @ xc) / n
    total = gamma0
    for lag in range(1, min(window, n - 1) + 1):
        cov = float(xc[:-lag] @ xc[lag:]) / n
        total += 2.0 * (1.0 - lag / (window + 1.0)) * cov
    return max(total, 1e-300)


def geweke_z(series, first=0.1, last=0.5):
    """Geweke convergence statistic comparing the means of the first
    ``first`` and last ``last`` fractions of a scalar series.

    Values near zero are consistent with stationarity; |z| above about
    3 indicates the chain has not settled.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 20:
        raise ValueError("series too short for a Geweke comparison")
    a = x[: int(first * n)]
    b = x[n - int(last * n):]
    var_a = spectral_variance(a) / a.size
    var_b = spectral_variance(b) / b.size
    return float((a.mean() - b.mean()) / np.sqrt(var_a + var_b))


def trace_summary(trace, burn_in=None):
    """Quick per-chain health report from a PosteriorTrace."""
    burn_in = trace.config.burn_in if burn_in is None else burn_in
    cond = trace.cond_loglik[burn_in:]
    marg = trace.marg_loglik[burn_in:]
    return {
        "geweke_z_conditional": geweke_z(cond),
        "geweke_z_marginal": geweke_z(marg),
        "mean_nonempty_clusters": float(trace.nonempty_counts[burn_in:].mean()),
        "accept_rates": dict(trace.accept_rates),
    }
