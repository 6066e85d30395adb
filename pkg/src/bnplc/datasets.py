"""Bundled synthetic data: a statistically matched mimic of the
motivating application (173 pregnancies followed in the first
trimester, 49 ending in complications).

The original clinical data are private; this stand-in reproduces the
published marginals: the class split, one to six log-scale measurements
per subject at irregular days 10-80, a median of two measurements, and
five qualitative trajectory shapes (healthy fast-rise/plateau, slower
rise, high early outliers, never-rising, and early-low-plateau).
"""

from importlib import resources

import numpy as np

from .model import Patient, eval_trajectory
from .rng import substream

MIMIC_FILENAME = "pregnancy_mimic.csv"
_MIMIC_SEED = 574392817

# (name, n_patients, n_diseased, theta, obs-count distribution over 1..6)
_MIMIC_GROUPS = (
    ("E", 90, 2, (4.70, 0.25, -3.8), (0.28, 0.44, 0.24, 0.02, 0.01, 0.01)),
    ("D", 30, 5, (4.55, 0.10, -1.8), (0.28, 0.40, 0.28, 0.02, 0.01, 0.01)),
    ("C", 4, 2, (5.30, 0.50, -2.5), (0.25, 0.50, 0.25, 0.0, 0.0, 0.0)),
    ("B", 24, 21, (3.90, 0.28, -3.0), (0.35, 0.31, 0.20, 0.08, 0.04, 0.02)),
    ("A", 25, 19, (1.80, 0.02, -0.3), (0.35, 0.31, 0.20, 0.08, 0.04, 0.02)),
)
_MIMIC_GAMMA2 = 0.05
_MIMIC_SIGMA2 = 0.10
_MIMIC_RHO = 0.8


def generate_application_mimic():
    """Deterministically regenerate the bundled mimic patients."""
    rng = substream(_MIMIC_SEED, "application-mimic")
    patients = []
    idx = 0
    for name, n_g, n_dis, theta, n_probs in _MIMIC_GROUPS:
        theta = np.asarray(theta, dtype=float)
        disease_flags = np.zeros(n_g, dtype=int)
        disease_flags[rng.choice(n_g, size=n_dis, replace=False)] = 1
        for j in range(n_g):
            n = int(rng.choice(6, p=n_probs)) + 1
            start = rng.uniform(10.0, 45.0)
            gaps = rng.uniform(2.0, 20.0, size=n - 1)
            t = np.minimum(start + np.concatenate([[0.0], np.cumsum(gaps)]), 80.0)
            while n > 1 and np.any(np.diff(t) <= 0):
                gaps = rng.uniform(2.0, 20.0, size=n - 1)
                t = np.minimum(start + np.concatenate([[0.0], np.cumsum(gaps)]), 80.0)
            lag = np.abs(t[:, None] - t[None, :]) / 7.0
            cov = _MIMIC_SIGMA2 * _MIMIC_RHO ** lag
            y = (eval_trajectory(theta, t)
                 + rng.normal(0.0, np.sqrt(_MIMIC_GAMMA2))
                 + np.linalg.cholesky(cov) @ rng.standard_normal(n))
            idx += 1
            patients.append(Patient(f"w{idx:03d}", int(disease_flags[j]), t, y))
    return patients


def application_mimic_path():
    """Filesystem path of the bundled mimic CSV."""
    return resources.files("bnplc").joinpath("data", MIMIC_FILENAME)


def load_application_mimic():
    """Load the bundled mimic as Patient objects."""
    from .io import load_longitudinal_csv
    with resources.as_file(application_mimic_path()) as path:
        return load_longitudinal_csv(path)
