"""Ordinary-least-squares covariate adjustment, the analytic comparison baseline.

On linearly generated data the treatment coefficients of a regression of
the outcome on [treatments, covariates] recover the true effects, which
makes this an oracle for calibrating the neural estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import Dataset
from .errors import UnderdeterminedError

RIDGE_JITTER = 1e-8


@dataclass(frozen=True)
class OlsFit:
    """Intercept-first coefficient vector and the residual standard deviation."""

    coefficients: np.ndarray
    residual_sd: float


def ols_fit(x, y) -> OlsFit:
    """Least squares of y on [1, x] via the normal equations.

    A singular system gets a 1e-8 ridge on the Gram matrix instead of
    failing; one iterative-refinement pass keeps the residuals orthogonal
    to the regressors at machine precision.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n = x.shape[0]
    design = np.concatenate([np.ones((n, 1)), x], axis=1)
    p = design.shape[1]
    if n < p + 1:
        raise UnderdeterminedError(f"need at least {p + 1} rows to fit {p} coefficients, got {n}")

    gram = design.T @ design
    rhs = design.T @ y
    try:
        np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        gram = gram + RIDGE_JITTER * np.eye(p)
    beta = np.linalg.solve(gram, rhs)
    # refinement against the (possibly jittered) system
    beta = beta + np.linalg.solve(gram, rhs - gram @ beta)

    residuals = y - design @ beta
    return OlsFit(coefficients=beta, residual_sd=float(np.sqrt(np.mean(residuals**2))))


def ols_tau(ds: Dataset) -> np.ndarray:
    """Treatment coefficients of y regressed on [t, x_low, x_high]."""
    x = np.concatenate([ds.t, ds.x_low, ds.x_high], axis=1)
    fit = ols_fit(x, ds.y)
    return fit.coefficients[1 : 1 + ds.n_treat].copy()
