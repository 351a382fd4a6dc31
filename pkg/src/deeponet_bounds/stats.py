"""Jackknife standard errors for Monte-Carlo estimators."""

import numpy as np


def jackknife_of_mean(x, func=None):
    """Estimate ``func(mean(x))`` with a leave-one-out jackknife standard error.

    Parameters
    ----------
    x : array-like of shape (N,) or (N, k)
        Per-sample values. ``func`` is applied to the mean over axis 0.
    func : callable, optional
        Smooth function of the mean. Identity when omitted.

    Returns
    -------
    estimate : float or ndarray
    stderr : float or ndarray
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples for a jackknife estimate")
    func = func if func is not None else (lambda m: m)
    total = x.sum(axis=0)
    estimate = func(total / n)
    loo = func((total[None] - x) / (n - 1))
    center = loo.mean(axis=0)
    stderr = np.sqrt((n - 1) / n * np.sum((loo - center) ** 2, axis=0))
    return estimate, stderr


def rms_with_stderr(errors):
    """Root-mean-square of per-sample errors and its jackknife standard error."""
    errors = np.asarray(errors, dtype=float)
    return jackknife_of_mean(errors**2, lambda m: np.sqrt(np.maximum(m, 0.0)))


def mean_with_stderr(values):
    return jackknife_of_mean(values)
