"""Monte Carlo summaries shared by every stochastic estimator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class McEstimate:
    """Sample mean with its standard error.

    ``mean`` and ``stderr`` may be scalars or arrays of the same shape.  For
    complex samples ``stderr`` is the standard error of the complex mean,
    i.e. ``sqrt(Var Re + Var Im) / sqrt(n)``.
    """

    mean: object
    stderr: object
    n: int

    def within(self, target, n_sigma=3.0, slack=0.0):
        """True where ``|mean - target| <= n_sigma * stderr + slack``."""
        return np.abs(np.asarray(self.mean) - target) <= n_sigma * np.asarray(self.stderr) + slack


def mc_mean(samples, axis=0):
    """Mean and standard error along ``axis``."""
    x = np.asarray(samples)
    n = x.shape[axis]
    if n == 0:
        raise ValueError("cannot summarize an empty sample")
    mean = x.mean(axis=axis)
    if n == 1:
        return McEstimate(mean, np.zeros_like(np.abs(mean), dtype=float), 1)
    dev = x - np.expand_dims(mean, axis)
    var = (np.abs(dev) ** 2).sum(axis=axis) / (n - 1)
    return McEstimate(mean, np.sqrt(var / n), n)


def combine_sums(s1, s2, n):
    """Mean/stderr from running sums of x and |x|^2 over ``n`` samples."""
    mean = s1 / n
    if n == 1:
        return McEstimate(mean, np.zeros_like(np.abs(mean), dtype=float), 1)
    var = np.maximum(s2 - n * np.abs(mean) ** 2, 0.0) / (n - 1)
    return McEstimate(mean, np.sqrt(var / n), n)


def fit_loglog(x, y):
    """Least-squares slope of log y against log x with a 95% interval.

    Returns ``(slope, intercept, (lo, hi))``.
    """
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    n = lx.size
    if n < 2:
        raise ValueError("need at least two points for a slope")
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    slope, intercept = coef
    if n > 2:
        resid = ly - A @ coef
        s2 = resid @ resid / (n - 2)
        se = np.sqrt(s2 / np.sum((lx - lx.mean()) ** 2))
        from scipy.stats import t as student_t
        half = student_t.ppf(0.975, n - 2) * se
    else:
        half = np.inf
    return float(slope), float(intercept), (float(slope - half), float(slope + half))


class RunningMoments:
    """Per-entry running mean and stderr of array-valued samples.

    Sums are taken relative to the first sample seen, so identical samples
    give a zero standard error exactly.
    """

    def __init__(self):
        self.shift = None
        self.s1 = None
        self.s2 = None
        self.n = 0

    def add(self, values):
        """Add a batch; ``values`` has a leading sample axis."""
        values = np.asarray(values)
        if values.shape[0] == 0:
            return
        if self.shift is None:
            self.shift = values[0].copy()
            self.s1 = np.zeros_like(self.shift)
            self.s2 = np.zeros(self.shift.shape)
        dev = values - self.shift
        self.s1 = self.s1 + dev.sum(axis=0)
        self.s2 = self.s2 + (np.abs(dev) ** 2).sum(axis=0)
        self.n += values.shape[0]

    def estimate(self):
        if self.n == 0:
            raise ValueError("no samples accumulated")
        est = combine_sums(self.s1, self.s2, self.n)
        return McEstimate(self.shift + est.mean, est.stderr, self.n)
