"""Monte Carlo output analysis: consistent batch means (CBM) variance
estimation and the fixed-width stopping rule.

Batch sizing follows b_n = floor(sqrt(n)), a_n = floor(n / b_n); only the
first a_n * b_n values enter the estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.stats


class OutputAnalysisError(Exception):
    pass


def batch_shape(n):
    b = int(np.sqrt(n))
    a = n // b
    return a, b


def cbm_variance(g_values):
    """Mean and batch-means long-run variance estimate for one scalar chain."""
    g = np.asarray(g_values, dtype=np.float64)
    if g.ndim != 1 or len(g) < 4:
        raise OutputAnalysisError("need a 1-D sequence of length >= 4 (two batches)")
    mean, sig2 = cbm_variance_matrix(g[:, None])
    return float(mean[0]), float(sig2[0])


def cbm_variance_matrix(x):
    """Column-wise CBM estimates for an (n, dim) array of chain values."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    a, b = batch_shape(n)
    if a < 2:
        raise OutputAnalysisError("need at least 2 batches")
    used = x[: a * b]
    batch_means = used.reshape(a, b, -1).mean(axis=1)
    g_bar = used.mean(axis=0)
    sig2 = (b / (a - 1.0)) * np.sum((batch_means - g_bar) ** 2, axis=0)
    return g_bar, sig2


def iid_variance_matrix(x):
    """Column-wise mean and sample variance; the stopping-rule variance for
    independent draws (rejection-sampler output)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise OutputAnalysisError("need at least 2 values")
    return x.mean(axis=0), x.var(axis=0, ddof=1)


@dataclass(frozen=True)
class StoppingRule:
    """Per-quantity half-width thresholds with a geometric check schedule.

    ``mode`` selects what the thresholds bound: the confidence-interval
    half-width (default) or the raw Monte Carlo standard error.
    """

    thresholds: np.ndarray
    confidence: float = 0.95
    min_iterations: int = 1000
    n0: int = 1000
    mode: str = "halfwidth"

    def __post_init__(self):
        eps = np.asarray(self.thresholds, dtype=np.float64)
        if np.any(eps <= 0):
            raise OutputAnalysisError("all thresholds must be > 0")
        if not 0 < self.confidence < 1:
            raise OutputAnalysisError("confidence must be in (0, 1)")
        if self.min_iterations < 100:
            raise OutputAnalysisError("min_iterations must be >= 100")
        if self.mode not in ("halfwidth", "mcse"):
            raise OutputAnalysisError("mode must be 'halfwidth' or 'mcse'")
        object.__setattr__(self, "thresholds", eps)

    @property
    def dim(self):
        return len(self.thresholds)

    def is_check_point(self, n):
        if n < max(self.min_iterations, self.n0):
            return False
        k = n // self.n0
        return k * self.n0 == n and (k & (k - 1)) == 0  # n = n0 * 2^k

    def next_check(self, n):
        m = max(self.n0, self.min_iterations)
        c = self.n0
        while c < m or c < n:
            c *= 2
        return c


@dataclass
class ChainSummary:
    """Per-quantity ergodic averages, variance estimates and half-widths at one
    stopping-rule evaluation."""

    n: int
    a: int
    b: int
    means: np.ndarray
    sigma2: np.ndarray
    mcse: np.ndarray
    halfwidths: np.ndarray
    thresholds: np.ndarray
    mode: str
    estimator: str
    stopped: bool = False
    names: list = field(default=None)

    @property
    def monitored(self):
        return self.halfwidths if self.mode == "halfwidth" else self.mcse

    def to_table(self):
        names = self.names or [f"q{i}" for i in range(len(self.means))]
        lines = [
            f"# chain summary: n={self.n} a={self.a} b={self.b} "
            f"estimator={self.estimator} mode={self.mode} stopped={self.stopped}",
            f"{'quantity':<12} {'mean':>14} {'mcse':>12} {'halfwidth':>12} "
            f"{'threshold':>12} {'status':>8}",
        ]
        for i, name in enumerate(names):
            ok = self.monitored[i] <= self.thresholds[i]
            lines.append(
                f"{name:<12} {self.means[i]:>14.6g} {self.mcse[i]:>12.4g} "
                f"{self.halfwidths[i]:>12.4g} {self.thresholds[i]:>12.4g} "
                f"{'ok' if ok else 'wide':>8}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def parse_table(cls, text):
        """Parse the mean column back out of a serialized table; test hook."""
        rows = {}
        lines = text.strip().splitlines()
        for line in lines[2:]:
            parts = line.split()
            rows[parts[0]] = float(parts[1])
        return rows


def summarize(x, rule: StoppingRule, estimator="cbm", names=None) -> ChainSummary:
    """Summary plus stopping decision for the chain prefix ``x`` of shape (n, dim)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if estimator == "cbm":
        a, b = batch_shape(n)
        means, sigma2 = cbm_variance_matrix(x)
        dof = a - 1
        denom = a * b
    elif estimator == "iid":
        means, sigma2 = iid_variance_matrix(x)
        a, b = n, 1
        dof = n - 1
        denom = n
    else:
        raise OutputAnalysisError(f"unknown estimator {estimator!r}")
    mcse = np.sqrt(sigma2 / denom)
    tq = scipy.stats.t.ppf(1.0 - (1.0 - rule.confidence) / 2.0, dof)
    halfwidths = tq * mcse
    summary = ChainSummary(
        n, a, b, means, sigma2, mcse, halfwidths,
        rule.thresholds, rule.mode, estimator, names=names,
    )
    summary.stopped = evaluate_stopping(summary, rule)
    return summary


def evaluate_stopping(summary: ChainSummary, rule: StoppingRule) -> bool:
    """True (stop) iff every monitored quantity is within its threshold."""
    if len(summary.means) != rule.dim:
        raise OutputAnalysisError("summary and rule dimensions differ")
    return bool(np.all(summary.monitored <= rule.thresholds))
