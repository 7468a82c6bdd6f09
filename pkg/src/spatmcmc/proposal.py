"""Heavy-tailed approximation r = r1 * r2: independent log-t marginals for the
two precisions matched to the integrated approximate marginal, and a
multivariate-t conditional for the random effects sharing the center and
precision shape of the conditional Gaussian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.optimize

from . import band_linalg as bl
from .gaussian_approx import GaussianApproximation


class ProposalError(Exception):
    pass


class FitBoundaryError(ProposalError):
    """Mode search ended on the search-box boundary; widen the box."""


class FitCurvatureError(ProposalError):
    """Profile is not locally concave at the located mode."""


@dataclass(frozen=True)
class LogTParams:
    """Location/scale/dof of a Student-t on the log scale."""

    mu: float
    sigma: float
    nu: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise ProposalError("sigma must be strictly positive")
        if self.nu < 1:
            raise ProposalError("nu must be a positive integer")

    @property
    def log_norm_const(self):
        nu = self.nu
        return (
            math.lgamma((nu + 1) / 2.0)
            - math.lgamma(nu / 2.0)
            - 0.5 * math.log(nu * math.pi)
        )

    def log_density(self, tau):
        """Log density of exp(mu + sigma*T), T ~ t(nu); exact normalization."""
        z = (np.log(tau) - self.mu) / self.sigma
        return (
            self.log_norm_const
            - math.log(self.sigma)
            - np.log(tau)
            - 0.5 * (self.nu + 1) * np.log1p(z * z / self.nu)
        )

    def sample(self, rng):
        return float(np.exp(self.mu + self.sigma * rng.standard_t(self.nu)))


@dataclass(frozen=True)
class ProposalSpec:
    tau_h_logt: LogTParams
    tau_c_logt: LogTParams
    nu_r: int
    delta: float
    scale_inflation: float

    def __post_init__(self):
        if self.nu_r < 1:
            raise ProposalError("nu_r must be a positive integer")
        if self.scale_inflation < 1:
            raise ProposalError("scale_inflation must be >= 1")

    def to_text(self):
        lines = ["proposal-spec v1"]
        for tag, p in (("tau_h", self.tau_h_logt), ("tau_c", self.tau_c_logt)):
            lines += [f"{tag}.mu = {p.mu!r}", f"{tag}.sigma = {p.sigma!r}", f"{tag}.nu = {p.nu}"]
        lines += [
            f"nu_r = {self.nu_r}",
            f"delta = {self.delta!r}",
            f"scale_inflation = {self.scale_inflation!r}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kv = {}
        for line in text.splitlines()[1:]:
            if "=" in line:
                k, v = line.split("=", 1)
                kv[k.strip()] = float(v.strip())
        return cls(
            LogTParams(kv["tau_h.mu"], kv["tau_h.sigma"], int(kv["tau_h.nu"])),
            LogTParams(kv["tau_c.mu"], kv["tau_c.sigma"], int(kv["tau_c.nu"])),
            int(kv["nu_r"]),
            kv["delta"],
            kv["scale_inflation"],
        )


@dataclass(frozen=True)
class FitConfig:
    log_bounds: tuple = (-8.0, 8.0)
    grid_points: int = 7
    n_starts: int = 3
    nu: int = 4
    nu_r: int = 4
    scale_inflation: float = 1.5
    fd_step: float = 1e-3
    boundary_margin: float = 1e-2


def fit_proposal(log_s1, config: FitConfig = FitConfig(), delta=0.0) -> ProposalSpec:
    """Match log-t marginals to the integrated approximate marginal.

    ``log_s1`` is called as log_s1(tau_h, tau_c).  The joint mode is located on
    the (log tau_h, log tau_c) scale by multi-started Nelder-Mead from a coarse
    grid; per-axis curvature comes from central second differences through the
    mode, and each log-t scale is scale_inflation / sqrt(-curvature).
    """
    lo, hi = config.log_bounds

    def objective(x):
        if not (lo <= x[0] <= hi and lo <= x[1] <= hi):
            return np.inf
        return -log_s1(math.exp(x[0]), math.exp(x[1]))

    grid = np.linspace(lo + 0.5, hi - 0.5, config.grid_points)
    points = np.array([(a, b) for a in grid for b in grid])
    values = np.array([objective(p) for p in points])
    starts = points[np.argsort(values)[: config.n_starts]]

    best = None
    for x0 in starts:
        res = scipy.optimize.minimize(
            objective, x0, method="Nelder-Mead",
            options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 2000},
        )
        if best is None or res.fun < best.fun:
            best = res
    mode = best.x
    if np.any(mode <= lo + config.boundary_margin) or np.any(mode >= hi - config.boundary_margin):
        raise FitBoundaryError(
            f"mode search ended at {mode} near the box [{lo}, {hi}]; widen log_bounds"
        )

    f0 = -best.fun
    params = []
    h = config.fd_step
    for axis in range(2):
        e = np.zeros(2)
        e[axis] = h
        fp = -objective(mode + e)
        fm = -objective(mode - e)
        curv = (fp - 2.0 * f0 + fm) / (h * h)
        if not curv < 0:
            raise FitCurvatureError(
                f"nonnegative curvature {curv} along axis {axis} at mode {mode}"
            )
        sigma = config.scale_inflation / math.sqrt(-curv)
        params.append(LogTParams(float(mode[axis]), sigma, config.nu))

    return ProposalSpec(params[0], params[1], config.nu_r, float(delta), config.scale_inflation)


def log_r1(tau_h, tau_c, spec: ProposalSpec) -> float:
    """Log density of the product of the two log-t marginals (normalized)."""
    return float(spec.tau_h_logt.log_density(tau_h) + spec.tau_c_logt.log_density(tau_c))


def log_r2_from_factor(theta_vec_perm, mu_perm, factor: bl.BandMatrix, nu_r: int) -> float:
    """Multivariate-t log density with precision-shape C = L L^T, evaluated in
    the permuted coordinate system."""
    two_n = factor.order
    n = two_n // 2
    dev = np.asarray(theta_vec_perm) - mu_perm
    w = bl.matvec_factor_transpose(factor, dev)
    quad = float(np.dot(w, w))
    return (
        0.5 * bl.log_det_from_factor(factor)
        + math.lgamma((nu_r + two_n) / 2.0)
        - math.lgamma(nu_r / 2.0)
        - n * math.log(nu_r * math.pi)
        - 0.5 * (nu_r + two_n) * math.log1p(quad / nu_r)
    )


class SpatialProposal:
    """The full proposal r over (tau_h, tau_c, Theta) for one dataset.

    State vectors use the flat layout (tau_h, tau_c, theta, phi).  Sampling and
    evaluation require only an explicit random generator / state vector, so
    independent generators (seed-sequence spawning) give embarrassingly
    parallel batch generation.
    """

    def __init__(self, spec: ProposalSpec, approx: GaussianApproximation):
        self.spec = spec
        self.approx = approx
        self.n = approx.n

    @property
    def dim(self):
        return 2 * self.n + 2

    def sample(self, rng):
        """One exact draw from r; returns (state_vector, log r(state))."""
        spec = self.spec
        tau_h = spec.tau_h_logt.sample(rng)
        tau_c = spec.tau_c_logt.sample(rng)
        factor = self.approx.factor(tau_h, tau_c)
        mu_perm = bl.solve(factor, -0.5 * self.approx.factory.d_perm)
        z = bl.sample_gaussian(factor, rng)
        g = rng.chisquare(spec.nu_r)
        theta_perm = mu_perm + z / math.sqrt(g / spec.nu_r)
        logr = log_r1(tau_h, tau_c, spec) + log_r2_from_factor(
            theta_perm, mu_perm, factor, spec.nu_r
        )
        theta_full = self.approx.factory.permutation.undo(theta_perm)
        x = np.concatenate(([tau_h, tau_c], theta_full))
        return x, logr

    def log_density(self, x) -> float:
        tau_h, tau_c = float(x[0]), float(x[1])
        if not (tau_h > 0 and tau_c > 0):
            return -np.inf
        factor = self.approx.factor(tau_h, tau_c)
        mu_perm = bl.solve(factor, -0.5 * self.approx.factory.d_perm)
        theta_perm = self.approx.factory.permutation.apply(np.asarray(x[2:]))
        return log_r1(tau_h, tau_c, self.spec) + log_r2_from_factor(
            theta_perm, mu_perm, factor, self.spec.nu_r
        )

    def mode_point(self):
        """Marginal mode of r1 with Theta at the conditional center; used to
        seed envelope-bound optimization."""
        tau_h = math.exp(self.spec.tau_h_logt.mu)
        tau_c = math.exp(self.spec.tau_c_logt.mu)
        mu_n, _ = self.approx.conditional_gaussian_params(tau_h, tau_c)
        return np.concatenate(([tau_h, tau_c], mu_n))


def sample_from_r(spec: ProposalSpec, approx: GaussianApproximation, rng):
    """Draw (tau_h*, tau_c*, Theta*) from r; free-function form of
    SpatialProposal.sample."""
    x, _ = SpatialProposal(spec, approx).sample(rng)
    n = approx.n
    return float(x[0]), float(x[1]), x[2:]
