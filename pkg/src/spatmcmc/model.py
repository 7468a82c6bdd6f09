"""Besag-York-Mollie Poisson count model with i.i.d. heterogeneity and
intrinsic-CAR clustering random effects, and its exact unnormalized log posterior.

The Gamma hyperpriors are parametrized with a SCALE parameter beta: the prior
density on each precision tau is proportional to tau^(alpha-1) * exp(-tau/beta).
Many libraries default to a rate parameter instead; configs here always mean scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
from scipy.sparse.csgraph import connected_components


class ModelError(Exception):
    pass


class InvalidDatasetError(ModelError):
    pass


class DisconnectedGraphError(ModelError):
    """Adjacency graph has more than one connected component."""

    def __init__(self, components):
        self.components = components
        sizes = [len(c) for c in components]
        super().__init__(
            f"adjacency graph has {len(components)} connected components "
            f"(sizes {sizes}); a connected map is required"
        )


class InvalidStateError(ModelError):
    pass


class PosteriorOverflowError(ModelError):
    """exp(theta_i + phi_i) overflowed; the log posterior is not representable."""


def _validate_adjacency(adjacency, n):
    a = scipy.sparse.csr_matrix(adjacency)
    if a.shape != (n, n):
        raise InvalidDatasetError(f"adjacency shape {a.shape} does not match N={n}")
    if a.diagonal().any():
        raise InvalidDatasetError("adjacency has self-loops")
    if (a != a.T).nnz != 0:
        raise InvalidDatasetError("adjacency is not symmetric")
    data = a.data
    if data.size and not np.all((data == 0) | (data == 1)):
        raise InvalidDatasetError("adjacency weights must be 0/1")
    a.eliminate_zeros()
    return a


def _connected_parts(adjacency):
    n_comp, labels = connected_components(adjacency, directed=False)
    return [np.flatnonzero(labels == k) for k in range(n_comp)]


@dataclass(frozen=True)
class SpatialDataset:
    """Observed counts Y, expected counts E and the region adjacency graph."""

    counts: np.ndarray
    expected: np.ndarray
    adjacency: scipy.sparse.csr_matrix
    labels: tuple = None

    def __post_init__(self):
        y = np.asarray(self.counts)
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.floor(y)):
                raise InvalidDatasetError("counts must be integers")
            y = y.astype(np.int64)
        if np.any(y < 0):
            raise InvalidDatasetError("counts must be nonnegative")
        e = np.asarray(self.expected, dtype=np.float64)
        if y.ndim != 1 or e.shape != y.shape:
            raise InvalidDatasetError("counts and expected must be 1-D with equal length")
        if np.any(e <= 0):
            bad = np.flatnonzero(e <= 0)
            raise InvalidDatasetError(f"expected counts must be > 0 (regions {bad.tolist()})")
        a = _validate_adjacency(self.adjacency, len(y))
        parts = _connected_parts(a)
        if len(parts) > 1:
            raise DisconnectedGraphError([p.tolist() for p in parts])
        object.__setattr__(self, "counts", y)
        object.__setattr__(self, "expected", e)
        object.__setattr__(self, "adjacency", a)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(str(l) for l in self.labels))

    @property
    def n_regions(self):
        return len(self.counts)


@dataclass(frozen=True)
class Hyperparameters:
    """Gamma shape/scale pairs for the two precision priors."""

    alpha_h: float
    beta_h: float
    alpha_c: float
    beta_c: float

    def __post_init__(self):
        for name in ("alpha_h", "beta_h", "alpha_c", "beta_c"):
            if not getattr(self, name) > 0:
                raise ModelError(f"{name} must be strictly positive")
        # alpha_h >= 1 is what makes the heavy-tailed envelope bound finite.
        if self.alpha_h < 1:
            raise ModelError("alpha_h must be >= 1 for a bounded proposal envelope")


@dataclass(frozen=True)
class ModelState:
    """One point (theta, phi, tau_h, tau_c) of the 2N+2 dimensional support."""

    theta: np.ndarray
    phi: np.ndarray
    tau_h: float
    tau_c: float

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=np.float64)
        ph = np.asarray(self.phi, dtype=np.float64)
        if th.ndim != 1 or ph.shape != th.shape:
            raise InvalidStateError("theta and phi must be 1-D with equal length")
        if not (self.tau_h > 0 and self.tau_c > 0):
            raise InvalidStateError("tau_h and tau_c must be strictly positive")
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "phi", ph)

    @property
    def n_regions(self):
        return len(self.theta)

    def to_vector(self):
        """Flat layout (tau_h, tau_c, theta_1..theta_N, phi_1..phi_N)."""
        return np.concatenate(([self.tau_h, self.tau_c], self.theta, self.phi))

    @classmethod
    def from_vector(cls, x, n_regions):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (2 * n_regions + 2,):
            raise InvalidStateError(f"state vector length {x.shape} != 2N+2")
        return cls(x[2 : 2 + n_regions], x[2 + n_regions :], float(x[0]), float(x[1]))


@dataclass
class PrecisionGraphMatrix:
    """Graph Laplacian precision structure Q with its rank deficiency."""

    Q: scipy.sparse.csr_matrix
    rank_deficiency: int
    _nonzero_eigenvalues: np.ndarray = field(default=None, repr=False)

    @property
    def n(self):
        return self.Q.shape[0]

    @property
    def m(self):
        """Rank of Q: the exponent multiplier in the clustering prior."""
        return self.n - self.rank_deficiency

    @property
    def nonzero_eigenvalues(self):
        if self._nonzero_eigenvalues is None:
            eig = np.sort(np.linalg.eigvalsh(self.Q.toarray()))
            self._nonzero_eigenvalues = eig[self.rank_deficiency :]
        return self._nonzero_eigenvalues


def build_precision_matrix(adjacency) -> PrecisionGraphMatrix:
    """Graph Laplacian: degree on the diagonal, -1 for adjacent pairs."""
    n = scipy.sparse.csr_matrix(adjacency).shape[0]
    a = _validate_adjacency(adjacency, n)
    parts = _connected_parts(a)
    if len(parts) > 1:
        raise DisconnectedGraphError([p.tolist() for p in parts])
    deg = np.asarray(a.sum(axis=1)).ravel()
    q = scipy.sparse.diags(deg) - a
    return PrecisionGraphMatrix(scipy.sparse.csr_matrix(q.astype(np.int64)), len(parts))


def q_tilde(Q: PrecisionGraphMatrix, delta=None):
    """Positive definite surrogate Q + delta*I; default delta is a small
    fraction of the mean diagonal (graph mean degree)."""
    q = Q.Q.astype(np.float64)
    if delta is None:
        mean_diag = float(q.diagonal().mean())
        delta = 1e-4 * (mean_diag if mean_diag > 0 else 1.0)
    return scipy.sparse.csr_matrix(q + delta * scipy.sparse.identity(Q.n)), float(delta)


def log_unnormalized_posterior(
    state: ModelState,
    data: SpatialDataset,
    hyper: Hyperparameters,
    Q: PrecisionGraphMatrix,
) -> float:
    """Exact joint log posterior up to an additive constant.

    Raises PosteriorOverflowError if exp(theta_i + phi_i) overflows.
    """
    n = data.n_regions
    if state.n_regions != n:
        raise InvalidStateError("state dimension does not match dataset")
    mu = state.theta + state.phi
    with np.errstate(over="ignore"):
        rates = data.expected * np.exp(mu)
    if not np.all(np.isfinite(rates)):
        raise PosteriorOverflowError("exp overflow in Poisson mean")
    loglik = float(np.dot(mu, data.counts) - np.sum(rates))
    quad_theta = 0.5 * state.tau_h * float(np.dot(state.theta, state.theta))
    quad_phi = 0.5 * state.tau_c * float(np.dot(state.phi, Q.Q.dot(state.phi)))
    m = Q.m
    log_prior = (
        (n / 2.0 + hyper.alpha_h - 1.0) * np.log(state.tau_h)
        + (m / 2.0 + hyper.alpha_c - 1.0) * np.log(state.tau_c)
        - state.tau_h / hyper.beta_h
        - state.tau_c / hyper.beta_c
    )
    value = loglik - quad_theta - quad_phi + log_prior
    if not np.isfinite(value):
        raise PosteriorOverflowError("non-finite log posterior")
    return value


def make_log_target(data: SpatialDataset, hyper: Hyperparameters, Q: PrecisionGraphMatrix):
    """Log posterior over flat state vectors, mapping invalid or overflowing
    states to -inf; the evaluation surface the samplers consume."""
    n = data.n_regions

    def log_target(x):
        if not (x[0] > 0 and x[1] > 0):
            return -np.inf
        try:
            state = ModelState.from_vector(x, n)
            return log_unnormalized_posterior(state, data, hyper, Q)
        except PosteriorOverflowError:
            return -np.inf

    return log_target
