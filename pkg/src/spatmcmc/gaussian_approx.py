"""Gaussian approximation to the spatial posterior.

Replaces the Poisson likelihood by a Gaussian for log(Y_i/E_i) via the delta
method (variance 1/Y_i, zero counts replaced by 0.5), then works with the
resulting 2N-dimensional quadratic: the block precision matrix C, the linear
coefficient D, the analytically integrated marginal of the precisions
(log_s1) and the conditional Gaussian of the random effects.

All heavy lifting runs through the band Cholesky of C under a bandwidth
reducing permutation of the 2N x 2N block sparsity pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from . import band_linalg as bl
from .model import Hyperparameters, PrecisionGraphMatrix, SpatialDataset, q_tilde


class ApproximationError(Exception):
    pass


class IndefiniteCError(ApproximationError):
    """C(tau_h, tau_c) was not numerically positive definite."""

    def __init__(self, tau_h, tau_c):
        self.tau_h = tau_h
        self.tau_c = tau_c
        super().__init__(f"C not positive definite at tau_h={tau_h}, tau_c={tau_c}")


ZERO_COUNT_SUBSTITUTE = 0.5


@dataclass(frozen=True)
class ApproximationContext:
    """Data-dependent pieces of the quadratic: mu_hat, diag of V^-1, D and the
    completion-of-square constant k = mu_hat' V^-1 mu_hat."""

    mu_hat: np.ndarray
    v_inv_diag: np.ndarray
    D: np.ndarray
    k_const: float

    @property
    def n(self):
        return len(self.mu_hat)


def compute_mu_hat(data: SpatialDataset) -> ApproximationContext:
    """mu_hat_i = log(Y_i/E_i) with zero counts replaced by 0.5; the same
    adjusted counts populate V^-1."""
    y = data.counts.astype(np.float64)
    y[y == 0] = ZERO_COUNT_SUBSTITUTE
    mu_hat = np.log(y / data.expected)
    half_d = -2.0 * mu_hat * y
    d = np.concatenate([half_d, half_d])
    k = float(np.dot(mu_hat, y * mu_hat))
    return ApproximationContext(mu_hat, y, d, k)


@dataclass
class CMatrix:
    """The 2N x 2N block precision [[V^-1 + tau_h I, V^-1], [V^-1, V^-1 + tau_c Qt]],
    held in band form under a fixed permutation."""

    tau_h: float
    tau_c: float
    band: bl.BandMatrix
    permutation: bl.Permutation

    def to_dense(self):
        dense_perm = self.band.to_dense_symmetric()
        inv = self.permutation.inverse
        return dense_perm[np.ix_(inv, inv)]


def dense_c(tau_h, tau_c, ctx: ApproximationContext, q_tilde_mat) -> np.ndarray:
    """Dense assembly of C; oracle path for tests and tiny problems."""
    n = ctx.n
    v_inv = np.diag(ctx.v_inv_diag)
    qt = q_tilde_mat.toarray() if scipy.sparse.issparse(q_tilde_mat) else np.asarray(q_tilde_mat)
    c = np.empty((2 * n, 2 * n))
    c[:n, :n] = v_inv + tau_h * np.eye(n)
    c[:n, n:] = v_inv
    c[n:, :n] = v_inv
    c[n:, n:] = v_inv + tau_c * qt
    return c


class CFactory:
    """Precomputed band templates for C so that factorizing at new (tau_h, tau_c)
    is a single fused band update plus one LAPACK call.

    The permutation is reverse Cuthill-McKee on the full 2N x 2N pattern, which
    couples region i with its shadow N+i and interleaves the (theta_i, phi_i)
    pairs; this keeps the bandwidth of C itself small, not just that of Q.
    """

    def __init__(self, ctx: ApproximationContext, q_tilde_mat):
        n = ctx.n
        self.ctx = ctx
        self.q_tilde = scipy.sparse.csr_matrix(q_tilde_mat)
        v_inv = scipy.sparse.diags(ctx.v_inv_diag)
        ident = scipy.sparse.identity(n)
        base = scipy.sparse.bmat([[v_inv, v_inv], [v_inv, v_inv]], format="csr")
        th_part = scipy.sparse.bmat([[ident, None], [None, 0 * ident]], format="csr")
        tc_part = scipy.sparse.bmat([[0 * ident, None], [None, self.q_tilde]], format="csr")
        pattern = (base + th_part + tc_part).tocsr()
        pattern.eliminate_zeros()
        self.permutation = bl.rcm_ordering(pattern)
        p = self.permutation
        self.bandwidth = bl.pattern_bandwidth(p.permute_sparse(pattern))
        self._base = bl.BandMatrix.from_sparse(p.permute_sparse(base), self.bandwidth).bands
        self._th = bl.BandMatrix.from_sparse(p.permute_sparse(th_part), self.bandwidth).bands
        self._tc = bl.BandMatrix.from_sparse(p.permute_sparse(tc_part), self.bandwidth).bands
        self.d_perm = p.apply(ctx.D)

    @property
    def order(self):
        return 2 * self.ctx.n

    def assemble(self, tau_h, tau_c) -> CMatrix:
        if not (tau_h > 0 and tau_c > 0):
            raise ApproximationError("tau_h and tau_c must be strictly positive")
        bands = self._base + tau_h * self._th + tau_c * self._tc
        return CMatrix(tau_h, tau_c, bl.BandMatrix(self.order, self.bandwidth, bands), self.permutation)

    def factor(self, tau_h, tau_c) -> bl.BandMatrix:
        c = self.assemble(tau_h, tau_c)
        try:
            return bl.band_cholesky(c.band)
        except bl.IndefiniteMatrixError as exc:
            raise IndefiniteCError(tau_h, tau_c) from exc


def assemble_C(tau_h, tau_c, ctx: ApproximationContext, q_tilde_mat) -> CMatrix:
    return CFactory(ctx, q_tilde_mat).assemble(tau_h, tau_c)


class GaussianApproximation:
    """Ties a dataset's context, the positive definite Q-tilde and the band
    machinery together behind the three evaluation entry points."""

    def __init__(self, data: SpatialDataset, hyper: Hyperparameters,
                 Q: PrecisionGraphMatrix, delta=None):
        self.data = data
        self.hyper = hyper
        self.Q = Q
        self.ctx = compute_mu_hat(data)
        self.q_tilde, self.delta = q_tilde(Q, delta)
        self.factory = CFactory(self.ctx, self.q_tilde)
        self.m = Q.m

    @property
    def n(self):
        return self.data.n_regions

    def factor(self, tau_h, tau_c) -> bl.BandMatrix:
        return self.factory.factor(tau_h, tau_c)

    def log_s1(self, tau_h, tau_c, factor=None) -> float:
        """Log of the Theta-integrated approximate marginal of (tau_h, tau_c),
        up to one additive constant shared across all evaluation points."""
        if factor is None:
            factor = self.factor(tau_h, tau_c)
        h = self.hyper
        log_det = bl.log_det_from_factor(factor)
        d = self.factory.d_perm
        quad = float(np.dot(d, bl.solve(factor, d))) / 8.0
        return (
            (self.n / 2.0 + h.alpha_h - 1.0) * np.log(tau_h)
            + (self.m / 2.0 + h.alpha_c - 1.0) * np.log(tau_c)
            - tau_h / h.beta_h
            - tau_c / h.beta_c
            - 0.5 * log_det
            + quad
        )

    def conditional_gaussian_params(self, tau_h, tau_c, factor=None):
        """Mean mu_N (original ordering) and the band Cholesky factor of the
        precision C at (tau_h, tau_c). C is never inverted explicitly."""
        if factor is None:
            factor = self.factor(tau_h, tau_c)
        mu_perm = bl.solve(factor, -0.5 * self.factory.d_perm)
        return self.factory.permutation.undo(mu_perm), factor

    def theta_hat_phi_hat(self, tau_h, tau_c, q_mat=None):
        """Closed-form maximizer of the approximate conditional, built from the
        N x N system rather than the 2N x 2N one; cross-validation path only.

        ``q_mat`` defaults to Q-tilde so the result matches mu_N exactly; pass
        ``self.Q.Q`` for the raw-Laplacian variant.
        """
        if not (tau_h > 0 and tau_c > 0):
            raise ApproximationError("tau_h and tau_c must be strictly positive")
        q = self.q_tilde if q_mat is None else q_mat
        q = q.toarray() if scipy.sparse.issparse(q) else np.asarray(q, dtype=np.float64)
        n = self.n
        v = np.diag(1.0 / self.ctx.v_inv_diag)
        system = np.eye(n) + (tau_c / tau_h) * q + tau_c * v @ q
        try:
            phi_hat = np.linalg.solve(system, self.ctx.mu_hat)
        except np.linalg.LinAlgError as exc:
            raise ApproximationError(f"singular system at tau_h={tau_h}, tau_c={tau_c}") from exc
        theta_hat = (tau_c / tau_h) * (q @ phi_hat)
        return theta_hat, phi_hat

    def quadratic_exponent(self, theta, phi, tau_h, tau_c) -> float:
        """Exponent of the Gaussian approximation (before integration):
        -0.5 [ (mu_hat - theta - phi)' V^-1 (mu_hat - theta - phi)
               + tau_h theta'theta + tau_c phi' Qt phi ].  Test surface for the
        completion-of-square identity."""
        r = self.ctx.mu_hat - theta - phi
        return -0.5 * (
            float(np.dot(r, self.ctx.v_inv_diag * r))
            + tau_h * float(np.dot(theta, theta))
            + tau_c * float(np.dot(phi, self.q_tilde.dot(phi)))
        )
