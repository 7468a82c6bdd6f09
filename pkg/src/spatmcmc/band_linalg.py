"""Symmetric band-matrix engine: bandwidth-reducing ordering, band Cholesky,
log-determinants, solves and correlated Gaussian draws.

Storage convention is LAPACK lower-band-by-diagonals: ``bands[d, j] = A[j + d, j]``
for diagonal offset ``d`` in ``0..bandwidth``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.sparse.csgraph import reverse_cuthill_mckee


class BandLinalgError(Exception):
    pass


class IndefiniteMatrixError(BandLinalgError):
    """Band Cholesky hit a nonpositive pivot."""

    def __init__(self, pivot_index, message=None):
        self.pivot_index = pivot_index
        super().__init__(message or f"matrix numerically indefinite at pivot {pivot_index}")


class DimensionMismatchError(BandLinalgError):
    pass


@dataclass(frozen=True)
class Permutation:
    """Bijective reordering of {0..n-1}: ``permuted[i] = original[forward[i]]``."""

    forward: np.ndarray
    inverse: np.ndarray = field(default=None)

    def __post_init__(self):
        fwd = np.asarray(self.forward, dtype=np.intp)
        object.__setattr__(self, "forward", fwd)
        inv = self.inverse
        if inv is None:
            inv = np.argsort(fwd)
        object.__setattr__(self, "inverse", np.asarray(inv, dtype=np.intp))
        if not np.array_equal(self.forward[self.inverse], np.arange(len(fwd))):
            raise BandLinalgError("forward and inverse maps are not mutual inverses")

    @property
    def order(self):
        return len(self.forward)

    def apply(self, v):
        return np.asarray(v)[..., self.forward]

    def undo(self, v):
        return np.asarray(v)[..., self.inverse]

    def permute_sparse(self, a):
        a = scipy.sparse.csr_matrix(a)
        return a[self.forward, :][:, self.forward]


def identity_permutation(n):
    idx = np.arange(n)
    return Permutation(idx, idx)


def rcm_ordering(pattern) -> Permutation:
    """Reverse Cuthill-McKee ordering for a symmetric sparsity pattern."""
    pattern = scipy.sparse.csr_matrix(pattern)
    if pattern.shape[0] != pattern.shape[1]:
        raise DimensionMismatchError("pattern must be square")
    forward = np.asarray(reverse_cuthill_mckee(pattern, symmetric_mode=True), dtype=np.intp)
    return Permutation(forward)


def pattern_bandwidth(pattern) -> int:
    coo = scipy.sparse.coo_matrix(pattern)
    if coo.nnz == 0:
        return 0
    return int(np.max(np.abs(coo.row - coo.col)))


@dataclass
class BandMatrix:
    """Symmetric (or lower-triangular factor) matrix stored by lower diagonals."""

    order: int
    bandwidth: int
    bands: np.ndarray  # shape (bandwidth + 1, order)

    def __post_init__(self):
        self.bands = np.ascontiguousarray(self.bands, dtype=np.float64)
        if self.bands.shape != (self.bandwidth + 1, self.order):
            raise DimensionMismatchError(
                f"band storage shape {self.bands.shape} does not match "
                f"order={self.order}, bandwidth={self.bandwidth}"
            )

    @classmethod
    def from_dense(cls, a, bandwidth=None):
        a = np.asarray(a, dtype=np.float64)
        n = a.shape[0]
        if bandwidth is None:
            nz = np.nonzero(a)
            bandwidth = int(np.max(np.abs(nz[0] - nz[1]))) if nz[0].size else 0
        bands = np.zeros((bandwidth + 1, n))
        for d in range(bandwidth + 1):
            bands[d, : n - d] = np.diagonal(a, -d)
        return cls(n, bandwidth, bands)

    @classmethod
    def from_sparse(cls, a, bandwidth=None):
        a = scipy.sparse.coo_matrix(a)
        n = a.shape[0]
        if bandwidth is None:
            bandwidth = pattern_bandwidth(a)
        bands = np.zeros((bandwidth + 1, n))
        mask = a.row >= a.col
        np.add.at(bands, (a.row[mask] - a.col[mask], a.col[mask]), a.data[mask])
        return cls(n, bandwidth, bands)

    def to_dense(self):
        a = np.zeros((self.order, self.order))
        for d in range(self.bandwidth + 1):
            idx = np.arange(self.order - d)
            a[idx + d, idx] = self.bands[d, : self.order - d]
        return a

    def to_dense_symmetric(self):
        l = self.to_dense()
        return l + np.tril(l, -1).T

    def diagonal(self):
        return self.bands[0]


def band_cholesky(a: BandMatrix) -> BandMatrix:
    """Lower band Cholesky factor L with L L^T = A (symmetric part of ``a``)."""
    try:
        cb = scipy.linalg.cholesky_banded(a.bands, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        m = re.search(r"(\d+)", str(exc))
        pivot = int(m.group(1)) - 1 if m else None
        raise IndefiniteMatrixError(pivot) from exc
    return BandMatrix(a.order, a.bandwidth, cb)


def log_det_from_factor(factor: BandMatrix) -> float:
    return 2.0 * float(np.sum(np.log(factor.bands[0])))


def solve(factor: BandMatrix, rhs):
    """Solve A x = rhs given the band Cholesky factor of A."""
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != factor.order:
        raise DimensionMismatchError(f"rhs length {rhs.shape[0]} != order {factor.order}")
    return scipy.linalg.cho_solve_banded((factor.bands, True), rhs, check_finite=False)


def _factor_transpose_upper(factor: BandMatrix):
    # Upper-band storage of L^T for use with solve_banded((0, b), ...).
    n, b = factor.order, factor.bandwidth
    ub = np.zeros((b + 1, n))
    for d in range(b + 1):
        ub[b - d, d:] = factor.bands[d, : n - d]
    return ub


def solve_factor_transpose(factor: BandMatrix, rhs):
    """Solve L^T x = rhs for the lower-band factor L."""
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != factor.order:
        raise DimensionMismatchError(f"rhs length {rhs.shape[0]} != order {factor.order}")
    ub = _factor_transpose_upper(factor)
    return scipy.linalg.solve_banded((0, factor.bandwidth), ub, rhs, check_finite=False)


def matvec_factor_transpose(factor: BandMatrix, x):
    """Compute y = L^T x for the lower-band factor L."""
    x = np.asarray(x, dtype=np.float64)
    n, b = factor.order, factor.bandwidth
    if x.shape[0] != n:
        raise DimensionMismatchError(f"vector length {x.shape[0]} != order {n}")
    y = np.zeros(n)
    for d in range(b + 1):
        y[: n - d] += factor.bands[d, : n - d] * x[d:]
    return y


def sample_gaussian(factor: BandMatrix, rng) -> np.ndarray:
    """Zero-mean Gaussian draw with precision L L^T (covariance (L L^T)^{-1})."""
    z = rng.standard_normal(factor.order)
    return solve_factor_transpose(factor, z)
