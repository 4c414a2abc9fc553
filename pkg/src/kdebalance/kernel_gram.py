"""Bandwidth selection and the Gaussian kernel Gram matrix.

For a Gaussian kernel the cross-integral of two kernel bumps has the
closed form

    W(i, j) = 2^-d pi^(-d/2) |H|^(1/2) exp(-(z_i - z_j)' H^-1 (z_i - z_j) / 4),

which depends only on the covariates and the bandwidth, never on the
partition. The Gram matrix is therefore built once and shared by every
criterion evaluation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, solve_triangular

from .data import CovariateTable
from .errors import DataError, DegenerateCovariates, TooFewUnits

log = logging.getLogger(__name__)

MAX_CONDITION = 1e12
RIDGE_SCALE = 1e-8


@dataclass(frozen=True)
class BandwidthMatrix:
    """Symmetric positive definite bandwidth with cached determinant and inverse.

    ``ridge`` is the jitter added to the covariance estimate (0 when none
    was needed); a nonzero value is surfaced in balance reports.
    """

    H: np.ndarray
    det_H: float
    inv_H: np.ndarray
    ridge: float = 0.0

    @property
    def ridged(self) -> bool:
        return self.ridge > 0.0

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    @classmethod
    def from_matrix(cls, H, ridge: float = 0.0) -> "BandwidthMatrix":
        H = np.atleast_2d(np.asarray(H, dtype=float))
        if H.shape[0] != H.shape[1]:
            raise DataError(f"bandwidth must be square, got {H.shape}")
        scale = max(np.abs(H).max(), np.finfo(float).tiny)
        if np.abs(H - H.T).max() > 1e-12 * scale:
            raise DataError("bandwidth matrix is not symmetric")
        H = 0.5 * (H + H.T)
        if np.linalg.eigvalsh(H).min() <= 0:
            raise DegenerateCovariates("bandwidth matrix is not positive definite")
        sign, logdet = np.linalg.slogdet(H)
        inv = np.linalg.inv(H)
        inv = 0.5 * (inv + inv.T)
        H.setflags(write=False)
        inv.setflags(write=False)
        return cls(H=H, det_H=float(math.exp(logdet)), inv_H=inv, ridge=float(ridge))


def sample_covariance(values: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.cov(values, rowvar=False, ddof=1))


def regularized_covariance(values: np.ndarray) -> tuple[np.ndarray, float]:
    """Sample covariance, with a ridge added when it is (near) singular."""
    sigma = sample_covariance(values)
    sigma = 0.5 * (sigma + sigma.T)
    d = sigma.shape[0]
    trace = float(np.trace(sigma))
    if not trace > 0:
        raise DegenerateCovariates("every covariate column is constant")
    eig = np.linalg.eigvalsh(sigma)
    if eig.min() > 0 and eig.max() / eig.min() <= MAX_CONDITION:
        return sigma, 0.0
    ridge = RIDGE_SCALE * trace / d
    sigma = sigma + ridge * np.eye(d)
    eig = np.linalg.eigvalsh(sigma)
    if eig.min() <= 0 or eig.max() / eig.min() > MAX_CONDITION:
        const = [k + 1 for k in range(d) if np.ptp(values[:, k]) == 0]
        detail = f"; constant columns: {const}" if const else ""
        raise DegenerateCovariates(f"covariance is singular even after ridge {ridge:.3g}{detail}")
    log.warning("near-singular covariance; added ridge %.3g to the diagonal", ridge)
    return sigma, ridge


def estimate_bandwidth(cov: CovariateTable, L: int) -> BandwidthMatrix:
    """Full-matrix rule of thumb ``H = n^(-2/(d+4)) * Sigma``.

    ``n = N // L`` is the per-group sample size of each KDE, while the
    covariance is estimated from all ``N`` units so that ``H`` (and hence
    the Gram matrix) does not depend on the partition.
    """
    N, d = cov.values.shape
    if L < 2:
        raise DataError(f"need at least 2 groups, got L={L}")
    if N < d + 2:
        raise TooFewUnits(f"need N >= d + 2 = {d + 2} units to estimate the covariance, got {N}")
    n = N // L
    if n < 1:
        raise TooFewUnits(f"N={N} units cannot fill L={L} groups")
    sigma, ridge = regularized_covariance(cov.values)
    H = n ** (-2.0 / (d + 4)) * sigma
    return BandwidthMatrix.from_matrix(H, ridge=ridge)


@dataclass(frozen=True)
class KernelGram:
    W: np.ndarray
    w: np.ndarray
    det_H: float
    bandwidth: BandwidthMatrix | None = None

    @property
    def n_units(self) -> int:
        return self.W.shape[0]

    @property
    def total(self) -> float:
        return float(self.w.sum())


def gram_diagonal(det_H: float, d: int) -> float:
    return math.sqrt(det_H) * 2.0 ** (-d) * math.pi ** (-d / 2)


def build_gram(cov: CovariateTable, bw: BandwidthMatrix) -> KernelGram:
    z = cov.values
    N, d = z.shape
    if bw.dim != d:
        raise DataError(f"bandwidth is {bw.dim}-dimensional but covariates have d={d}")
    chol, _ = cho_factor(bw.H, lower=True)
    chol = np.tril(chol)
    c = gram_diagonal(bw.det_H, d)

    i, j = np.triu_indices(N, k=1)
    diff = z[i] - z[j]
    white = solve_triangular(chol, diff.T, lower=True)
    quad = np.einsum("kp,kp->p", white, white)

    W = np.zeros((N, N))
    W[i, j] = c * np.exp(-0.25 * quad)
    W = W + W.T
    np.fill_diagonal(W, c)
    w = W.sum(axis=1)
    W.setflags(write=False)
    w.setflags(write=False)
    return KernelGram(W=W, w=w, det_H=bw.det_H, bandwidth=bw)


def gram_from_covariates(cov: CovariateTable, L: int) -> KernelGram:
    return build_gram(cov, estimate_bandwidth(cov, L))
