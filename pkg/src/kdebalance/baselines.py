"""Complete randomization and Mahalanobis rerandomization."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .criterion import Partition
from .data import CovariateTable
from .errors import DataError, NotBinaryPartition, SizeMismatch
from .kernel_gram import regularized_covariance

log = logging.getLogger(__name__)


def _template(N: int, sizes) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.int64).ravel()
    if sizes.size < 2 or (sizes < 1).any() or sizes.sum() != N:
        raise SizeMismatch(f"group sizes {sizes.tolist()} do not split N={N} units")
    return np.repeat(np.arange(sizes.size), sizes)


def _draw(template: np.ndarray, rng: np.random.Generator, count: int) -> np.ndarray:
    # argsort of i.i.d. uniforms is a uniform random permutation
    keys = rng.random((count, template.size))
    return template[np.argsort(keys, axis=1, kind="stable")]


def randomize(N: int, sizes, seed) -> Partition:
    """Uniformly random partition with the given group sizes."""
    template = _template(N, sizes)
    rng = np.random.default_rng(seed)
    return Partition(_draw(template, rng, 1)[0], int(template.max()) + 1)


@dataclass(frozen=True)
class RerandomizeConfig:
    acceptance_prob: float = 0.01
    max_draws: int = 1_000_000
    seed: int = 0
    batch: int = 512

    def __post_init__(self):
        if not 0 < self.acceptance_prob <= 1:
            raise DataError("acceptance_prob must lie in (0, 1]")
        if self.max_draws < 1:
            raise DataError("max_draws must be >= 1")


class _Mahalanobis:
    """Mahalanobis statistic for many 0/1 assignments of one covariate table."""

    def __init__(self, cov: CovariateTable):
        z = cov.values
        sigma, self.ridge = regularized_covariance(z)
        self.z = z
        self.prec = np.linalg.inv(sigma)
        self.N = z.shape[0]

    def __call__(self, G: np.ndarray) -> np.ndarray:
        G = np.atleast_2d(G).astype(float)
        n1 = G.sum(axis=1)
        n0 = self.N - n1
        s1 = G @ self.z
        diff = s1 / n1[:, None] - (self.z.sum(axis=0) - s1) / n0[:, None]
        quad = np.einsum("bk,kl,bl->b", diff, self.prec, diff)
        return n0 * n1 / self.N * quad


def mahalanobis(cov: CovariateTable, part: Partition) -> float:
    """``(n0 n1 / N) * dz' Sigma^-1 dz`` with Sigma the covariance of all units."""
    if part.L != 2:
        raise NotBinaryPartition(f"Mahalanobis balance is defined for L=2, got L={part.L}")
    if part.n_units != cov.n_units:
        raise DataError(f"partition has {part.n_units} units but the data has {cov.n_units}")
    return float(_Mahalanobis(cov)(part.g)[0])


@dataclass(frozen=True)
class RerandomizeResult:
    partition: Partition
    statistic: float
    threshold: float
    draws: int
    exhausted: bool


def acceptance_threshold(acceptance_prob: float, d: int) -> float:
    if acceptance_prob >= 1:
        return np.inf
    return float(stats.chi2.ppf(acceptance_prob, d))


def rerandomize_detail(cov: CovariateTable, sizes, cfg: RerandomizeConfig) -> RerandomizeResult:
    N = cov.n_units
    template = _template(N, sizes)
    if template.max() != 1:
        raise NotBinaryPartition("rerandomization supports L=2 only")
    threshold = acceptance_threshold(cfg.acceptance_prob, cov.n_covariates)
    stat = _Mahalanobis(cov)
    rng = np.random.default_rng(cfg.seed)
    best_m, best_g = np.inf, None
    drawn = 0
    while drawn < cfg.max_draws:
        count = min(cfg.batch, cfg.max_draws - drawn)
        G = _draw(template, rng, count)
        M = stat(G)
        ok = np.flatnonzero(M <= threshold)
        if ok.size:
            k = ok[0]
            return RerandomizeResult(Partition(G[k], 2), float(M[k]), threshold, drawn + k + 1, False)
        k = int(np.argmin(M))
        if M[k] < best_m:
            best_m, best_g = float(M[k]), G[k]
        drawn += count
    log.warning("rerandomization hit max_draws=%d; returning the best draw", cfg.max_draws)
    return RerandomizeResult(Partition(best_g, 2), best_m, threshold, drawn, True)


def rerandomize(cov: CovariateTable, sizes, cfg: RerandomizeConfig | None = None) -> Partition:
    """First complete randomization whose Mahalanobis statistic falls below the
    ``acceptance_prob`` quantile of chi-square(d)."""
    cfg = RerandomizeConfig() if cfg is None else cfg
    return rerandomize_detail(cov, sizes, cfg).partition
