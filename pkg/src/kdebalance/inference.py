"""Difference-in-mean estimation and the bootstrap sharp-null test."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np

from .criterion import Partition
from .data import CovariateTable
from .errors import DataError, DimensionMismatch, EmptyLevel, KDEBalanceError, NotBinaryPartition, NumericalError
from .kernel_gram import gram_from_covariates
from .solvers import SolverConfig, kde_partition


@dataclass(frozen=True)
class Design:
    """A partition plus the treatment level given to each group.

    ``level_of_group[j]`` is the level of group ``j``; for two groups level
    1 is the treatment and level 0 the control.
    """

    partition: Partition
    level_of_group: np.ndarray

    def __post_init__(self):
        levels = np.array(self.level_of_group, dtype=np.int64).ravel()
        if sorted(levels.tolist()) != list(range(self.partition.L)):
            raise DataError(f"level_of_group must permute 0..{self.partition.L - 1}, got {levels.tolist()}")
        levels.setflags(write=False)
        object.__setattr__(self, "level_of_group", levels)

    @property
    def x(self) -> np.ndarray:
        return self.level_of_group[self.partition.g]

    @classmethod
    def from_levels(cls, group: np.ndarray, level: np.ndarray) -> "Design":
        """Rebuild a design from per-unit group and level columns."""
        group = np.asarray(group, dtype=np.int64)
        level = np.asarray(level, dtype=np.int64)
        part = Partition(group, int(group.max()) + 1)
        mapping = np.full(part.L, -1, dtype=np.int64)
        for j in range(part.L):
            lv = np.unique(level[group == j])
            if lv.size != 1:
                raise DataError(f"units of group {j} carry mixed levels {lv.tolist()}")
            mapping[j] = lv[0]
        return cls(part, mapping)


def random_design(part: Partition, rng) -> Design:
    """Assign the L levels to the L groups uniformly at random."""
    rng = np.random.default_rng(rng)
    return Design(part, rng.permutation(part.L))


def diff_in_mean(y, design: Design, level_a: int = 1, level_b: int = 0) -> float:
    """Mean response at ``level_a`` minus mean response at ``level_b``."""
    y = np.asarray(y, dtype=float)
    x = design.x
    if y.shape != x.shape:
        raise DimensionMismatch(f"{y.size} responses for {x.size} units")
    in_a = x == level_a
    in_b = x == level_b
    if not in_a.any():
        raise EmptyLevel(f"no units at level {level_a}")
    if not in_b.any():
        raise EmptyLevel(f"no units at level {level_b}")
    return float(y[in_a].mean() - y[in_b].mean())


def level_assignment_unbiasedness_check(h_values, partition: Partition, alpha: float) -> float:
    """Average estimate over both level assignments of a fixed two-group split,
    with noiseless responses ``h + alpha * x``. Equals ``alpha`` for any split."""
    if partition.L != 2:
        raise NotBinaryPartition("unbiasedness check needs L=2")
    h = np.asarray(h_values, dtype=float)
    total = 0.0
    for levels in ((0, 1), (1, 0)):
        design = Design(partition, np.array(levels))
        total += diff_in_mean(h + alpha * design.x, design)
    return total / 2.0


@dataclass
class TestResult:
    alpha_hat: float
    p_value: float
    T: int
    null_stats: np.ndarray
    seed: int | None = None

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha_hat": self.alpha_hat,
            "p_value": self.p_value,
            "T": self.T,
            "null_stats": np.asarray(self.null_stats).tolist(),
            "seed": self.seed,
        }


def bootstrap_p_value(alpha_hat: float, null_stats) -> float:
    null_stats = np.asarray(null_stats, dtype=float)
    exceed = int(np.count_nonzero(np.abs(null_stats) >= abs(alpha_hat)))
    return (1 + exceed) / (1 + null_stats.size)


def bootstrap_test(
    cov: CovariateTable,
    y,
    design: Design,
    T: int,
    seed: int,
    level_a: int = 1,
    level_b: int = 0,
    full_budget: bool = False,
    threads: int = 1,
) -> TestResult:
    """Bootstrap test of the sharp null of no treatment effect.

    Each replicate resamples units with replacement, carrying their observed
    responses, rebuilds the bandwidth and Gram matrix on the resampled
    covariates, re-partitions them with the KDE solver, assigns levels at
    random and records the difference in means. The p-value is
    ``(1 + #{|a_t| >= |a|}) / (1 + T)``.

    Inner annealing (only used above the exact-search limit) runs 2 chains
    of ``20 N`` proposals unless ``full_budget`` is set.
    """
    if T < 1:
        raise DataError("bootstrap needs T >= 1")
    y = np.asarray(y, dtype=float)
    N = cov.n_units
    if y.size != N:
        raise DimensionMismatch(f"{y.size} responses for {N} units")
    alpha_hat = diff_in_mean(y, design, level_a, level_b)
    sizes = design.partition.group_sizes
    L = design.partition.L
    children = np.random.SeedSequence(int(seed)).spawn(T)

    def replicate(t):
        rng = np.random.default_rng(children[t])
        idx = rng.integers(0, N, size=N)
        inner_seed = int(rng.integers(0, 2**63 - 1))
        cfg = SolverConfig(mode="auto", seed=inner_seed)
        if not full_budget:
            cfg = cfg.with_anneal(chains=2, iters_per_chain=20 * N)
        try:
            gram = gram_from_covariates(cov.take(idx), L)
            part = kde_partition(gram, sizes, L, cfg)
        except KDEBalanceError as exc:
            kind = DataError if isinstance(exc, DataError) else NumericalError
            raise kind(f"bootstrap replicate {t + 1}/{T}: {exc}") from exc
        return diff_in_mean(y[idx], random_design(part, rng), level_a, level_b)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stats = list(pool.map(replicate, range(T)))
    else:
        stats = [replicate(t) for t in range(T)]
    null_stats = np.array(stats)
    return TestResult(alpha_hat, bootstrap_p_value(alpha_hat, null_stats), T, null_stats, seed)
